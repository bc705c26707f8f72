#include "dmc/console.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "dmc/rng.hpp"

namespace dmc::console {

using CP = ChannelParams;

const std::array<ParamSpec, CP::kCount> kParamSpecs = {{
    {"gain_db", -24.0, 24.0, Scale::linear, &CP::gain_db},
    {"polarity", -1.0, 1.0, Scale::binary, &CP::polarity},
    {"eq_ls_gain_db", -24.0, 24.0, Scale::linear, &CP::eq_ls_gain_db},
    {"eq_ls_freq", 20.0, 1000.0, Scale::log, &CP::eq_ls_freq},
    {"eq_b1_gain_db", -24.0, 24.0, Scale::linear, &CP::eq_b1_gain_db},
    {"eq_b1_freq", 82.0, 3900.0, Scale::log, &CP::eq_b1_freq},
    {"eq_b1_q", 0.1, 10.0, Scale::linear, &CP::eq_b1_q},
    {"eq_b2_gain_db", -24.0, 24.0, Scale::linear, &CP::eq_b2_gain_db},
    {"eq_b2_freq", 180.0, 8600.0, Scale::log, &CP::eq_b2_freq},
    {"eq_b2_q", 0.1, 10.0, Scale::linear, &CP::eq_b2_q},
    {"eq_b3_gain_db", -24.0, 24.0, Scale::linear, &CP::eq_b3_gain_db},
    {"eq_b3_freq", 220.0, 10000.0, Scale::log, &CP::eq_b3_freq},
    {"eq_b3_q", 0.1, 10.0, Scale::linear, &CP::eq_b3_q},
    {"eq_hs_gain_db", -24.0, 24.0, Scale::linear, &CP::eq_hs_gain_db},
    {"eq_hs_freq", 2000.0, 16000.0, Scale::log, &CP::eq_hs_freq},
    {"comp_threshold_db", -60.0, 0.0, Scale::linear, &CP::comp_threshold_db},
    {"comp_ratio", 1.0, 20.0, Scale::linear, &CP::comp_ratio},
    {"comp_attack_ms", 0.1, 100.0, Scale::log, &CP::comp_attack_ms},
    {"comp_release_ms", 10.0, 1000.0, Scale::log, &CP::comp_release_ms},
    {"comp_makeup_db", 0.0, 24.0, Scale::linear, &CP::comp_makeup_db},
    {"rev_room_size", 0.0, 1.0, Scale::linear, &CP::rev_room_size},
    {"rev_damping", 0.0, 1.0, Scale::linear, &CP::rev_damping},
    {"rev_wet", 0.0, 1.0, Scale::linear, &CP::rev_wet},
    {"rev_dry", 0.0, 1.0, Scale::linear, &CP::rev_dry},
    {"fader_db", -80.0, 12.0, Scale::linear, &CP::fader_db},
    {"pan", 0.0, 1.0, Scale::linear, &CP::pan},
}};

double normalize_value(const ParamSpec &spec, double v) {
  switch (spec.scale) {
  case Scale::linear:
    return (v - spec.lo) / (spec.hi - spec.lo);
  case Scale::log:
    return std::log(v / spec.lo) / std::log(spec.hi / spec.lo);
  case Scale::binary:
    return v > 0.0 ? 1.0 : 0.0;
  }
  return 0.0;
}

double denormalize_value(const ParamSpec &spec, double u) {
  switch (spec.scale) {
  case Scale::linear:
    return spec.lo + u * (spec.hi - spec.lo);
  case Scale::log:
    return spec.lo * std::exp(u * std::log(spec.hi / spec.lo));
  case Scale::binary:
    return u >= 0.5 ? 1.0 : -1.0;
  }
  return 0.0;
}

std::array<double, CP::kCount> ChannelParams::values() const {
  std::array<double, kCount> out{};
  for (std::size_t i = 0; i < kCount; ++i)
    out[i] = this->*kParamSpecs[i].member;
  return out;
}

ChannelParams ChannelParams::from_values(std::span<const double> v) {
  if (v.size() != kCount)
    throw std::invalid_argument("ChannelParams: expected 26 values");
  ChannelParams p;
  for (std::size_t i = 0; i < kCount; ++i)
    p.*kParamSpecs[i].member = v[i];
  return p;
}

std::array<double, CP::kCount> ChannelParams::normalized() const {
  std::array<double, kCount> out{};
  for (std::size_t i = 0; i < kCount; ++i)
    out[i] = normalize_value(kParamSpecs[i], this->*kParamSpecs[i].member);
  return out;
}

ChannelParams ChannelParams::from_normalized(std::span<const double> u) {
  if (u.size() != kCount)
    throw std::invalid_argument("ChannelParams: expected 26 normalized values");
  ChannelParams p;
  for (std::size_t i = 0; i < kCount; ++i)
    p.*kParamSpecs[i].member = denormalize_value(kParamSpecs[i], u[i]);
  return p;
}

void ChannelParams::validate() const {
  for (const auto &spec : kParamSpecs) {
    const double v = this->*spec.member;
    const bool ok = spec.scale == Scale::binary ? (v == 1.0 || v == -1.0)
                                                : (std::isfinite(v) && v >= spec.lo && v <= spec.hi);
    if (!ok)
      throw std::out_of_range("parameter " + std::string(spec.name) + " = " +
                              std::to_string(v) + " outside its range");
  }
}

ChannelParams random_params(std::uint64_t seed, RandomMode mode) {
  Rng rng(seed);
  ChannelParams p;
  if (mode == RandomMode::basic) {
    p.gain_db = uniform(rng, -12.0, 12.0);
    p.pan = uniform(rng, 0.0, 1.0);
    return p;
  }
  std::array<double, CP::kCount> u{};
  for (auto &v : u)
    v = uniform(rng);
  return ChannelParams::from_normalized(u);
}

// ---------------------------------------------------------------------------
// Biquads

std::complex<double> Biquad::response(double omega) const {
  const std::complex<double> z1 = std::polar(1.0, -omega);
  const std::complex<double> z2 = z1 * z1;
  return (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2);
}

Biquad eq_coefficients(EqKind kind, double gain_db, double freq_hz, double q,
                       int sample_rate) {
  if (!(freq_hz > 0.0) || freq_hz >= sample_rate / 2.0)
    throw std::domain_error("EQ frequency " + std::to_string(freq_hz) +
                            " Hz must lie strictly between 0 and Nyquist");
  if (gain_db == 0.0)
    return {};
  if (kind == EqKind::peak && !(q > 0.0))
    throw std::domain_error("EQ Q must be positive");

  const double A = std::pow(10.0, gain_db / 40.0);
  const double w0 = 2.0 * std::numbers::pi * freq_hz / sample_rate;
  const double cw = std::cos(w0);
  const double sw = std::sin(w0);
  double b0, b1, b2, a0, a1, a2;
  if (kind == EqKind::peak) {
    const double alpha = sw / (2.0 * q);
    b0 = 1.0 + alpha * A;
    b1 = -2.0 * cw;
    b2 = 1.0 - alpha * A;
    a0 = 1.0 + alpha / A;
    a1 = -2.0 * cw;
    a2 = 1.0 - alpha / A;
  } else {
    const double alpha = sw / 2.0 * std::sqrt(2.0); // shelf slope S = 1
    const double k = 2.0 * std::sqrt(A) * alpha;
    if (kind == EqKind::low_shelf) {
      b0 = A * ((A + 1) - (A - 1) * cw + k);
      b1 = 2 * A * ((A - 1) - (A + 1) * cw);
      b2 = A * ((A + 1) - (A - 1) * cw - k);
      a0 = (A + 1) + (A - 1) * cw + k;
      a1 = -2 * ((A - 1) + (A + 1) * cw);
      a2 = (A + 1) + (A - 1) * cw - k;
    } else {
      b0 = A * ((A + 1) + (A - 1) * cw + k);
      b1 = -2 * A * ((A - 1) + (A + 1) * cw);
      b2 = A * ((A + 1) + (A - 1) * cw - k);
      a0 = (A + 1) - (A - 1) * cw + k;
      a1 = 2 * ((A - 1) - (A + 1) * cw);
      a2 = (A + 1) - (A - 1) * cw - k;
    }
  }
  return {b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0};
}

void BiquadFilter::process(std::span<double> x) {
  if (c_.is_identity())
    return;
  const auto [b0, b1, b2, a1, a2] = c_;
  double s1 = s1_, s2 = s2_;
  for (double &v : x) {
    const double in = v;
    const double y = b0 * in + s1;
    s1 = b1 * in - a1 * y + s2;
    s2 = b2 * in - a2 * y;
    v = y;
  }
  s1_ = s1;
  s2_ = s2;
}

// ---------------------------------------------------------------------------
// Compressor

namespace {
double one_pole_coeff(double time_ms, int sample_rate) {
  return std::exp(-1.0 / (sample_rate * time_ms * 1e-3));
}
constexpr double kDetectorFloor = 1e-12;
} // namespace

Compressor::Compressor(const CompressorSettings &s, int sample_rate)
    : s_(s), attack_coeff_(one_pole_coeff(s.attack_ms, sample_rate)),
      release_coeff_(one_pole_coeff(s.release_ms, sample_rate)) {
  if (!(s.ratio >= 1.0))
    throw std::domain_error("compressor ratio must be >= 1");
}

double Compressor::gain_db_for_level(double level_db) const {
  double reduction = 0.0;
  if (s_.ratio != 1.0 && level_db > s_.threshold_db)
    reduction = (s_.threshold_db + (level_db - s_.threshold_db) / s_.ratio) - level_db;
  return reduction + s_.makeup_db;
}

void Compressor::process(std::span<double> x, std::span<double> gain_trace) {
  const double makeup_gain = db_to_linear(s_.makeup_db);
  double env = envelope_;
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double level = std::abs(x[n]);
    const double coeff = level > env ? attack_coeff_ : release_coeff_;
    env = coeff * env + (1.0 - coeff) * level;
    double g_db = s_.makeup_db;
    double g = makeup_gain;
    if (s_.ratio != 1.0 && env > kDetectorFloor) {
      const double level_db = 20.0 * std::log10(env);
      if (level_db > s_.threshold_db) {
        g_db = gain_db_for_level(level_db);
        g = db_to_linear(g_db);
      }
    }
    if (!gain_trace.empty())
      gain_trace[n] = g_db;
    x[n] *= g;
  }
  envelope_ = env;
}

// ---------------------------------------------------------------------------
// Reverb

Reverb::Reverb(const ReverbSettings &s, int sample_rate)
    : s_(s), feedback_(kRoomScale * s.room_size + kRoomOffset), damp1_(kDampScale * s.damping),
      damp2_(1.0 - kDampScale * s.damping) {
  const double scale = sample_rate / 44100.0;
  auto scaled = [scale](std::size_t n) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(n * scale)));
  };
  for (std::size_t i = 0; i < combs_.size(); ++i)
    combs_[i].buffer.assign(scaled(kCombTuning[i]), 0.0);
  for (std::size_t i = 0; i < allpasses_.size(); ++i)
    allpasses_[i].buffer.assign(scaled(kAllpassTuning[i]), 0.0);
}

void Reverb::reset() {
  for (auto &c : combs_) {
    std::fill(c.buffer.begin(), c.buffer.end(), 0.0);
    c.index = 0;
    c.filter_store = 0.0;
  }
  for (auto &a : allpasses_) {
    std::fill(a.buffer.begin(), a.buffer.end(), 0.0);
    a.index = 0;
  }
}

void Reverb::process(std::span<double> x) {
  const bool wet = s_.wet != 0.0;
  for (double &v : x) {
    if (!wet) {
      // settings are fixed for the lifetime of the processor, so the tail
      // state is never audible
      v = s_.dry * v;
      continue;
    }
    const double in = v * kFixedGain;
    double acc = 0.0;
    for (auto &c : combs_) {
      const double out = c.buffer[c.index];
      c.filter_store = out * damp2_ + c.filter_store * damp1_;
      c.buffer[c.index] = in + c.filter_store * feedback_;
      if (++c.index == c.buffer.size())
        c.index = 0;
      acc += out;
    }
    for (auto &a : allpasses_) {
      const double buf = a.buffer[a.index];
      const double out = buf - acc;
      a.buffer[a.index] = acc + buf * kAllpassFeedback;
      if (++a.index == a.buffer.size())
        a.index = 0;
      acc = out;
    }
    v = s_.dry * v + s_.wet * kWetScale * acc;
  }
}

// ---------------------------------------------------------------------------
// Chains

ProcessorChain::ProcessorChain(const ChannelParams &p, int sr)
    : eq_{BiquadFilter(eq_coefficients(EqKind::low_shelf, p.eq_ls_gain_db, p.eq_ls_freq, 0.707, sr)),
          BiquadFilter(eq_coefficients(EqKind::peak, p.eq_b1_gain_db, p.eq_b1_freq, p.eq_b1_q, sr)),
          BiquadFilter(eq_coefficients(EqKind::peak, p.eq_b2_gain_db, p.eq_b2_freq, p.eq_b2_q, sr)),
          BiquadFilter(eq_coefficients(EqKind::peak, p.eq_b3_gain_db, p.eq_b3_freq, p.eq_b3_q, sr)),
          BiquadFilter(eq_coefficients(EqKind::high_shelf, p.eq_hs_gain_db, p.eq_hs_freq, 0.707, sr))},
      comp_(CompressorSettings::from(p), sr), reverb_(ReverbSettings::from(p), sr) {}

void ProcessorChain::reset() {
  for (auto &f : eq_)
    f.reset();
  comp_.reset();
  reverb_.reset();
}

void ProcessorChain::process(std::span<double> x) {
  for (auto &f : eq_)
    f.process(x);
  comp_.process(x);
  reverb_.process(x);
}

ChannelStrip::ChannelStrip(const ChannelParams &p, int sample_rate)
    : p_(p), input_gain_(p.polarity * db_to_linear(p.gain_db)), fader_(db_to_linear(p.fader_db)),
      pan_left_(std::cos(p.pan * kHalfPi)), pan_right_(std::sin(p.pan * kHalfPi)),
      chain_(p, sample_rate) {
  p.validate();
}

void ChannelStrip::process(std::span<const double> in, std::span<double> left,
                           std::span<double> right) {
  if (left.size() != in.size() || right.size() != in.size())
    throw std::invalid_argument("ChannelStrip: output size mismatch");
  scratch_.resize(in.size());
  for (std::size_t n = 0; n < in.size(); ++n)
    scratch_[n] = input_gain_ * in[n];
  chain_.process(scratch_);
  for (std::size_t n = 0; n < in.size(); ++n) {
    const double v = scratch_[n] * fader_;
    left[n] = pan_left_ * v;
    right[n] = pan_right_ * v;
  }
}

// ---------------------------------------------------------------------------
// Buffer-level operations

namespace {
void require_mono(const AudioBuffer &x, const char *what) {
  if (x.channels() != 1)
    throw std::invalid_argument(std::string(what) + ": mono input required");
}
} // namespace

AudioBuffer apply_gain(const AudioBuffer &x, double gain_db, double polarity) {
  AudioBuffer y = x;
  const double g = polarity * db_to_linear(gain_db);
  for (std::size_t c = 0; c < y.channels(); ++c)
    for (double &v : y.channel(c))
      v = g * v;
  return y;
}

AudioBuffer compressor_process(const AudioBuffer &x, const CompressorSettings &s) {
  require_mono(x, "compressor_process");
  AudioBuffer y = x;
  Compressor(s, x.sample_rate()).process(y.channel(0));
  return y;
}

AudioBuffer reverb_process(const AudioBuffer &x, const ReverbSettings &s) {
  require_mono(x, "reverb_process");
  AudioBuffer y = x;
  Reverb(s, x.sample_rate()).process(y.channel(0));
  return y;
}

AudioBuffer pan_stereo(const AudioBuffer &x, double pan) {
  require_mono(x, "pan_stereo");
  if (!(pan >= 0.0 && pan <= 1.0))
    throw std::out_of_range("pan must lie in [0, 1]");
  AudioBuffer y(2, x.frames(), x.sample_rate());
  const double gl = std::cos(pan * kHalfPi);
  const double gr = std::sin(pan * kHalfPi);
  auto in = x.channel(0);
  auto l = y.channel(0);
  auto r = y.channel(1);
  for (std::size_t n = 0; n < in.size(); ++n) {
    l[n] = gl * in[n];
    r[n] = gr * in[n];
  }
  return y;
}

AudioBuffer processor_chain_process(const AudioBuffer &x, const ChannelParams &p) {
  require_mono(x, "processor_chain_process");
  p.validate();
  AudioBuffer y = x;
  ProcessorChain(p, x.sample_rate()).process(y.channel(0));
  y.check_finite();
  return y;
}

AudioBuffer channel_process(const AudioBuffer &x, const ChannelParams &p) {
  require_mono(x, "channel_process");
  AudioBuffer y(2, x.frames(), x.sample_rate());
  ChannelStrip(p, x.sample_rate()).process(x.channel(0), y.channel(0), y.channel(1));
  y.check_finite();
  return y;
}

AudioBuffer console_mix(std::span<const AudioBuffer> tracks, std::span<const ChannelParams> params) {
  if (tracks.empty())
    throw std::invalid_argument("console_mix: no tracks");
  if (tracks.size() != params.size())
    throw std::invalid_argument("console_mix: one parameter record per track required");
  const std::size_t frames = tracks[0].frames();
  const int sr = tracks[0].sample_rate();
  for (const auto &t : tracks) {
    if (t.frames() != frames)
      throw std::invalid_argument("console_mix: track length mismatch");
    if (t.sample_rate() != sr)
      throw std::invalid_argument("console_mix: sample rate mismatch");
  }
  std::vector<AudioBuffer> outs;
  outs.reserve(tracks.size());
  for (std::size_t i = 0; i < tracks.size(); ++i)
    outs.push_back(channel_process(tracks[i], params[i]));

  AudioBuffer mix(2, frames, sr);
  std::vector<double> column(tracks.size());
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t n = 0; n < frames; ++n) {
      for (std::size_t i = 0; i < outs.size(); ++i)
        column[i] = outs[i].at(c, n);
      mix.at(c, n) = order_invariant_sum(column);
    }
  }
  return mix;
}

// ---------------------------------------------------------------------------
// Parameter files

std::string params_to_json(std::span<const NamedParams> tracks, int indent) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = kParamsSchemaVersion;
  auto &arr = doc["tracks"] = nlohmann::ordered_json::array();
  for (const auto &t : tracks) {
    nlohmann::ordered_json obj;
    obj["name"] = t.name;
    for (const auto &spec : kParamSpecs)
      obj[std::string(spec.name)] = t.params.*spec.member;
    arr.push_back(std::move(obj));
  }
  return doc.dump(indent);
}

std::vector<NamedParams> params_from_json(const std::string &text) {
  const auto doc = nlohmann::json::parse(text);
  if (!doc.contains("schema_version") || doc["schema_version"] != kParamsSchemaVersion)
    throw std::runtime_error("parameter file schema_version mismatch (expected " +
                             std::to_string(kParamsSchemaVersion) + ")");
  std::vector<NamedParams> out;
  for (const auto &obj : doc.at("tracks")) {
    NamedParams t;
    t.name = obj.value("name", "");
    for (const auto &spec : kParamSpecs) {
      const std::string key(spec.name);
      if (!obj.contains(key))
        throw std::runtime_error("parameter file: track '" + t.name + "' lacks " + key);
      t.params.*spec.member = obj[key].get<double>();
    }
    t.params.validate();
    out.push_back(std::move(t));
  }
  return out;
}

void write_params_file(const std::filesystem::path &path, std::span<const NamedParams> tracks) {
  std::ofstream f(path, std::ios::trunc);
  if (!f)
    throw std::runtime_error("cannot write parameter file: " + path.string());
  f << params_to_json(tracks) << '\n';
}

std::vector<NamedParams> read_params_file(const std::filesystem::path &path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot read parameter file: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return params_from_json(ss.str());
}

} // namespace dmc::console
