#include "dmc/controller.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dmc/fft.hpp"
#include "dmc/stereo_loss.hpp"

namespace dmc::ctrl {

using ag::Mode;
using ag::Shape;
using ag::Tensor;

Task parse_task(const std::string &s) {
  if (s == "basic")
    return Task::basic;
  if (s == "full")
    return Task::full;
  throw std::invalid_argument("unknown task '" + s + "' (basic, full)");
}

std::string to_string(Task t) { return t == Task::basic ? "basic" : "full"; }

std::size_t output_count(Task t) { return t == Task::basic ? 2 : console::ChannelParams::kCount; }

// ---------------------------------------------------------------------------
// Configuration

void EncoderConfig::validate() const {
  if (frame_size < 16 || (frame_size & (frame_size - 1)) != 0)
    throw std::invalid_argument("EncoderConfig: frame_size must be a power of two >= 16");
  if (hop_size == 0 || hop_size > frame_size)
    throw std::invalid_argument("EncoderConfig: hop_size must be in [1, frame_size]");
  if (n_bands == 0 || n_bands > frame_size / 2)
    throw std::invalid_argument("EncoderConfig: too many bands for the frame size");
  if (n_layers == 0 || conv_width == 0 || embedding_dim == 0)
    throw std::invalid_argument("EncoderConfig: layer sizes must be positive");
}

std::size_t EncoderConfig::frames(std::size_t len) const {
  return len < frame_size ? 0 : (len - frame_size) / hop_size + 1;
}

std::size_t EncoderConfig::min_samples(int sample_rate) const {
  // frames needed so that every kernel-3 stride-2 layer has one output
  std::size_t f = 1;
  for (std::size_t l = 0; l < n_layers; ++l)
    f = 2 * (f - 1) + 3;
  const std::size_t by_frames = frame_size + (f - 1) * hop_size;
  const auto by_time = static_cast<std::size_t>(std::ceil(min_duration_s * sample_rate));
  return std::max(by_frames, by_time);
}

void ControllerConfig::validate() const {
  encoder.validate();
  if (hidden == 0)
    throw std::invalid_argument("ControllerConfig: hidden must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("ControllerConfig: dropout must be in [0, 1)");
}

nlohmann::ordered_json ControllerConfig::to_json() const {
  nlohmann::ordered_json j;
  j["frame_size"] = encoder.frame_size;
  j["hop_size"] = encoder.hop_size;
  j["n_bands"] = encoder.n_bands;
  j["n_layers"] = encoder.n_layers;
  j["conv_width"] = encoder.conv_width;
  j["embedding_dim"] = encoder.embedding_dim;
  j["min_duration_s"] = encoder.min_duration_s;
  j["hidden"] = hidden;
  j["dropout"] = dropout;
  j["task"] = to_string(task);
  return j;
}

ControllerConfig ControllerConfig::from_json(const nlohmann::ordered_json &j) {
  ControllerConfig c;
  c.encoder.frame_size = j.at("frame_size").get<std::size_t>();
  c.encoder.hop_size = j.at("hop_size").get<std::size_t>();
  c.encoder.n_bands = j.at("n_bands").get<std::size_t>();
  c.encoder.n_layers = j.at("n_layers").get<std::size_t>();
  c.encoder.conv_width = j.at("conv_width").get<std::size_t>();
  c.encoder.embedding_dim = j.at("embedding_dim").get<std::size_t>();
  c.encoder.min_duration_s = j.at("min_duration_s").get<double>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.task = parse_task(j.at("task").get<std::string>());
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Features

std::vector<std::size_t> band_edges(std::size_t frame_size, int sample_rate, std::size_t n_bands) {
  const std::size_t bins = frame_size / 2 + 1;
  if (n_bands + 1 > bins)
    throw std::invalid_argument("band_edges: more bands than bins");
  const double lo = 30.0, hi = sample_rate / 2.0;
  std::vector<std::size_t> e(n_bands + 1);
  for (std::size_t k = 0; k <= n_bands; ++k) {
    const double f = lo * std::pow(hi / lo, static_cast<double>(k) / n_bands);
    auto b = static_cast<std::size_t>(std::lround(f * frame_size / sample_rate));
    b = std::max<std::size_t>(b, 1); // DC left out
    if (k > 0)
      b = std::max(b, e[k - 1] + 1);
    e[k] = std::min(b, bins - (n_bands - k));
  }
  e[n_bands] = bins;
  return e;
}

std::vector<double> log_band_features(std::span<const double> x, int sample_rate,
                                      const EncoderConfig &cfg) {
  const std::size_t F = cfg.frames(x.size());
  if (F == 0)
    throw std::invalid_argument("log_band_features: input shorter than one frame");
  const auto window = loss::hann_window(cfg.frame_size);
  const auto edges = band_edges(cfg.frame_size, sample_rate, cfg.n_bands);
  RealFft fft(cfg.frame_size);
  std::vector<double> buf(cfg.frame_size);
  std::vector<std::complex<double>> spec(fft.bins());
  std::vector<double> out(cfg.n_bands * F);
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t n = 0; n < cfg.frame_size; ++n)
      buf[n] = window[n] * x[f * cfg.hop_size + n];
    fft.forward(buf, spec);
    for (std::size_t b = 0; b < cfg.n_bands; ++b) {
      double p = 0.0;
      for (std::size_t k = edges[b]; k < edges[b + 1]; ++k)
        p += std::norm(spec[k]);
      p /= static_cast<double>((edges[b + 1] - edges[b]) * cfg.frame_size);
      out[b * F + f] = std::log(1e-8 + p);
    }
  }
  return out;
}

Tensor track_features(const std::vector<AudioBuffer> &tracks, const EncoderConfig &cfg) {
  if (tracks.empty())
    throw std::invalid_argument("track_features: no tracks");
  const std::size_t len = tracks[0].frames();
  const std::size_t F = cfg.frames(len);
  std::vector<double> all;
  all.reserve(tracks.size() * cfg.n_bands * F);
  for (const auto &t : tracks) {
    if (t.channels() != 1 || t.frames() != len)
      throw std::invalid_argument("track_features: tracks must be mono and of equal length");
    auto f = log_band_features(t.channel(0), t.sample_rate(), cfg);
    all.insert(all.end(), f.begin(), f.end());
  }
  return Tensor::constant({tracks.size(), cfg.n_bands, F}, std::move(all));
}

void MixSession::validate() const {
  if (tracks.empty())
    throw std::invalid_argument("MixSession: no tracks");
  const std::size_t len = tracks[0].frames();
  const int sr = tracks[0].sample_rate();
  for (const auto &t : tracks) {
    if (t.channels() != 1)
      throw std::invalid_argument("MixSession: tracks must be mono");
    if (t.sample_rate() != sr)
      throw std::invalid_argument("MixSession: mixed sample rates");
    if (t.frames() != len)
      throw std::invalid_argument("MixSession: tracks differ in length");
  }
  if (target) {
    if (target->channels() != 2)
      throw std::invalid_argument("MixSession: target must be stereo");
    if (target->sample_rate() != sr)
      throw std::invalid_argument("MixSession: target sample rate differs from the tracks");
    if (target->frames() != len)
      throw std::invalid_argument("MixSession: target length differs from the tracks");
  }
  if (params && params->size() != tracks.size())
    throw std::invalid_argument("MixSession: one parameter record per track required");
}

// ---------------------------------------------------------------------------
// Network

namespace {

std::vector<double> uniform_init(Rng &rng, std::size_t n, double bound) {
  std::vector<double> v(n);
  for (double &x : v)
    x = uniform(rng, -bound, bound);
  return v;
}

void add_linear(ag::ParamStore &ps, Rng &rng, const std::string &name, std::size_t in,
                std::size_t out) {
  const double b = 1.0 / std::sqrt(static_cast<double>(in));
  ps.add(name + ".w", {in, out}, uniform_init(rng, in * out, b));
  ps.add(name + ".b", {out}, uniform_init(rng, out, b));
}

Tensor linear(const ag::ParamStore &ps, const std::string &name, const Tensor &x) {
  return ag::matmul(x, ps.get(name + ".w")) + ps.get(name + ".b");
}

// log band power sits roughly in [-18, 2]; bring it near unit scale
constexpr double kFeatureShift = 8.0;
constexpr double kFeatureScale = 0.2;

} // namespace

Controller::Controller(const ControllerConfig &cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = make_stream(seed, "init");
  const auto &e = cfg_.encoder;
  for (std::size_t l = 0; l < e.n_layers; ++l) {
    const std::size_t in = l == 0 ? e.n_bands : e.conv_width;
    const std::string p = "enc.conv" + std::to_string(l);
    const double b = 1.0 / std::sqrt(static_cast<double>(in * 3));
    params_.add(p + ".w", {e.conv_width, in, 3}, uniform_init(rng, e.conv_width * in * 3, b));
    params_.add(p + ".b", {e.conv_width}, uniform_init(rng, e.conv_width, b));
    params_.add(p + ".a", {e.conv_width}, std::vector<double>(e.conv_width, 0.25));
  }
  add_linear(params_, rng, "enc.out", e.conv_width, e.embedding_dim);

  add_linear(params_, rng, "post.l0", 2 * e.embedding_dim, cfg_.hidden);
  params_.add("post.a0", {cfg_.hidden}, std::vector<double>(cfg_.hidden, 0.25));
  add_linear(params_, rng, "post.l1", cfg_.hidden, cfg_.hidden);
  params_.add("post.a1", {cfg_.hidden}, std::vector<double>(cfg_.hidden, 0.25));
  add_linear(params_, rng, "post.l2", cfg_.hidden, output_count(cfg_.task));
}

Tensor Controller::encode_features(const Tensor &features) const {
  const auto &e = cfg_.encoder;
  if (features.rank() != 3 || features.dim(1) != e.n_bands)
    throw std::invalid_argument("encode: features must be [tracks, " + std::to_string(e.n_bands) +
                                ", frames], got " + ag::shape_string(features.shape()));
  Tensor h = (features + kFeatureShift) * kFeatureScale;
  for (std::size_t l = 0; l < e.n_layers; ++l) {
    const std::string p = "enc.conv" + std::to_string(l);
    if (h.dim(2) < 3)
      throw std::invalid_argument("encode: input too short for the encoder (" +
                                  std::to_string(features.dim(2)) + " frames)");
    h = ag::conv1d(h, params_.get(p + ".w"), params_.get(p + ".b"), 1, 2);
    h = ag::prelu(h, params_.get(p + ".a"));
  }
  h = ag::mean_axis(h, 2);
  return linear(params_, "enc.out", h);
}

Tensor Controller::encode(const AudioBuffer &track) const {
  if (track.channels() != 1)
    throw std::invalid_argument("encode: mono track required");
  if (track.frames() < cfg_.encoder.min_samples(track.sample_rate()))
    throw std::invalid_argument("encode: track of " + std::to_string(track.frames()) +
                                " samples is too short (needs " +
                                std::to_string(cfg_.encoder.min_samples(track.sample_rate())) +
                                ")");
  Tensor e = encode_features(track_features({track}, cfg_.encoder));
  return ag::reshape(e, {cfg_.encoder.embedding_dim});
}

Tensor context_embedding(const Tensor &embeddings) {
  if (embeddings.rank() != 2 || embeddings.dim(0) == 0)
    throw std::invalid_argument("context_embedding: needs at least one embedding");
  return ag::set_mean(embeddings);
}

Tensor Controller::post_process(const Tensor &track_emb, const Tensor &context, Mode mode,
                                Rng *dropout_rng) const {
  const std::size_t E = cfg_.encoder.embedding_dim;
  if (track_emb.rank() != 2 || track_emb.dim(1) != E || context.shape() != Shape{E})
    throw std::invalid_argument("post_process: embeddings must be [N, " + std::to_string(E) +
                                "] and [" + std::to_string(E) + "]");
  const std::size_t N = track_emb.dim(0);
  Tensor ctx_rows = ag::matmul(Tensor::full({N, 1}, 1.0), ag::reshape(context, {1, E}));
  Tensor h = ag::concat({track_emb, ctx_rows}, 1);
  for (int l = 0; l < 2; ++l) {
    const std::string i = std::to_string(l);
    h = ag::prelu(linear(params_, "post.l" + i, h), params_.get("post.a" + i));
    h = ag::dropout(h, cfg_.dropout, mode, dropout_rng);
  }
  return ag::sigmoid(linear(params_, "post.l2", h));
}

DmcOutput Controller::forward(const MixSession &session, Mode mode, Rng *dropout_rng,
                              tcn::Tcn *net, Mode net_mode, const Tensor *features) const {
  session.validate();
  const std::size_t N = session.tracks.size();
  const std::size_t len = session.frames();
  if (len < cfg_.encoder.min_samples(session.sample_rate()))
    throw std::invalid_argument("dmc_forward: tracks of " + std::to_string(len) +
                                " samples are too short for the encoder (needs " +
                                std::to_string(cfg_.encoder.min_samples(session.sample_rate())) +
                                ")");
  const bool full = cfg_.task == Task::full;
  if (full && !net)
    throw std::invalid_argument("dmc_forward: the full task needs a transformation network");
  if (mode == Mode::train && cfg_.dropout > 0.0 && !dropout_rng)
    throw std::invalid_argument("dmc_forward: training mode needs a dropout stream");

  Tensor feats = features ? *features : track_features(session.tracks, cfg_.encoder);
  Tensor emb = encode_features(feats);
  Tensor u = post_process(emb, context_embedding(emb), mode, dropout_rng);
  const std::size_t n_out = output_count(cfg_.task);

  DmcOutput out;
  out.normalized = u;
  auto uv = u.values();
  std::vector<Tensor> channels;
  const auto &gain_spec = console::kParamSpecs[console::kGainIndex];
  const auto &fader_spec = console::kParamSpecs[console::kFaderIndex];
  auto denorm = [](const Tensor &t, const console::ParamSpec &s) {
    return t * (s.hi - s.lo) + s.lo;
  };
  auto scalar_at = [](const Tensor &row, std::size_t i) {
    return ag::reshape(ag::slice(row, 0, i, 1), {});
  };
  for (std::size_t i = 0; i < N; ++i) {
    Tensor row = ag::reshape(ag::slice(u, 0, i, 1), {n_out});
    tcn::ChannelTensors ct;
    ct.polarity = 1.0;
    console::ChannelParams p;
    if (full) {
      p = console::ChannelParams::from_normalized(uv.subspan(i * n_out, n_out));
      ct.gain_db = denorm(scalar_at(row, console::kGainIndex), gain_spec);
      ct.proc = ag::slice(row, 0, console::kProcessorBegin, console::kProcessorCount);
      ct.fader_db = denorm(scalar_at(row, console::kFaderIndex), fader_spec);
      ct.pan = scalar_at(row, console::kPanIndex);
    } else {
      ct.gain_db = denorm(scalar_at(row, 0), gain_spec);
      ct.fader_db = Tensor::scalar(0.0);
      ct.pan = scalar_at(row, 1);
    }
    p.polarity = 1.0;
    p.gain_db = ct.gain_db.item();
    p.fader_db = ct.fader_db.item();
    p.pan = ct.pan.item();
    out.params.push_back(p);

    auto xv = session.tracks[i].channel(0);
    Tensor x = Tensor::constant({len}, {xv.begin(), xv.end()});
    Tensor y = tcn::diff_channel_forward(x, ct, full ? tcn::ChannelMode::full : tcn::ChannelMode::basic,
                                         net, net_mode);
    channels.push_back(ag::reshape(y, {1, 2, y.dim(1)}));
  }
  out.mix = ag::set_sum(ag::concat(channels, 0));
  return out;
}

Checkpoint Controller::to_checkpoint() const {
  Checkpoint ck;
  ck.meta["model"] = "controller";
  ck.meta["config"] = cfg_.to_json();
  for (const auto &[name, t] : params_.items()) {
    auto v = t.values();
    ck.arrays.push_back({name, t.shape(), std::vector<double>(v.begin(), v.end())});
  }
  return ck;
}

Controller Controller::from_checkpoint(const Checkpoint &ck) {
  if (!ck.meta.contains("model") || ck.meta["model"] != "controller")
    throw std::runtime_error("checkpoint does not hold a controller");
  Controller c(ControllerConfig::from_json(ck.meta.at("config")), 0);
  for (const auto &[name, t] : c.params_.items()) {
    const auto &a = ck.find(name);
    if (a.shape != t.shape())
      throw std::runtime_error("checkpoint array '" + name + "' has shape " +
                               ag::shape_string(a.shape) + ", expected " +
                               ag::shape_string(t.shape()));
    Tensor dst = t;
    std::copy(a.data.begin(), a.data.end(), dst.mutable_values().begin());
  }
  return c;
}

AudioBuffer crop_target(const AudioBuffer &target, std::size_t frames) {
  if (frames > target.frames())
    throw std::invalid_argument("crop_target: target shorter than the prediction");
  return target.slice((target.frames() - frames) / 2, frames);
}

} // namespace dmc::ctrl
