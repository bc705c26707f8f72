#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmc/audio.hpp"
#include "dmc/summation.hpp"

namespace dmc::console {

inline constexpr double kHalfPi = std::numbers::pi / 2.0;

/// The complete 26-value channel record in physical units.
struct ChannelParams {
  double gain_db = 0.0;
  double polarity = 1.0;
  double eq_ls_gain_db = 0.0;
  double eq_ls_freq = 100.0;
  double eq_b1_gain_db = 0.0;
  double eq_b1_freq = 400.0;
  double eq_b1_q = 0.707;
  double eq_b2_gain_db = 0.0;
  double eq_b2_freq = 1000.0;
  double eq_b2_q = 0.707;
  double eq_b3_gain_db = 0.0;
  double eq_b3_freq = 3000.0;
  double eq_b3_q = 0.707;
  double eq_hs_gain_db = 0.0;
  double eq_hs_freq = 8000.0;
  double comp_threshold_db = 0.0;
  double comp_ratio = 1.0;
  double comp_attack_ms = 10.0;
  double comp_release_ms = 100.0;
  double comp_makeup_db = 0.0;
  double rev_room_size = 0.5;
  double rev_damping = 0.5;
  double rev_wet = 0.0;
  double rev_dry = 1.0;
  double fader_db = 0.0;
  double pan = 0.5;

  static constexpr std::size_t kCount = 26;

  /// Every processor neutral: the channel reduces to the center pan.
  static ChannelParams neutral() { return {}; }

  std::array<double, kCount> values() const;
  static ChannelParams from_values(std::span<const double> v);

  /// Each value mapped to [0, 1]. dB and linear quantities map linearly,
  /// frequencies and time constants logarithmically, polarity to {0, 1}.
  std::array<double, kCount> normalized() const;
  static ChannelParams from_normalized(std::span<const double> u);

  /// Throws std::out_of_range naming the first value outside its range.
  void validate() const;

  friend bool operator==(const ChannelParams &, const ChannelParams &) = default;
};

enum class Scale { linear, log, binary };

struct ParamSpec {
  std::string_view name;
  double lo;
  double hi;
  Scale scale;
  double ChannelParams::*member;
};

extern const std::array<ParamSpec, ChannelParams::kCount> kParamSpecs;

// Positions in the 26-value layout.
inline constexpr std::size_t kGainIndex = 0;
inline constexpr std::size_t kPolarityIndex = 1;
inline constexpr std::size_t kProcessorBegin = 2; // EQ, compressor, reverb
inline constexpr std::size_t kProcessorCount = 22;
inline constexpr std::size_t kFaderIndex = 24;
inline constexpr std::size_t kPanIndex = 25;

double normalize_value(const ParamSpec &spec, double physical);
double denormalize_value(const ParamSpec &spec, double unit);

enum class RandomMode { basic, full };

/// basic: gain uniform in [-12, 12] dB and pan uniform in [0, 1], the rest
/// neutral. full: every value uniform over its normalized range.
ChannelParams random_params(std::uint64_t seed, RandomMode mode);

// ---------------------------------------------------------------------------
// Processors

struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0, a1 = 0.0, a2 = 0.0;

  bool is_identity() const {
    return b0 == 1.0 && b1 == 0.0 && b2 == 0.0 && a1 == 0.0 && a2 == 0.0;
  }
  std::complex<double> response(double omega) const;
};

enum class EqKind { low_shelf, peak, high_shelf };

/// Audio-EQ-Cookbook shelving (slope 1) and peaking sections. A 0 dB gain
/// yields the identity section exactly.
Biquad eq_coefficients(EqKind kind, double gain_db, double freq_hz, double q,
                       int sample_rate);

/// Transposed direct form II.
class BiquadFilter {
public:
  BiquadFilter() = default;
  explicit BiquadFilter(Biquad c) : c_(c) {}
  void reset() { s1_ = s2_ = 0.0; }
  void process(std::span<double> x);
  const Biquad &coefficients() const { return c_; }

private:
  Biquad c_;
  double s1_ = 0.0;
  double s2_ = 0.0;
};

struct CompressorSettings {
  double threshold_db = 0.0;
  double ratio = 1.0;
  double attack_ms = 10.0;
  double release_ms = 100.0;
  double makeup_db = 0.0;

  static CompressorSettings from(const ChannelParams &p) {
    return {p.comp_threshold_db, p.comp_ratio, p.comp_attack_ms, p.comp_release_ms,
            p.comp_makeup_db};
  }
};

/// Feed-forward hard-knee compressor with a peak detector and one-pole
/// attack/release ballistics in the linear domain.
class Compressor {
public:
  Compressor(const CompressorSettings &s, int sample_rate);
  void reset() { envelope_ = 0.0; }
  /// In place. When `gain_db` is non-empty it receives the applied gain
  /// (static curve minus level plus makeup) for each sample.
  void process(std::span<double> x, std::span<double> gain_db = {});
  double envelope() const { return envelope_; }

  /// Gain in dB for a detector level of `level_db`.
  double gain_db_for_level(double level_db) const;

private:
  CompressorSettings s_;
  double attack_coeff_;
  double release_coeff_;
  double envelope_ = 0.0;
};

struct ReverbSettings {
  double room_size = 0.5;
  double damping = 0.5;
  double wet = 0.0;
  double dry = 1.0;

  static ReverbSettings from(const ChannelParams &p) {
    return {p.rev_room_size, p.rev_damping, p.rev_wet, p.rev_dry};
  }
};

/// Mono Freeverb: 8 damped feedback combs in parallel then 4 series
/// allpasses, y = dry * x + wet * tail(x).
class Reverb {
public:
  static constexpr std::array<std::size_t, 8> kCombTuning = {1116, 1188, 1277, 1356,
                                                             1422, 1491, 1557, 1617};
  static constexpr std::array<std::size_t, 4> kAllpassTuning = {556, 441, 341, 225};
  static constexpr double kFixedGain = 0.015;
  static constexpr double kWetScale = 3.0;
  static constexpr double kDampScale = 0.4;
  static constexpr double kRoomScale = 0.28;
  static constexpr double kRoomOffset = 0.7;
  static constexpr double kAllpassFeedback = 0.5;

  Reverb(const ReverbSettings &s, int sample_rate);
  void reset();
  void process(std::span<double> x);

  double comb_feedback() const { return feedback_; }
  std::size_t comb_delay(std::size_t i) const { return combs_[i].buffer.size(); }

private:
  struct Comb {
    std::vector<double> buffer;
    std::size_t index = 0;
    double filter_store = 0.0;
  };
  struct Allpass {
    std::vector<double> buffer;
    std::size_t index = 0;
  };

  ReverbSettings s_;
  double feedback_;
  double damp1_;
  double damp2_;
  std::array<Comb, 8> combs_;
  std::array<Allpass, 4> allpasses_;
};

/// The EQ, compressor and reverb stage for one channel: the part of the chain
/// the transformation network emulates. Mono in, mono out.
class ProcessorChain {
public:
  ProcessorChain(const ChannelParams &p, int sample_rate);
  void reset();
  void process(std::span<double> x);

private:
  std::array<BiquadFilter, 5> eq_;
  Compressor comp_;
  Reverb reverb_;
};

/// Full channel strip: gain, polarity, EQ, compressor, reverb, fader, pan.
/// State persists across process() calls so output does not depend on the
/// block size.
class ChannelStrip {
public:
  ChannelStrip(const ChannelParams &p, int sample_rate);
  void reset() { chain_.reset(); }
  void process(std::span<const double> in, std::span<double> left, std::span<double> right);

private:
  ChannelParams p_;
  double input_gain_;
  double fader_;
  double pan_left_;
  double pan_right_;
  ProcessorChain chain_;
  std::vector<double> scratch_;
};

// ---------------------------------------------------------------------------
// Buffer-level operations

AudioBuffer apply_gain(const AudioBuffer &x, double gain_db, double polarity);
AudioBuffer compressor_process(const AudioBuffer &x, const CompressorSettings &s);
AudioBuffer reverb_process(const AudioBuffer &x, const ReverbSettings &s);
AudioBuffer pan_stereo(const AudioBuffer &x, double pan);
/// EQ, compressor and reverb only; the emulation target.
AudioBuffer processor_chain_process(const AudioBuffer &x, const ChannelParams &p);
AudioBuffer channel_process(const AudioBuffer &x, const ChannelParams &p);

/// Sum of channel_process outputs. The per-sample reduction is independent of
/// track order, so the mix is bitwise invariant under joint permutation of
/// (tracks, params).
AudioBuffer console_mix(std::span<const AudioBuffer> tracks, std::span<const ChannelParams> params);

// ---------------------------------------------------------------------------
// Parameter files

inline constexpr int kParamsSchemaVersion = 1;

struct NamedParams {
  std::string name;
  ChannelParams params;
};

std::string params_to_json(std::span<const NamedParams> tracks, int indent = 2);
std::vector<NamedParams> params_from_json(const std::string &text);
void write_params_file(const std::filesystem::path &path, std::span<const NamedParams> tracks);
std::vector<NamedParams> read_params_file(const std::filesystem::path &path);

} // namespace dmc::console
