#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "dmc/audio.hpp"
#include "dmc/autograd.hpp"
#include "dmc/checkpoint.hpp"
#include "dmc/console.hpp"
#include "dmc/optim.hpp"
#include "dmc/tcn.hpp"

namespace dmc::ctrl {

enum class Task { basic, full };

Task parse_task(const std::string &s);
std::string to_string(Task t);
/// 2 (gain, pan) or 26.
std::size_t output_count(Task t);

struct EncoderConfig {
  std::size_t frame_size = 1024;
  std::size_t hop_size = 256;
  std::size_t n_bands = 64;
  std::size_t n_layers = 4; // kernel 3, stride 2
  std::size_t conv_width = 32;
  std::size_t embedding_dim = 128;
  double min_duration_s = 1.0;

  void validate() const;
  /// Frames of the spectrogram for `len` samples.
  std::size_t frames(std::size_t len) const;
  /// Shortest input the conv stack accepts.
  std::size_t min_samples(int sample_rate) const;
};

struct ControllerConfig {
  EncoderConfig encoder;
  std::size_t hidden = 256;
  double dropout = 0.1;
  Task task = Task::basic;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static ControllerConfig from_json(const nlohmann::ordered_json &j);
};

/// log(1e-8 + mean power) in 64 log-spaced bands from 30 Hz to Nyquist,
/// periodic Hann frames, no padding. Returns [n_bands, frames], row major.
std::vector<double> log_band_features(std::span<const double> x, int sample_rate,
                                      const EncoderConfig &cfg);

/// Band edges in FFT bins, n_bands + 1 entries, strictly increasing.
std::vector<std::size_t> band_edges(std::size_t frame_size, int sample_rate, std::size_t n_bands);

/// Stacked features of equal-length mono tracks: [N, n_bands, frames].
ag::Tensor track_features(const std::vector<AudioBuffer> &tracks, const EncoderConfig &cfg);

struct MixSession {
  std::vector<AudioBuffer> tracks;
  std::optional<AudioBuffer> target;
  std::optional<std::vector<console::ChannelParams>> params;

  /// Throws on an empty session, non-mono tracks, or mismatched length or
  /// sample rate (target included).
  void validate() const;
  int sample_rate() const { return tracks.at(0).sample_rate(); }
  std::size_t frames() const { return tracks.at(0).frames(); }
};

struct DmcOutput {
  ag::Tensor mix;                              // [2, T']
  ag::Tensor normalized;                       // [N, outputs], sigmoid range
  std::vector<console::ChannelParams> params;  // physical, polarity +1
};

class Controller {
public:
  Controller() = default;
  Controller(const ControllerConfig &cfg, std::uint64_t seed);

  const ControllerConfig &config() const { return cfg_; }
  ag::ParamStore &params() { return params_; }
  const ag::ParamStore &params() const { return params_; }

  /// features [N, bands, frames] -> embeddings [N, embedding_dim]
  ag::Tensor encode_features(const ag::Tensor &features) const;
  /// One mono track -> [embedding_dim].
  ag::Tensor encode(const AudioBuffer &track) const;

  /// track [N, E], context [E] -> normalized parameters [N, outputs]
  ag::Tensor post_process(const ag::Tensor &track_emb, const ag::Tensor &context,
                          ag::Mode mode, Rng *dropout_rng) const;

  /// Encode, context, post-process, then one differentiable channel per
  /// track summed to stereo. Full task needs `net`. `features` may be passed
  /// in when already computed for these tracks.
  DmcOutput forward(const MixSession &session, ag::Mode mode, Rng *dropout_rng = nullptr,
                    tcn::Tcn *net = nullptr, ag::Mode net_mode = ag::Mode::infer,
                    const ag::Tensor *features = nullptr) const;

  Checkpoint to_checkpoint() const;
  static Controller from_checkpoint(const Checkpoint &ck);
  void save(const std::filesystem::path &path) const { save_checkpoint(path, to_checkpoint()); }
  static Controller load(const std::filesystem::path &path) {
    return from_checkpoint(load_checkpoint(path));
  }

private:
  ControllerConfig cfg_;
  ag::ParamStore params_;
};

/// Elementwise mean of embeddings [N, E]; independent of row order.
ag::Tensor context_embedding(const ag::Tensor &embeddings);

/// Center crop of a stereo target to `frames` (full task loss alignment).
AudioBuffer crop_target(const AudioBuffer &target, std::size_t frames);

} // namespace dmc::ctrl
