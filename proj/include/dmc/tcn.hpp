#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmc/audio.hpp"
#include "dmc/autograd.hpp"
#include "dmc/checkpoint.hpp"
#include "dmc/console.hpp"
#include "dmc/optim.hpp"

namespace dmc::tcn {

struct TcnConfig {
  std::size_t n_blocks = 10;
  std::size_t kernel_size = 15;
  std::size_t channel_width = 32;
  std::size_t cond_dim = 128;
  std::size_t film_hidden = 128;
  std::size_t n_params = console::kProcessorCount; // EQ + compressor + reverb

  /// "tcn10", "tcn20" or "tcn30" with the given width.
  static TcnConfig preset(const std::string &name, std::size_t width = 32);

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TcnConfig from_json(const nlohmann::ordered_json &j);
  friend bool operator==(const TcnConfig &, const TcnConfig &) = default;
};

/// d_l = 2^((l - 1) mod 10) for the 1-based block index l.
std::size_t dilation(std::size_t block_1based);

/// 1 + (kernel - 1) * sum of dilations.
std::size_t receptive_field(const TcnConfig &cfg);

double receptive_field_ms(const TcnConfig &cfg, int sample_rate = kDefaultSampleRate);

struct BlockOutput {
  ag::Tensor out;  // activation plus scaled residual
  ag::Tensor skip; // activation before the residual
};

/// The FiLM-conditioned dilated TCN. Parameters live in a ParamStore:
///   film.l{0,1,2}.{w,b}, film.a{0,1}         conditioning MLP
///   block{i}.conv.w                          [W, in, K], no bias (batchnorm removes it)
///   block{i}.film.w [cond, 2W], .film.b [2W]  gamma then beta
///   block{i}.prelu [W], block{i}.res_gain []
///   block0.res_proj.w [W, 1, 1]              only when the widths differ
///   out.w [1, W, 1], out.b [1]
class Tcn {
public:
  Tcn() = default;
  /// Random initialization from the "init" stream of `seed`.
  Tcn(const TcnConfig &cfg, std::uint64_t seed);

  const TcnConfig &config() const { return cfg_; }
  ag::ParamStore &params() { return params_; }
  const ag::ParamStore &params() const { return params_; }
  std::vector<ag::BatchNormStats> &bn_stats() { return bn_; }

  /// proc [B, n_params] (normalized values) -> c_global [B, cond_dim]
  ag::Tensor conditioning(const ag::Tensor &proc) const;

  /// (gamma, beta), each [B, W], for block i (0-based).
  std::pair<ag::Tensor, ag::Tensor> film_params(std::size_t i, const ag::Tensor &c_global) const;

  /// x [B, in, T] -> [B, W, T - d (K - 1)]
  BlockOutput block_forward(std::size_t i, const ag::Tensor &x, const ag::Tensor &c_global,
                            ag::Mode mode);

  /// x [B, 1, T], proc [B, n_params] -> [B, 1, T - RF + 1]
  ag::Tensor forward(const ag::Tensor &x, const ag::Tensor &proc, ag::Mode mode);

  /// Conditioning disabled: every block uses gamma = 1, beta = 0.
  ag::Tensor forward_unconditioned(const ag::Tensor &x, ag::Mode mode);

  Checkpoint to_checkpoint() const;
  static Tcn from_checkpoint(const Checkpoint &ck);
  void save(const std::filesystem::path &path) const { save_checkpoint(path, to_checkpoint()); }
  static Tcn load(const std::filesystem::path &path) { return from_checkpoint(load_checkpoint(path)); }

private:
  ag::Tensor forward_impl(const ag::Tensor &x, const ag::Tensor *c_global, ag::Mode mode);

  TcnConfig cfg_;
  ag::ParamStore params_;
  std::vector<ag::BatchNormStats> bn_;
};

/// The 22 processor values of a parameter record, normalized to [0, 1].
std::vector<double> processor_vector(const console::ChannelParams &p);

/// Mono convenience wrapper around Tcn::forward in inference mode.
AudioBuffer tcn_forward(const AudioBuffer &x, const console::ChannelParams &p, Tcn &net,
                        ag::Mode mode = ag::Mode::infer);

// ---------------------------------------------------------------------------
// Differentiable channel

enum class ChannelMode { basic, full };

/// Channel parameters as graph values. Scalars have the empty shape; `proc`
/// holds the 22 normalized processor values, shape [n_params], and is only
/// read in full mode.
struct ChannelTensors {
  ag::Tensor gain_db;
  double polarity = 1.0;
  ag::Tensor fader_db;
  ag::Tensor pan;
  ag::Tensor proc;

  static ChannelTensors constant(const console::ChannelParams &p);
};

/// x [T] -> stereo [2, T'] with T' = T (basic) or T - RF + 1 (full).
/// basic: gain and polarity, fader, pan. full: the TCN sits between the
/// input gain and the fader. In basic mode the arithmetic matches
/// console::ChannelStrip with neutral processors exactly.
ag::Tensor diff_channel_forward(const ag::Tensor &x, const ChannelTensors &p, ChannelMode mode,
                                Tcn *net = nullptr, ag::Mode run = ag::Mode::infer);

} // namespace dmc::tcn
