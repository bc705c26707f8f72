#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dmc/audio.hpp"
#include "dmc/autograd.hpp"

namespace dmc::loss {

inline constexpr double kLogEps = 1e-7;
inline constexpr double kScFloor = 1e-12;

struct StftConfig {
  std::size_t frame_size = 1024;
  std::size_t hop_size = 256;
  /// Throws unless 0 < hop <= frame and frame is a power of two.
  void validate() const;
};

struct MultiResConfig {
  std::vector<StftConfig> resolutions{{512, 128}, {1024, 256}, {2048, 512}};
  void validate() const;
};

/// Periodic Hann window, w[n] = 0.5 - 0.5 cos(2 pi n / N).
std::vector<double> hann_window(std::size_t n);

/// Number of whole frames; no center padding.
std::size_t frame_count(std::size_t len, const StftConfig &cfg);

struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> mag; // [frames][bins]
};

/// (L + R, L - R) of a stereo buffer.
std::pair<AudioBuffer, AudioBuffer> sum_diff(const AudioBuffer &stereo);

Spectrogram stft_mag(std::span<const double> x, const StftConfig &cfg);

/// || |Y| - |Yhat| ||_F / max(|| |Y| ||_F, 1e-12)
double loss_sc(const Spectrogram &pred, const Spectrogram &target);
/// (1 / N) || log(|Y| + eps) - log(|Yhat| + eps) ||_1, N = number of frames
double loss_sm(const Spectrogram &pred, const Spectrogram &target);

struct ResolutionTerms {
  std::size_t frame_size;
  std::size_t hop_size;
  double sc;
  double sm;
};

struct MrReport {
  std::vector<ResolutionTerms> terms;
  double total = 0.0;
};

struct StereoLossReport {
  MrReport sum;
  MrReport diff;
  double total = 0.0;
  nlohmann::ordered_json to_json() const;
};

MrReport loss_mr_terms(std::span<const double> pred, std::span<const double> target,
                       const MultiResConfig &cfg = {});
double loss_mr(std::span<const double> pred, std::span<const double> target,
               const MultiResConfig &cfg = {});

StereoLossReport stereo_loss_report(const AudioBuffer &pred, const AudioBuffer &target,
                                    const MultiResConfig &cfg = {});
double stereo_loss(const AudioBuffer &pred, const AudioBuffer &target,
                   const MultiResConfig &cfg = {});

// --- differentiable -----------------------------------------------------------

/// loss_mr of a 1-D prediction against a fixed target, as a single recorded op
/// with an analytic backward.
ag::Tensor loss_mr(const ag::Tensor &pred, std::span<const double> target,
                   const MultiResConfig &cfg = {});

/// pred has shape [2, len]. The sum and difference signals are formed with
/// engine ops, then each goes through the fused loss_mr.
ag::Tensor stereo_loss(const ag::Tensor &pred, const AudioBuffer &target,
                       const MultiResConfig &cfg = {});

/// The same quantity assembled only from generic engine ops (frame, window,
/// rfft_mag, log, ...). Slower; used to cross-check the fused version.
ag::Tensor loss_mr_composite(const ag::Tensor &pred, const ag::Tensor &target,
                             const MultiResConfig &cfg = {});
ag::Tensor stereo_loss_composite(const ag::Tensor &pred, const ag::Tensor &target,
                                 const MultiResConfig &cfg = {});

/// Rows 0 and 1 of a [2, len] tensor as (row0 + row1, row0 - row1).
std::pair<ag::Tensor, ag::Tensor> sum_diff(const ag::Tensor &stereo);

/// [channels, frames] constant tensor holding the buffer.
ag::Tensor to_tensor(const AudioBuffer &b);

} // namespace dmc::loss
