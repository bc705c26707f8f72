#include "dmc/stereo_loss.hpp"

#include <bit>
#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>

#include "dmc/fft.hpp"

namespace dmc::loss {

void StftConfig::validate() const {
  if (frame_size == 0 || !std::has_single_bit(frame_size))
    throw std::invalid_argument("STFT frame size must be a power of two");
  if (hop_size == 0 || hop_size > frame_size)
    throw std::invalid_argument("STFT hop must lie in (0, frame size]");
}

void MultiResConfig::validate() const {
  if (resolutions.empty())
    throw std::invalid_argument("at least one STFT resolution required");
  for (const auto &r : resolutions)
    r.validate();
}

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
  return w;
}

std::size_t frame_count(std::size_t len, const StftConfig &cfg) {
  cfg.validate();
  if (len < cfg.frame_size)
    throw std::invalid_argument("signal of " + std::to_string(len) +
                                " samples is shorter than one STFT frame of " +
                                std::to_string(cfg.frame_size));
  return (len - cfg.frame_size) / cfg.hop_size + 1;
}

std::pair<AudioBuffer, AudioBuffer> sum_diff(const AudioBuffer &y) {
  if (y.channels() != 2)
    throw std::invalid_argument("sum_diff: stereo input required, got " +
                                std::to_string(y.channels()) + " channels");
  AudioBuffer s(1, y.frames(), y.sample_rate()), d(1, y.frames(), y.sample_rate());
  for (std::size_t n = 0; n < y.frames(); ++n) {
    s.at(0, n) = y.at(0, n) + y.at(1, n);
    d.at(0, n) = y.at(0, n) - y.at(1, n);
  }
  return {std::move(s), std::move(d)};
}

namespace {

// Complex spectra of every windowed frame, [frames][bins].
struct ComplexStft {
  std::size_t frames;
  std::size_t bins;
  std::vector<std::complex<double>> spec;
};

ComplexStft stft(std::span<const double> x, const StftConfig &cfg) {
  const std::size_t n = cfg.frame_size;
  ComplexStft out{frame_count(x.size(), cfg), n / 2 + 1, {}};
  out.spec.resize(out.frames * out.bins);
  const auto w = hann_window(n);
  RealFft fft(n);
  std::vector<double> buf(n);
  for (std::size_t f = 0; f < out.frames; ++f) {
    const double *src = x.data() + f * cfg.hop_size;
    for (std::size_t i = 0; i < n; ++i)
      buf[i] = src[i] * w[i];
    fft.forward(buf, std::span(out.spec).subspan(f * out.bins, out.bins));
  }
  return out;
}

Spectrogram magnitude(const ComplexStft &s) {
  Spectrogram m{s.frames, s.bins, std::vector<double>(s.spec.size())};
  for (std::size_t i = 0; i < s.spec.size(); ++i)
    m.mag[i] = std::abs(s.spec[i]);
  return m;
}

void require_same(const Spectrogram &a, const Spectrogram &b) {
  if (a.frames != b.frames || a.bins != b.bins)
    throw std::invalid_argument("spectrogram shapes differ");
}

double frob_target(const Spectrogram &y) {
  double s = 0.0;
  for (double v : y.mag)
    s += v * v;
  return std::max(std::sqrt(s), kScFloor);
}

void require_equal_length(std::size_t a, std::size_t b) {
  if (a != b)
    throw std::invalid_argument("prediction and target lengths differ (" + std::to_string(a) +
                                " vs " + std::to_string(b) + ")");
}

} // namespace

Spectrogram stft_mag(std::span<const double> x, const StftConfig &cfg) {
  return magnitude(stft(x, cfg));
}

double loss_sc(const Spectrogram &pred, const Spectrogram &target) {
  require_same(pred, target);
  double num = 0.0;
  for (std::size_t i = 0; i < pred.mag.size(); ++i) {
    const double d = target.mag[i] - pred.mag[i];
    num += d * d;
  }
  return std::sqrt(num) / frob_target(target);
}

double loss_sm(const Spectrogram &pred, const Spectrogram &target) {
  require_same(pred, target);
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.mag.size(); ++i)
    acc += std::abs(std::log(target.mag[i] + kLogEps) - std::log(pred.mag[i] + kLogEps));
  return acc / static_cast<double>(pred.frames);
}

MrReport loss_mr_terms(std::span<const double> pred, std::span<const double> target,
                       const MultiResConfig &cfg) {
  cfg.validate();
  require_equal_length(pred.size(), target.size());
  MrReport r;
  for (const auto &res : cfg.resolutions) {
    const auto p = stft_mag(pred, res);
    const auto t = stft_mag(target, res);
    r.terms.push_back({res.frame_size, res.hop_size, loss_sc(p, t), loss_sm(p, t)});
  }
  for (const auto &t : r.terms)
    r.total += t.sc + t.sm;
  r.total /= static_cast<double>(r.terms.size());
  return r;
}

double loss_mr(std::span<const double> pred, std::span<const double> target,
               const MultiResConfig &cfg) {
  return loss_mr_terms(pred, target, cfg).total;
}

StereoLossReport stereo_loss_report(const AudioBuffer &pred, const AudioBuffer &target,
                                    const MultiResConfig &cfg) {
  require_equal_length(pred.frames(), target.frames());
  const auto [ps, pd] = sum_diff(pred);
  const auto [ts, td] = sum_diff(target);
  StereoLossReport r;
  r.sum = loss_mr_terms(ps.channel(0), ts.channel(0), cfg);
  r.diff = loss_mr_terms(pd.channel(0), td.channel(0), cfg);
  r.total = r.sum.total + r.diff.total;
  return r;
}

double stereo_loss(const AudioBuffer &pred, const AudioBuffer &target, const MultiResConfig &cfg) {
  return stereo_loss_report(pred, target, cfg).total;
}

nlohmann::ordered_json StereoLossReport::to_json() const {
  auto branch = [](const MrReport &m) {
    nlohmann::ordered_json j;
    j["resolutions"] = nlohmann::ordered_json::array();
    for (const auto &t : m.terms)
      j["resolutions"].push_back(
          {{"frame_size", t.frame_size}, {"hop_size", t.hop_size}, {"sc", t.sc}, {"sm", t.sm}});
    j["loss_mr"] = m.total;
    return j;
  };
  nlohmann::ordered_json j;
  j["sum"] = branch(sum);
  j["diff"] = branch(diff);
  j["total"] = total;
  return j;
}

// ---------------------------------------------------------------------------
// Differentiable

ag::Tensor loss_mr(const ag::Tensor &pred, std::span<const double> target,
                   const MultiResConfig &cfg) {
  cfg.validate();
  if (pred.rank() != 1)
    throw std::invalid_argument("loss_mr expects a 1-D prediction, got " +
                                ag::shape_string(pred.shape()));
  require_equal_length(pred.size(), target.size());
  const double M = static_cast<double>(cfg.resolutions.size());

  // forward, keeping what the backward pass needs
  struct Saved {
    StftConfig res;
    ComplexStft spec;
    Spectrogram pred_mag;
    Spectrogram target_mag;
    double sc_num;
    double sc_den;
  };
  auto saved = std::make_shared<std::vector<Saved>>();
  double total = 0.0;
  for (const auto &res : cfg.resolutions) {
    auto ps = stft(pred.values(), res);
    auto pm = magnitude(ps);
    auto tm = stft_mag(target, res);
    double num = 0.0;
    for (std::size_t i = 0; i < pm.mag.size(); ++i) {
      const double d = tm.mag[i] - pm.mag[i];
      num += d * d;
    }
    num = std::sqrt(num);
    const double den = frob_target(tm);
    total += num / den + loss_sm(pm, tm);
    saved->push_back({res, std::move(ps), std::move(pm), std::move(tm), num, den});
  }
  total /= M;

  return ag::make_op(
      "loss_mr", {}, {total}, {pred},
      [saved, M](auto, std::span<const double> g, std::span<std::vector<double> *const> grads) {
        auto &gx = *grads[0];
        for (const auto &s : *saved) {
          const std::size_t n = s.res.frame_size;
          const std::size_t bins = n / 2 + 1;
          const std::size_t frames = s.spec.frames;
          const double sc_scale = s.sc_num > 0.0 ? 1.0 / (s.sc_num * s.sc_den) : 0.0;
          const double sm_scale = 1.0 / static_cast<double>(frames);
          const auto w = hann_window(n);
          RealFft fft(n);
          std::vector<std::complex<double>> z(bins);
          std::vector<double> out(n);
          for (std::size_t f = 0; f < frames; ++f) {
            for (std::size_t k = 0; k < bins; ++k) {
              const std::size_t i = f * bins + k;
              const double p = s.pred_mag.mag[i];
              const double t = s.target_mag.mag[i];
              // d/d|Yhat| of the SC and SM terms
              double d = (p - t) * sc_scale;
              if (p != t)
                d += (p > t ? 1.0 : -1.0) * sm_scale / (p + kLogEps);
              d *= g[0] / M;
              const auto c = p > 0.0 ? d * s.spec.spec[i] / p : std::complex<double>{};
              const bool edge = k == 0 || k == n / 2;
              z[k] = edge ? std::complex<double>(c.real(), 0.0) : 0.5 * c;
            }
            fft.inverse(z, out);
            double *dst = gx.data() + f * s.res.hop_size;
            for (std::size_t i = 0; i < n; ++i)
              dst[i] += out[i] * w[i];
          }
        }
      });
}

std::pair<ag::Tensor, ag::Tensor> sum_diff(const ag::Tensor &y) {
  if (y.rank() != 2 || y.dim(0) != 2)
    throw std::invalid_argument("sum_diff expects shape [2, len], got " +
                                ag::shape_string(y.shape()));
  const std::size_t len = y.dim(1);
  auto l = ag::reshape(ag::slice(y, 0, 0, 1), {len});
  auto r = ag::reshape(ag::slice(y, 0, 1, 1), {len});
  return {ag::add(l, r), ag::sub(l, r)};
}

ag::Tensor to_tensor(const AudioBuffer &b) {
  return ag::Tensor::constant({b.channels(), b.frames()},
                              std::vector<double>(b.data().begin(), b.data().end()));
}

ag::Tensor stereo_loss(const ag::Tensor &pred, const AudioBuffer &target,
                       const MultiResConfig &cfg) {
  if (target.channels() != 2)
    throw std::invalid_argument("stereo_loss: target must be stereo");
  auto [ps, pd] = sum_diff(pred);
  auto [ts, td] = sum_diff(target);
  return ag::add(loss_mr(ps, ts.channel(0), cfg), loss_mr(pd, td.channel(0), cfg));
}

ag::Tensor loss_mr_composite(const ag::Tensor &pred, const ag::Tensor &target,
                             const MultiResConfig &cfg) {
  cfg.validate();
  require_equal_length(pred.size(), target.size());
  std::vector<ag::Tensor> per_res;
  for (const auto &res : cfg.resolutions) {
    frame_count(pred.size(), res);
    const auto w = ag::Tensor::constant({res.frame_size}, hann_window(res.frame_size));
    auto spec = [&](const ag::Tensor &x) {
      return ag::rfft_mag(ag::mul(ag::frame(x, res.frame_size, res.hop_size), w));
    };
    auto P = spec(pred);
    auto T = spec(target);
    const double N = static_cast<double>(P.dim(0));
    auto diff = ag::sub(T, P);
    auto num = ag::sqrt(ag::sum(ag::mul(diff, diff)));
    auto den = std::max(std::sqrt(ag::sum(ag::mul(T, T)).item()), kScFloor);
    auto sc = ag::mul_scalar(num, 1.0 / den);
    auto sm = ag::mul_scalar(
        ag::sum(ag::abs(ag::sub(ag::log(ag::add_scalar(T, kLogEps)),
                                ag::log(ag::add_scalar(P, kLogEps))))),
        1.0 / N);
    per_res.push_back(ag::add(sc, sm));
  }
  auto total = per_res[0];
  for (std::size_t i = 1; i < per_res.size(); ++i)
    total = ag::add(total, per_res[i]);
  return ag::mul_scalar(total, 1.0 / static_cast<double>(per_res.size()));
}

ag::Tensor stereo_loss_composite(const ag::Tensor &pred, const ag::Tensor &target,
                                 const MultiResConfig &cfg) {
  auto [ps, pd] = sum_diff(pred);
  auto [ts, td] = sum_diff(target);
  return ag::add(loss_mr_composite(ps, ts, cfg), loss_mr_composite(pd, td, cfg));
}

} // namespace dmc::loss
