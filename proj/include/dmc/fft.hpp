#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>

namespace dmc {

/// Real-input FFT of a fixed size backed by FFTW. Plans are created once per
/// size (estimate mode, so results are reproducible run to run) and shared;
/// each RealFft owns its work buffers, so distinct objects may be used from
/// different threads.
class RealFft {
public:
  explicit RealFft(std::size_t n);
  ~RealFft();
  RealFft(RealFft &&) noexcept;
  RealFft &operator=(RealFft &&) noexcept;
  RealFft(const RealFft &) = delete;
  RealFft &operator=(const RealFft &) = delete;

  std::size_t size() const { return n_; }
  std::size_t bins() const { return n_ / 2 + 1; }

  /// out[k] = sum_n in[n] e^{-2 pi i k n / N}, k = 0..N/2.
  void forward(std::span<const double> in, std::span<std::complex<double>> out);
  /// out[n] = sum_{k=0}^{N-1} Z[k] e^{+2 pi i k n / N} for the Hermitian
  /// extension Z of `in` (unnormalized inverse).
  void inverse(std::span<const std::complex<double>> in, std::span<double> out);

private:
  struct Impl;
  std::size_t n_;
  std::unique_ptr<Impl> impl_;
};

} // namespace dmc
