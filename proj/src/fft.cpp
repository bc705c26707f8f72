#include "dmc/fft.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <stdexcept>

#include <fftw3.h>

namespace dmc {
namespace {

struct Plans {
  fftw_plan r2c;
  fftw_plan c2r;
};

// FFTW planning is not thread-safe; execution with the new-array interface is.
std::mutex &plan_mutex() {
  static std::mutex m;
  return m;
}

Plans plans_for(std::size_t n) {
  static std::map<std::size_t, Plans> cache;
  std::lock_guard lock(plan_mutex());
  if (auto it = cache.find(n); it != cache.end())
    return it->second;
  double *r = fftw_alloc_real(n);
  fftw_complex *c = fftw_alloc_complex(n / 2 + 1);
  const int len = static_cast<int>(n);
  Plans p{fftw_plan_dft_r2c_1d(len, r, c, FFTW_ESTIMATE),
          fftw_plan_dft_c2r_1d(len, c, r, FFTW_ESTIMATE)};
  fftw_free(r);
  fftw_free(c);
  if (!p.r2c || !p.c2r)
    throw std::runtime_error("FFTW planning failed");
  cache.emplace(n, p);
  return p;
}

} // namespace

struct RealFft::Impl {
  Plans plans;
  double *real;
  fftw_complex *spec;
};

RealFft::RealFft(std::size_t n) : n_(n) {
  if (n == 0)
    throw std::invalid_argument("RealFft: size must be positive");
  impl_ = std::make_unique<Impl>();
  impl_->plans = plans_for(n);
  impl_->real = fftw_alloc_real(n);
  impl_->spec = fftw_alloc_complex(n / 2 + 1);
}

RealFft::~RealFft() {
  if (impl_) {
    fftw_free(impl_->real);
    fftw_free(impl_->spec);
  }
}

RealFft::RealFft(RealFft &&) noexcept = default;
RealFft &RealFft::operator=(RealFft &&other) noexcept {
  if (this != &other) {
    if (impl_) {
      fftw_free(impl_->real);
      fftw_free(impl_->spec);
    }
    n_ = other.n_;
    impl_ = std::move(other.impl_);
  }
  return *this;
}

void RealFft::forward(std::span<const double> in, std::span<std::complex<double>> out) {
  if (in.size() != n_ || out.size() != bins())
    throw std::invalid_argument("RealFft::forward size mismatch");
  std::copy(in.begin(), in.end(), impl_->real);
  fftw_execute_dft_r2c(impl_->plans.r2c, impl_->real, impl_->spec);
  for (std::size_t k = 0; k < bins(); ++k)
    out[k] = {impl_->spec[k][0], impl_->spec[k][1]};
}

void RealFft::inverse(std::span<const std::complex<double>> in, std::span<double> out) {
  if (in.size() != bins() || out.size() != n_)
    throw std::invalid_argument("RealFft::inverse size mismatch");
  for (std::size_t k = 0; k < bins(); ++k) {
    impl_->spec[k][0] = in[k].real();
    impl_->spec[k][1] = in[k].imag();
  }
  fftw_execute_dft_c2r(impl_->plans.c2r, impl_->spec, impl_->real);
  std::copy(impl_->real, impl_->real + n_, out.begin());
}

} // namespace dmc
