#include "conv_kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace dmc::ag::kernels {
namespace {

// GCC/Clang vector extension; lowers to AVX-512 / AVX2 / SSE as available.
typedef double v8d __attribute__((vector_size(64)));
constexpr std::size_t kLanes = 8;
constexpr int kTileVecs = 4;
constexpr std::size_t kTileT = kLanes * kTileVecs;

inline v8d load(const double *p) {
  v8d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store(double *p, v8d v) { std::memcpy(p, &v, sizeof v); }

// 8-lane broadcast, spelled so that the lane count stays tied to v8d
inline v8d splat(double s) { return v8d{} + s; }

// wp layout: [in][kernel][out], out contiguous.
template <int OB>
void forward_tile(const double *x, std::size_t xs, std::size_t cin, const double *wp,
                  std::size_t cout, std::size_t K, std::size_t d, double *y, std::size_t ys,
                  std::size_t t, std::size_t o0) {
  v8d acc[OB][kTileVecs] = {};
  for (std::size_t i = 0; i < cin; ++i) {
    const double *xi = x + i * xs + t;
    const double *wi = wp + i * K * cout + o0;
    for (std::size_t k = 0; k < K; ++k) {
      const double *xp = xi + k * d;
      v8d xv[kTileVecs];
      for (int v = 0; v < kTileVecs; ++v)
        xv[v] = load(xp + kLanes * v);
      const double *wk = wi + k * cout;
      for (int o = 0; o < OB; ++o) {
        const v8d wv = splat(wk[o]);
        for (int v = 0; v < kTileVecs; ++v)
          acc[o][v] += wv * xv[v];
      }
    }
  }
  for (int o = 0; o < OB; ++o) {
    double *yp = y + (o0 + o) * ys + t;
    for (int v = 0; v < kTileVecs; ++v)
      store(yp + kLanes * v, load(yp + kLanes * v) + acc[o][v]);
  }
}

void forward_packed(const double *x, std::size_t xs, std::size_t cin, const double *wp,
                    std::size_t cout, std::size_t K, std::size_t d, double *y, std::size_t ys,
                    std::size_t out_len) {
  const std::size_t full = out_len / kTileT * kTileT;
  for (std::size_t t = 0; t < full; t += kTileT) {
    std::size_t o0 = 0;
    for (; o0 + 4 <= cout; o0 += 4)
      forward_tile<4>(x, xs, cin, wp, cout, K, d, y, ys, t, o0);
    switch (cout - o0) {
    case 3: forward_tile<3>(x, xs, cin, wp, cout, K, d, y, ys, t, o0); break;
    case 2: forward_tile<2>(x, xs, cin, wp, cout, K, d, y, ys, t, o0); break;
    case 1: forward_tile<1>(x, xs, cin, wp, cout, K, d, y, ys, t, o0); break;
    default: break;
    }
  }
  for (std::size_t o = 0; o < cout; ++o) {
    for (std::size_t t = full; t < out_len; ++t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < cin; ++i)
        for (std::size_t k = 0; k < K; ++k)
          acc += wp[(i * K + k) * cout + o] * x[i * xs + t + k * d];
      y[o * ys + t] += acc;
    }
  }
}

template <int OB, int KB>
void weight_grad_tile(const double *xi, const double *dy, std::size_t dys, std::size_t o0,
                      std::size_t k0, std::size_t d, std::size_t out_len, double *dw,
                      std::size_t cin, std::size_t K, std::size_t i) {
  v8d acc[OB][KB] = {};
  const std::size_t full = out_len / kLanes * kLanes;
  for (std::size_t t = 0; t < full; t += kLanes) {
    v8d g[OB];
    for (int o = 0; o < OB; ++o)
      g[o] = load(dy + (o0 + o) * dys + t);
    for (int kb = 0; kb < KB; ++kb) {
      const v8d xv = load(xi + t + (k0 + kb) * d);
      for (int o = 0; o < OB; ++o)
        acc[o][kb] += g[o] * xv;
    }
  }
  for (int o = 0; o < OB; ++o) {
    for (int kb = 0; kb < KB; ++kb) {
      double s = 0.0;
      for (std::size_t l = 0; l < kLanes; ++l)
        s += acc[o][kb][l];
      const double *g = dy + (o0 + o) * dys;
      const double *xp = xi + (k0 + kb) * d;
      for (std::size_t t = full; t < out_len; ++t)
        s += g[t] * xp[t];
      dw[((o0 + o) * cin + i) * K + k0 + kb] += s;
    }
  }
}

template <int OB>
void weight_grad_kblocks(const double *xi, const double *dy, std::size_t dys, std::size_t o0,
                         std::size_t d, std::size_t out_len, double *dw, std::size_t cin,
                         std::size_t K, std::size_t i) {
  std::size_t k0 = 0;
  for (; k0 + 5 <= K; k0 += 5)
    weight_grad_tile<OB, 5>(xi, dy, dys, o0, k0, d, out_len, dw, cin, K, i);
  switch (K - k0) {
  case 4: weight_grad_tile<OB, 4>(xi, dy, dys, o0, k0, d, out_len, dw, cin, K, i); break;
  case 3: weight_grad_tile<OB, 3>(xi, dy, dys, o0, k0, d, out_len, dw, cin, K, i); break;
  case 2: weight_grad_tile<OB, 2>(xi, dy, dys, o0, k0, d, out_len, dw, cin, K, i); break;
  case 1: weight_grad_tile<OB, 1>(xi, dy, dys, o0, k0, d, out_len, dw, cin, K, i); break;
  default: break;
  }
}

} // namespace

void conv_forward(const double *x, std::size_t x_stride, std::size_t in_ch, const double *w,
                  std::size_t out_ch, std::size_t kernel, std::size_t dilation, double *y,
                  std::size_t y_stride, std::size_t out_len) {
  std::vector<double> wp(in_ch * kernel * out_ch);
  for (std::size_t o = 0; o < out_ch; ++o)
    for (std::size_t i = 0; i < in_ch; ++i)
      for (std::size_t k = 0; k < kernel; ++k)
        wp[(i * kernel + k) * out_ch + o] = w[(o * in_ch + i) * kernel + k];
  forward_packed(x, x_stride, in_ch, wp.data(), out_ch, kernel, dilation, y, y_stride, out_len);
}

void conv_weight_grad(const double *x, std::size_t x_stride, std::size_t in_ch, const double *dy,
                      std::size_t dy_stride, std::size_t out_ch, std::size_t kernel,
                      std::size_t dilation, std::size_t out_len, double *dw) {
  for (std::size_t i = 0; i < in_ch; ++i) {
    const double *xi = x + i * x_stride;
    std::size_t o0 = 0;
    for (; o0 + 4 <= out_ch; o0 += 4)
      weight_grad_kblocks<4>(xi, dy, dy_stride, o0, dilation, out_len, dw, in_ch, kernel, i);
    switch (out_ch - o0) {
    case 3: weight_grad_kblocks<3>(xi, dy, dy_stride, o0, dilation, out_len, dw, in_ch, kernel, i); break;
    case 2: weight_grad_kblocks<2>(xi, dy, dy_stride, o0, dilation, out_len, dw, in_ch, kernel, i); break;
    case 1: weight_grad_kblocks<1>(xi, dy, dy_stride, o0, dilation, out_len, dw, in_ch, kernel, i); break;
    default: break;
    }
  }
}

void conv_input_grad(const double *dy, std::size_t dy_stride, std::size_t out_ch,
                     const double *w, std::size_t in_ch, std::size_t kernel,
                     std::size_t dilation, std::size_t out_len, double *dx,
                     std::size_t dx_stride) {
  // Correlation of the zero-padded output gradient with the flipped kernel.
  const std::size_t pad = (kernel - 1) * dilation;
  const std::size_t padded_len = out_len + 2 * pad;
  std::vector<double> padded(out_ch * padded_len, 0.0);
  for (std::size_t o = 0; o < out_ch; ++o)
    std::copy_n(dy + o * dy_stride, out_len, padded.begin() + o * padded_len + pad);
  std::vector<double> wp(out_ch * kernel * in_ch);
  for (std::size_t o = 0; o < out_ch; ++o)
    for (std::size_t i = 0; i < in_ch; ++i)
      for (std::size_t k = 0; k < kernel; ++k)
        wp[(o * kernel + (kernel - 1 - k)) * in_ch + i] = w[(o * in_ch + i) * kernel + k];
  forward_packed(padded.data(), padded_len, out_ch, wp.data(), in_ch, kernel, dilation, dx,
                 dx_stride, out_len + pad);
}

} // namespace dmc::ag::kernels
