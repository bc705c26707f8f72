#pragma once

#include <cstddef>

namespace dmc::ag::kernels {

// Single-example dilated convolution, stride 1, no padding. Rows are
// contiguous in time; `*_stride` is the distance between channel rows.

/// y[o, t] += sum_i sum_k w[o, i, k] x[i, t + k d],  t < out_len.
/// `w` is in the natural [out, in, kernel] layout.
void conv_forward(const double *x, std::size_t x_stride, std::size_t in_ch,
                  const double *w, std::size_t out_ch, std::size_t kernel, std::size_t dilation,
                  double *y, std::size_t y_stride, std::size_t out_len);

/// dw[o, i, k] += sum_t dy[o, t] x[i, t + k d]
void conv_weight_grad(const double *x, std::size_t x_stride, std::size_t in_ch,
                      const double *dy, std::size_t dy_stride, std::size_t out_ch,
                      std::size_t kernel, std::size_t dilation, std::size_t out_len, double *dw);

/// dx[i, s] += sum_o sum_k w[o, i, k] dy[o, s - k d]
void conv_input_grad(const double *dy, std::size_t dy_stride, std::size_t out_ch,
                     const double *w, std::size_t in_ch, std::size_t kernel, std::size_t dilation,
                     std::size_t out_len, double *dx, std::size_t dx_stride);

} // namespace dmc::ag::kernels
