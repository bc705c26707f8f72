#pragma once

// Reverse-mode automatic differentiation over dense float64 arrays.
//
// Every op records itself when at least one input requires a gradient.
// backward() walks the recorded graph in reverse topological order and then
// releases it; a second backward over the same graph is an error. Leaf
// gradients accumulate until zero_grad().
//
// Broadcasting is limited to the leading-batch form: in add/sub/mul the
// smaller operand's shape must equal a suffix of the larger one's (a scalar
// has the empty shape).

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dmc/rng.hpp"

namespace dmc::ag {

using Shape = std::vector<std::size_t>;

enum class Mode { train, infer };

std::size_t shape_size(const Shape &s);
std::string shape_string(const Shape &s);

namespace detail {
struct Node;
}

class Tensor {
public:
  Tensor() = default;

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape &shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's values (optimizers, gradient checking).
  std::span<double> mutable_values();
  /// Empty until a backward pass reaches this tensor.
  std::span<const double> grad() const;
  bool requires_grad() const;
  bool is_leaf() const;
  void set_requires_grad(bool on);
  void zero_grad();

  double item() const;
  /// Same values, no history.
  Tensor detach() const;

  const std::shared_ptr<detail::Node> &node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
  std::shared_ptr<detail::Node> node_;
};

/// Propagates d(loss)/d(leaf) into every reachable leaf that requires a
/// gradient. `loss` must hold exactly one element.
void backward(const Tensor &loss);

// --- elementwise arithmetic -------------------------------------------------
Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor mul(const Tensor &a, const Tensor &b);
Tensor mul_scalar(const Tensor &a, double c);
Tensor add_scalar(const Tensor &a, double c);

inline Tensor operator+(const Tensor &a, const Tensor &b) { return add(a, b); }
inline Tensor operator-(const Tensor &a, const Tensor &b) { return sub(a, b); }
inline Tensor operator*(const Tensor &a, const Tensor &b) { return mul(a, b); }
inline Tensor operator*(const Tensor &a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor &a) { return mul_scalar(a, c); }
inline Tensor operator+(const Tensor &a, double c) { return add_scalar(a, c); }
inline Tensor operator-(const Tensor &a) { return mul_scalar(a, -1.0); }

// --- unary ------------------------------------------------------------------
Tensor abs(const Tensor &x);
/// Requires strictly positive inputs; add an epsilon first where needed.
Tensor log(const Tensor &x);
Tensor sqrt(const Tensor &x);
Tensor exp(const Tensor &x);
Tensor sin(const Tensor &x);
Tensor cos(const Tensor &x);
Tensor power(const Tensor &x, double p);
Tensor sigmoid(const Tensor &x);
Tensor tanh(const Tensor &x);
/// 10^(x/20), evaluated exactly as dmc::db_to_linear.
Tensor db_to_amp(const Tensor &x);

// --- reductions -------------------------------------------------------------
Tensor sum(const Tensor &x);
Tensor mean(const Tensor &x);
Tensor mean_axis(const Tensor &x, std::size_t axis);
/// Sum over axis 0 whose result does not depend on the order of the rows.
Tensor set_sum(const Tensor &x);
/// Mean over axis 0 whose result does not depend on the order of the rows.
Tensor set_mean(const Tensor &x);

// --- shape ------------------------------------------------------------------
Tensor reshape(const Tensor &x, Shape shape);
Tensor concat(const std::vector<Tensor> &parts, std::size_t axis);
Tensor slice(const Tensor &x, std::size_t axis, std::size_t start, std::size_t length);
/// Symmetric crop of `axis` down to `length`.
Tensor center_crop(const Tensor &x, std::size_t axis, std::size_t length);

// --- linear algebra and layers ----------------------------------------------
/// [n, k] x [k, m] -> [n, m]
Tensor matmul(const Tensor &a, const Tensor &b);

/// x [batch, in, time], weight [out, in, kernel], optional bias [out].
/// No padding: out_len = floor((in_len - dilation * (kernel - 1) - 1) / stride) + 1.
Tensor conv1d(const Tensor &x, const Tensor &weight, const Tensor &bias,
              std::size_t dilation = 1, std::size_t stride = 1);
std::size_t conv1d_output_length(std::size_t in_len, std::size_t kernel,
                                 std::size_t dilation, std::size_t stride = 1);

/// Parametric ReLU. `slope` has one element or one per channel (axis 1).
Tensor prelu(const Tensor &x, const Tensor &slope);

struct BatchNormStats {
  std::vector<double> mean;
  std::vector<double> var;
  explicit BatchNormStats(std::size_t channels = 0) : mean(channels, 0.0), var(channels, 1.0) {}
};

/// Per-channel normalization (channel axis 1) without affine parameters.
/// Training mode uses batch statistics over every axis except 1 and updates
/// `running` (when given) with `momentum`; inference mode uses `running`.
Tensor batchnorm(const Tensor &x, BatchNormStats *running, Mode mode,
                 double momentum = 0.1, double eps = 1e-5);

/// Feature-wise affine modulation: x [b, c, t], gamma and beta [b, c].
Tensor film(const Tensor &x, const Tensor &gamma, const Tensor &beta);

/// Inverted dropout; the identity in inference mode.
Tensor dropout(const Tensor &x, double p, Mode mode, Rng *rng);

// --- spectral ---------------------------------------------------------------
/// Overlapping frames of a 1-D signal: [len] -> [n_frames, size].
Tensor frame(const Tensor &x, std::size_t size, std::size_t hop);
/// |real FFT| over the last axis: [..., n] -> [..., n/2 + 1].
Tensor rfft_mag(const Tensor &x);

// --- helpers for ops defined outside this file ------------------------------

using BackwardFn = std::function<void(std::span<const double> out_value,
                                      std::span<const double> out_grad,
                                      std::span<std::vector<double> *const> input_grads)>;

/// Wraps a custom forward result as a recorded op. `backward` receives the
/// forward output, its gradient and one gradient buffer per input (null when
/// that input does not require a gradient); it must accumulate into them.
Tensor make_op(const char *name, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, BackwardFn backward);

} // namespace dmc::ag
