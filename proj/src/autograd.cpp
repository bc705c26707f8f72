#include "dmc/autograd.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "conv_kernels.hpp"
#include "dmc/audio.hpp"
#include "dmc/fft.hpp"
#include "dmc/summation.hpp"

namespace dmc::ag {

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  const char *op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};
} // namespace detail

using detail::Node;

std::size_t shape_size(const Shape &s) {
  std::size_t n = 1;
  for (auto d : s)
    n *= d;
  return n;
}

std::string shape_string(const Shape &s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i)
    os << (i ? ", " : "") << s[i];
  os << ']';
  return os.str();
}

namespace {

std::shared_ptr<Node> leaf_node(Shape shape, std::vector<double> values, bool rg) {
  if (values.size() != shape_size(shape))
    throw std::invalid_argument("tensor of shape " + shape_string(shape) + " given " +
                                std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = rg;
  return n;
}

const Node &nd(const Tensor &t) {
  if (!t.defined())
    throw std::invalid_argument("operation on an undefined tensor");
  return *t.node();
}

// product of dims in [from, to)
std::size_t span_size(const Shape &s, std::size_t from, std::size_t to) {
  std::size_t n = 1;
  for (std::size_t i = from; i < to; ++i)
    n *= s[i];
  return n;
}

} // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  return Tensor(leaf_node(std::move(shape), std::move(values), false));
}
Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  return Tensor(leaf_node(std::move(shape), std::move(values), true));
}
Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}
Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_size(shape);
  return Tensor(leaf_node(std::move(shape), std::vector<double>(n, value), requires_grad));
}
Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(leaf_node({}, {value}, requires_grad));
}

const Shape &Tensor::shape() const { return nd(*this).shape; }
std::size_t Tensor::dim(std::size_t axis) const {
  const auto &s = shape();
  if (axis >= s.size())
    throw std::out_of_range("axis " + std::to_string(axis) + " out of range for shape " +
                            shape_string(s));
  return s[axis];
}
std::size_t Tensor::size() const { return nd(*this).value.size(); }
std::span<const double> Tensor::values() const { return nd(*this).value; }

std::span<double> Tensor::mutable_values() {
  if (!nd(*this).leaf)
    throw std::logic_error("only leaf tensors can be modified in place");
  return node_->value;
}

std::span<const double> Tensor::grad() const { return nd(*this).grad; }
bool Tensor::requires_grad() const { return nd(*this).requires_grad; }
bool Tensor::is_leaf() const { return nd(*this).leaf; }

void Tensor::set_requires_grad(bool on) {
  if (!nd(*this).leaf)
    throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
}

void Tensor::zero_grad() {
  if (node_)
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1)
    throw std::invalid_argument("item() on a tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const {
  return Tensor(leaf_node(shape(), node_->value, false));
}

// ---------------------------------------------------------------------------
// Graph

namespace {
// exponent bits all set means inf or nan; integer form so it vectorizes
bool all_finite(const std::vector<double> &v) {
  constexpr std::uint64_t mask = 0x7ff0000000000000ull;
  std::uint64_t bad = 0;
  for (double x : v)
    bad |= static_cast<std::uint64_t>((std::bit_cast<std::uint64_t>(x) & mask) == mask);
  return bad == 0;
}
} // namespace

Tensor make_op(const char *name, Shape shape, std::vector<double> values,
               std::vector<Tensor> inputs, BackwardFn backward) {
  if (values.size() != shape_size(shape))
    throw std::logic_error(std::string(name) + ": output size does not match shape");
  bool rg = false;
  for (const auto &in : inputs) {
    const Node &n = nd(in);
    if (n.released)
      throw std::logic_error(std::string(name) +
                             ": input belongs to a graph already consumed by backward");
    rg = rg || n.requires_grad;
  }
  if (!all_finite(values))
    throw std::domain_error(std::string(name) + " produced a non-finite value");

  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->op = name;
  if (rg) {
    n->requires_grad = true;
    n->leaf = false;
    n->inputs.reserve(inputs.size());
    for (auto &in : inputs)
      n->inputs.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor &loss) {
  if (!loss.defined() || loss.size() != 1)
    throw std::invalid_argument("backward: the loss must hold exactly one element");
  Node *root = loss.node().get();
  if (root->released)
    throw std::logic_error("backward: this graph was already consumed by a previous backward");
  if (!root->requires_grad)
    throw std::logic_error("backward: the loss does not depend on any parameter");

  // iterative post-order DFS over nodes that carry a gradient
  std::vector<Node *> order;
  std::unordered_set<Node *> seen{root};
  std::vector<std::pair<Node *, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto &[n, next] = stack.back();
    if (next < n->inputs.size()) {
      Node *c = n->inputs[next++].get();
      if (c->requires_grad && !c->leaf && seen.insert(c).second)
        stack.push_back({c, 0});
      continue;
    }
    order.push_back(n);
    stack.pop_back();
  }

  if (root->leaf) {
    root->grad.resize(1, 0.0);
    root->grad[0] += 1.0;
    return;
  }
  root->grad.assign(1, 1.0);
  std::vector<std::vector<double> *> grads;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *n = *it;
    if (n->grad.empty() || !n->backward)
      continue;
    grads.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node *c = n->inputs[i].get();
      if (!c->requires_grad)
        continue;
      if (c->grad.size() != c->value.size())
        c->grad.assign(c->value.size(), 0.0);
      grads[i] = &c->grad;
    }
    n->backward(n->value, n->grad, grads);
  }

  for (Node *n : order) {
    n->backward = nullptr;
    n->inputs.clear();
    n->grad.clear();
    n->grad.shrink_to_fit();
    n->released = true;
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

namespace {

bool is_suffix(const Shape &small, const Shape &big) {
  if (small.size() > big.size())
    return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

enum class Bin { add, sub, mul };

// The smaller operand repeats every `inner` elements of the larger one.
template <class F>
void broadcast_apply(std::size_t n, std::size_t inner, F f) {
  for (std::size_t o = 0; o < n; o += inner)
    for (std::size_t j = 0; j < inner; ++j)
      f(o + j, j);
}

Tensor binary(const char *name, Bin kind, const Tensor &a, const Tensor &b) {
  const auto &sa = a.shape();
  const auto &sb = b.shape();
  const bool a_big = is_suffix(sb, sa);
  if (!a_big && !is_suffix(sa, sb))
    throw std::invalid_argument(std::string(name) + ": shapes " + shape_string(sa) + " and " +
                                shape_string(sb) + " do not broadcast");
  const Shape out_shape = a_big ? sa : sb;
  const std::size_t n = shape_size(out_shape);
  const std::size_t small = a_big ? b.size() : a.size();
  // big[i] op small[j]
  const double *big = (a_big ? a.values() : b.values()).data();
  const double *sm = (a_big ? b.values() : a.values()).data();
  std::vector<double> y(n);
  if (n > 0) {
    if (kind == Bin::add)
      broadcast_apply(n, small, [&](std::size_t i, std::size_t j) { y[i] = big[i] + sm[j]; });
    else if (kind == Bin::mul)
      broadcast_apply(n, small, [&](std::size_t i, std::size_t j) { y[i] = big[i] * sm[j]; });
    else if (a_big)
      broadcast_apply(n, small, [&](std::size_t i, std::size_t j) { y[i] = big[i] - sm[j]; });
    else
      broadcast_apply(n, small, [&](std::size_t i, std::size_t j) { y[i] = sm[j] - big[i]; });
  }
  return make_op(name, out_shape, std::move(y), {a, b},
                 [a, b, kind, n, small, a_big](auto, std::span<const double> g, auto grads) {
                   if (n == 0)
                     return;
                   const double *big = (a_big ? a.values() : b.values()).data();
                   const double *sm = (a_big ? b.values() : a.values()).data();
                   auto *gbig = a_big ? grads[0] : grads[1];
                   auto *gsm = a_big ? grads[1] : grads[0];
                   // d(out)/d(operand) sign for subtraction
                   const double sbig = kind == Bin::sub && !a_big ? -1.0 : 1.0;
                   const double ssm = kind == Bin::sub && a_big ? -1.0 : 1.0;
                   if (gbig) {
                     double *gb = gbig->data();
                     if (kind == Bin::mul)
                       broadcast_apply(n, small, [&](std::size_t i, std::size_t j) { gb[i] += g[i] * sm[j]; });
                     else if (sbig > 0)
                       for (std::size_t i = 0; i < n; ++i)
                         gb[i] += g[i];
                     else
                       for (std::size_t i = 0; i < n; ++i)
                         gb[i] -= g[i];
                   }
                   if (gsm) {
                     double *gs = gsm->data();
                     if (kind == Bin::mul)
                       broadcast_apply(n, small, [&](std::size_t i, std::size_t j) { gs[j] += g[i] * big[i]; });
                     else
                       broadcast_apply(n, small, [&](std::size_t i, std::size_t j) { gs[j] += ssm * g[i]; });
                   }
                 });
}

// y = f(x) elementwise; df(x, y) is dy/dx
template <class F, class DF>
Tensor unary(const char *name, const Tensor &x, F f, DF df) {
  auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = f(xv[i]);
  return make_op(name, x.shape(), std::move(y), {x},
                 [x, df](std::span<const double> y, std::span<const double> g, auto grads) {
                   auto xv = x.values();
                   auto &gx = *grads[0];
                   for (std::size_t i = 0; i < g.size(); ++i)
                     gx[i] += g[i] * df(xv[i], y[i]);
                 });
}

} // namespace

Tensor add(const Tensor &a, const Tensor &b) { return binary("add", Bin::add, a, b); }
Tensor sub(const Tensor &a, const Tensor &b) { return binary("sub", Bin::sub, a, b); }
Tensor mul(const Tensor &a, const Tensor &b) { return binary("mul", Bin::mul, a, b); }

Tensor mul_scalar(const Tensor &a, double c) {
  return unary("mul_scalar", a, [c](double x) { return x * c; },
               [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor &a, double c) {
  return unary("add_scalar", a, [c](double x) { return x + c; },
               [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Unary

Tensor abs(const Tensor &x) {
  return unary("abs", x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : v < 0.0 ? -1.0 : 0.0; });
}

Tensor log(const Tensor &x) {
  for (double v : x.values())
    if (!(v > 0.0))
      throw std::domain_error("log of a non-positive value (" + std::to_string(v) +
                              "); add an epsilon first");
  return unary("log", x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor &x) {
  for (double v : x.values())
    if (v < 0.0)
      throw std::domain_error("sqrt of a negative value");
  // the derivative at 0 is taken as 0
  return unary("sqrt", x, [](double v) { return std::sqrt(v); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor exp(const Tensor &x) {
  return unary("exp", x, [](double v) { return std::exp(v); },
               [](double, double y) { return y; });
}

Tensor sin(const Tensor &x) {
  return unary("sin", x, [](double v) { return std::sin(v); },
               [](double v, double) { return std::cos(v); });
}

Tensor cos(const Tensor &x) {
  return unary("cos", x, [](double v) { return std::cos(v); },
               [](double v, double) { return -std::sin(v); });
}

Tensor power(const Tensor &x, double p) {
  return unary("power", x, [p](double v) { return std::pow(v, p); },
               [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

Tensor sigmoid(const Tensor &x) {
  return unary(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0)
          return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor &x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor db_to_amp(const Tensor &x) {
  constexpr double k = std::numbers::ln10 / 20.0;
  return unary("db_to_amp", x, [](double v) { return db_to_linear(v); },
               [](double, double y) { return y * k; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor &x) {
  double acc = 0.0;
  for (double v : x.values())
    acc += v;
  return make_op("sum", {}, {acc}, {x}, [](auto, std::span<const double> g, auto grads) {
    for (double &v : *grads[0])
      v += g[0];
  });
}

Tensor mean(const Tensor &x) {
  const double n = static_cast<double>(x.size());
  if (x.size() == 0)
    throw std::invalid_argument("mean of an empty tensor");
  double acc = 0.0;
  for (double v : x.values())
    acc += v;
  return make_op("mean", {}, {acc / n}, {x}, [n](auto, std::span<const double> g, auto grads) {
    for (double &v : *grads[0])
      v += g[0] / n;
  });
}

Tensor mean_axis(const Tensor &x, std::size_t axis) {
  const auto &s = x.shape();
  const std::size_t len = x.dim(axis);
  if (len == 0)
    throw std::invalid_argument("mean over an empty axis");
  const std::size_t outer = span_size(s, 0, axis);
  const std::size_t inner = span_size(s, axis + 1, s.size());
  Shape out_shape = s;
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  auto xv = x.values();
  std::vector<double> y(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        y[o * inner + i] += xv[(o * len + l) * inner + i];
  for (double &v : y)
    v /= static_cast<double>(len);
  return make_op("mean_axis", std::move(out_shape), std::move(y), {x},
                 [outer, len, inner](auto, std::span<const double> g, auto grads) {
                   auto &gx = *grads[0];
                   const double inv = 1.0 / static_cast<double>(len);
                   for (std::size_t o = 0; o < outer; ++o)
                     for (std::size_t l = 0; l < len; ++l)
                       for (std::size_t i = 0; i < inner; ++i)
                         gx[(o * len + l) * inner + i] += g[o * inner + i] * inv;
                 });
}

namespace {
Tensor set_reduce(const char *name, const Tensor &x, double scale) {
  const auto &s = x.shape();
  if (s.empty() || s[0] == 0)
    throw std::invalid_argument(std::string(name) + ": needs at least one row");
  const std::size_t rows = s[0];
  const std::size_t inner = x.size() / rows;
  auto xv = x.values();
  std::vector<double> y(inner);
  std::vector<double> col(rows);
  for (std::size_t i = 0; i < inner; ++i) {
    for (std::size_t r = 0; r < rows; ++r)
      col[r] = xv[r * inner + i];
    y[i] = order_invariant_sum(col) * scale;
  }
  return make_op(name, Shape(s.begin() + 1, s.end()), std::move(y), {x},
                 [rows, inner, scale](auto, std::span<const double> g, auto grads) {
                   auto &gx = *grads[0];
                   for (std::size_t r = 0; r < rows; ++r)
                     for (std::size_t i = 0; i < inner; ++i)
                       gx[r * inner + i] += g[i] * scale;
                 });
}
} // namespace

Tensor set_sum(const Tensor &x) { return set_reduce("set_sum", x, 1.0); }
Tensor set_mean(const Tensor &x) {
  if (x.rank() == 0 || x.dim(0) == 0)
    throw std::invalid_argument("set_mean: needs at least one row");
  return set_reduce("set_mean", x, 1.0 / static_cast<double>(x.dim(0)));
}

// ---------------------------------------------------------------------------
// Shape

Tensor reshape(const Tensor &x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw std::invalid_argument("reshape " + shape_string(x.shape()) + " -> " +
                                shape_string(shape) + " changes the element count");
  auto xv = x.values();
  return make_op("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                 [](auto, std::span<const double> g, auto grads) {
                   auto &gx = *grads[0];
                   for (std::size_t i = 0; i < g.size(); ++i)
                     gx[i] += g[i];
                 });
}

Tensor concat(const std::vector<Tensor> &parts, std::size_t axis) {
  if (parts.empty())
    throw std::invalid_argument("concat of nothing");
  const Shape &s0 = parts[0].shape();
  if (axis >= s0.size())
    throw std::out_of_range("concat axis out of range");
  std::vector<std::size_t> lens;
  std::size_t total = 0;
  for (const auto &p : parts) {
    const Shape &s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      ok = d == axis || s[d] == s0[d];
    if (!ok)
      throw std::invalid_argument("concat: shape " + shape_string(s) + " does not match " +
                                  shape_string(s0));
    lens.push_back(s[axis]);
    total += s[axis];
  }
  const std::size_t outer = span_size(s0, 0, axis);
  const std::size_t inner = span_size(s0, axis + 1, s0.size());
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::vector<double> y(outer * total * inner);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    const std::size_t block = lens[p] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  y.begin() + static_cast<std::ptrdiff_t>(o * total * inner + off));
    off += block;
  }
  return make_op("concat", std::move(out_shape), std::move(y), parts,
                 [lens, outer, inner, total](auto, std::span<const double> g, auto grads) {
                   std::size_t off = 0;
                   for (std::size_t p = 0; p < lens.size(); ++p) {
                     const std::size_t block = lens[p] * inner;
                     if (auto *gp = grads[p])
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t j = 0; j < block; ++j)
                           (*gp)[o * block + j] += g[o * total * inner + off + j];
                     off += block;
                   }
                 });
}

Tensor slice(const Tensor &x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape &s = x.shape();
  const std::size_t len = x.dim(axis);
  if (start + length > len)
    throw std::out_of_range("slice [" + std::to_string(start) + ", " +
                            std::to_string(start + length) + ") exceeds axis length " +
                            std::to_string(len));
  const std::size_t outer = span_size(s, 0, axis);
  const std::size_t inner = span_size(s, axis + 1, s.size());
  Shape out_shape = s;
  out_shape[axis] = length;
  auto xv = x.values();
  std::vector<double> y(outer * length * inner);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * len + start) * inner),
                length * inner, y.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  return make_op("slice", std::move(out_shape), std::move(y), {x},
                 [outer, len, start, length, inner](auto, std::span<const double> g, auto grads) {
                   auto &gx = *grads[0];
                   for (std::size_t o = 0; o < outer; ++o)
                     for (std::size_t j = 0; j < length * inner; ++j)
                       gx[(o * len + start) * inner + j] += g[o * length * inner + j];
                 });
}

Tensor center_crop(const Tensor &x, std::size_t axis, std::size_t length) {
  const std::size_t len = x.dim(axis);
  if (length > len)
    throw std::invalid_argument("center_crop to " + std::to_string(length) +
                                " is longer than the axis (" + std::to_string(len) + ")");
  if (length == len)
    return x;
  return slice(x, axis, (len - length) / 2, length);
}

// ---------------------------------------------------------------------------
// Linear algebra and layers

Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                                shape_string(b.shape()));
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> y(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      const double *brow = bv.data() + p * m;
      double *yrow = y.data() + i * m;
      for (std::size_t j = 0; j < m; ++j)
        yrow[j] += s * brow[j];
    }
  return make_op("matmul", {n, m}, std::move(y), {a, b},
                 [a, b, n, k, m](auto, std::span<const double> g, auto grads) {
                   auto av = a.values();
                   auto bv = b.values();
                   if (auto *ga = grads[0])
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         double acc = 0.0;
                         for (std::size_t j = 0; j < m; ++j)
                           acc += g[i * m + j] * bv[p * m + j];
                         (*ga)[i * k + p] += acc;
                       }
                   if (auto *gb = grads[1])
                     for (std::size_t i = 0; i < n; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         const double s = av[i * k + p];
                         for (std::size_t j = 0; j < m; ++j)
                           (*gb)[p * m + j] += s * g[i * m + j];
                       }
                 });
}

std::size_t conv1d_output_length(std::size_t in_len, std::size_t kernel, std::size_t dilation,
                                 std::size_t stride) {
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (kernel == 0 || dilation == 0 || stride == 0)
    throw std::invalid_argument("conv1d: kernel, dilation and stride must be positive");
  if (in_len < span)
    throw std::invalid_argument("conv1d: input of length " + std::to_string(in_len) +
                                " is shorter than the kernel span " + std::to_string(span));
  return (in_len - span) / stride + 1;
}

Tensor conv1d(const Tensor &x, const Tensor &weight, const Tensor &bias, std::size_t dilation,
              std::size_t stride) {
  if (x.rank() != 3 || weight.rank() != 3 || x.dim(1) != weight.dim(1))
    throw std::invalid_argument("conv1d: input " + shape_string(x.shape()) + " and weight " +
                                shape_string(weight.shape()) + " do not match");
  const std::size_t B = x.dim(0), Cin = x.dim(1), Tin = x.dim(2);
  const std::size_t Cout = weight.dim(0), K = weight.dim(2);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != Cout))
    throw std::invalid_argument("conv1d: bias must have shape [" + std::to_string(Cout) + "]");
  const std::size_t Tout = conv1d_output_length(Tin, K, dilation, stride);

  auto xv = x.values();
  auto wv = weight.values();
  std::vector<double> y(B * Cout * Tout, 0.0);
  if (has_bias) {
    auto bv = bias.values();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < Cout; ++o)
        std::fill_n(y.begin() + static_cast<std::ptrdiff_t>((b * Cout + o) * Tout), Tout, bv[o]);
  }
  for (std::size_t b = 0; b < B; ++b) {
    const double *xb = xv.data() + b * Cin * Tin;
    double *yb = y.data() + b * Cout * Tout;
    if (stride == 1) {
      kernels::conv_forward(xb, Tin, Cin, wv.data(), Cout, K, dilation, yb, Tout, Tout);
      continue;
    }
    for (std::size_t o = 0; o < Cout; ++o)
      for (std::size_t i = 0; i < Cin; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          const double w = wv[(o * Cin + i) * K + k];
          const double *xr = xb + i * Tin + k * dilation;
          double *yr = yb + o * Tout;
          for (std::size_t t = 0; t < Tout; ++t)
            yr[t] += w * xr[t * stride];
        }
  }

  std::vector<Tensor> inputs{x, weight};
  if (has_bias)
    inputs.push_back(bias);
  return make_op(
      "conv1d", {B, Cout, Tout}, std::move(y), std::move(inputs),
      [x, weight, B, Cin, Tin, Cout, K, Tout, dilation, stride,
       has_bias](auto, std::span<const double> g, auto grads) {
        auto xv = x.values();
        auto wv = weight.values();
        auto *gx = grads[0];
        auto *gw = grads[1];
        for (std::size_t b = 0; b < B; ++b) {
          const double *xb = xv.data() + b * Cin * Tin;
          const double *gb = g.data() + b * Cout * Tout;
          if (stride == 1) {
            if (gx)
              kernels::conv_input_grad(gb, Tout, Cout, wv.data(), Cin, K, dilation, Tout,
                                       gx->data() + b * Cin * Tin, Tin);
            if (gw)
              kernels::conv_weight_grad(xb, Tin, Cin, gb, Tout, Cout, K, dilation, Tout,
                                        gw->data());
            continue;
          }
          for (std::size_t o = 0; o < Cout; ++o)
            for (std::size_t i = 0; i < Cin; ++i)
              for (std::size_t k = 0; k < K; ++k) {
                const std::size_t wi = (o * Cin + i) * K + k;
                const std::size_t xoff = b * Cin * Tin + i * Tin + k * dilation;
                const double *gr = gb + o * Tout;
                double acc = 0.0;
                for (std::size_t t = 0; t < Tout; ++t) {
                  if (gx)
                    (*gx)[xoff + t * stride] += wv[wi] * gr[t];
                  acc += gr[t] * xv[xoff + t * stride];
                }
                if (gw)
                  (*gw)[wi] += acc;
              }
        }
        if (has_bias && grads[2]) {
          auto &gbias = *grads[2];
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < Cout; ++o) {
              const double *gr = g.data() + (b * Cout + o) * Tout;
              double acc = 0.0;
              for (std::size_t t = 0; t < Tout; ++t)
                acc += gr[t];
              gbias[o] += acc;
            }
        }
      });
}

Tensor prelu(const Tensor &x, const Tensor &slope) {
  const std::size_t ns = slope.size();
  std::size_t channels = 1, inner = x.size();
  if (ns != 1) {
    if (x.rank() < 2 || x.dim(1) != ns)
      throw std::invalid_argument("prelu: " + std::to_string(ns) +
                                  " slopes for input of shape " + shape_string(x.shape()));
    channels = ns;
    inner = span_size(x.shape(), 2, x.rank());
  }
  auto xv = x.values();
  auto av = slope.values();
  auto chan = [channels, inner](std::size_t i) { return channels == 1 ? 0 : (i / inner) % channels; };
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < y.size(); ++i)
    y[i] = xv[i] > 0.0 ? xv[i] : av[chan(i)] * xv[i];
  return make_op("prelu", x.shape(), std::move(y), {x, slope},
                 [x, slope, chan](auto, std::span<const double> g, auto grads) {
                   auto xv = x.values();
                   auto av = slope.values();
                   for (std::size_t i = 0; i < g.size(); ++i) {
                     const bool pos = xv[i] > 0.0;
                     if (grads[0])
                       (*grads[0])[i] += pos ? g[i] : av[chan(i)] * g[i];
                     if (grads[1] && !pos)
                       (*grads[1])[chan(i)] += g[i] * xv[i];
                   }
                 });
}

Tensor batchnorm(const Tensor &x, BatchNormStats *running, Mode mode, double momentum,
                 double eps) {
  if (x.rank() < 2)
    throw std::invalid_argument("batchnorm needs a channel axis");
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t inner = span_size(x.shape(), 2, x.rank());
  const std::size_t count = B * inner;
  if (running && (running->mean.size() != C || running->var.size() != C))
    throw std::invalid_argument("batchnorm: running statistics have the wrong size");
  if (mode == Mode::infer && !running)
    throw std::invalid_argument("batchnorm: inference mode needs running statistics");

  auto xv = x.values();
  auto at = [&](std::size_t b, std::size_t c) { return (b * C + c) * inner; };
  std::vector<double> mean(C, 0.0), invstd(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (mode == Mode::infer) {
      mean[c] = running->mean[c];
      invstd[c] = 1.0 / std::sqrt(running->var[c] + eps);
      continue;
    }
    // shifted by the first sample, so a constant channel has an exact mean
    const double shift = xv[at(0, c)];
    double s = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < inner; ++t)
        s += xv[at(b, c) + t] - shift;
    const double m = shift + s / static_cast<double>(count);
    double v = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < inner; ++t) {
        const double d = xv[at(b, c) + t] - m;
        v += d * d;
      }
    v /= static_cast<double>(count);
    mean[c] = m;
    invstd[c] = 1.0 / std::sqrt(v + eps);
    if (running) {
      const double unbiased = count > 1 ? v * static_cast<double>(count) / (count - 1.0) : v;
      running->mean[c] = (1.0 - momentum) * running->mean[c] + momentum * m;
      running->var[c] = (1.0 - momentum) * running->var[c] + momentum * unbiased;
    }
  }
  std::vector<double> y(xv.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < inner; ++t)
        y[at(b, c) + t] = (xv[at(b, c) + t] - mean[c]) * invstd[c];

  const bool train = mode == Mode::train;
  return make_op("batchnorm", x.shape(), std::move(y), {x},
                 [invstd, B, C, inner, count, train](std::span<const double> xhat,
                                                     std::span<const double> g, auto grads) {
                   auto &gx = *grads[0];
                   auto at = [&](std::size_t b, std::size_t c) { return (b * C + c) * inner; };
                   for (std::size_t c = 0; c < C; ++c) {
                     double mg = 0.0, mgx = 0.0;
                     if (train) {
                       for (std::size_t b = 0; b < B; ++b)
                         for (std::size_t t = 0; t < inner; ++t) {
                           const std::size_t i = at(b, c) + t;
                           mg += g[i];
                           mgx += g[i] * xhat[i];
                         }
                       mg /= static_cast<double>(count);
                       mgx /= static_cast<double>(count);
                     }
                     for (std::size_t b = 0; b < B; ++b)
                       for (std::size_t t = 0; t < inner; ++t) {
                         const std::size_t i = at(b, c) + t;
                         gx[i] += invstd[c] * (g[i] - mg - xhat[i] * mgx);
                       }
                   }
                 });
}

Tensor film(const Tensor &x, const Tensor &gamma, const Tensor &beta) {
  if (x.rank() < 2 || gamma.shape() != Shape{x.dim(0), x.dim(1)} || beta.shape() != gamma.shape())
    throw std::invalid_argument("film: input " + shape_string(x.shape()) + " with gamma " +
                                shape_string(gamma.shape()) + " and beta " +
                                shape_string(beta.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1);
  const std::size_t inner = x.size() / rows;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<double> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < inner; ++t)
      y[r * inner + t] = gv[r] * xv[r * inner + t] + bv[r];
  return make_op("film", x.shape(), std::move(y), {x, gamma, beta},
                 [x, gamma, rows, inner](auto, std::span<const double> g, auto grads) {
                   auto xv = x.values();
                   auto gv = gamma.values();
                   for (std::size_t r = 0; r < rows; ++r) {
                     double sg = 0.0, sgx = 0.0;
                     for (std::size_t t = 0; t < inner; ++t) {
                       const std::size_t i = r * inner + t;
                       if (grads[0])
                         (*grads[0])[i] += gv[r] * g[i];
                       sg += g[i];
                       sgx += g[i] * xv[i];
                     }
                     if (grads[1])
                       (*grads[1])[r] += sgx;
                     if (grads[2])
                       (*grads[2])[r] += sg;
                   }
                 });
}

Tensor dropout(const Tensor &x, double p, Mode mode, Rng *rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("dropout probability must lie in [0, 1)");
  if (mode == Mode::infer || p == 0.0)
    return x;
  if (!rng)
    throw std::invalid_argument("dropout in training mode needs a random stream");
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(x.size());
  for (double &m : mask)
    m = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return mul(x, Tensor::constant(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Spectral

Tensor frame(const Tensor &x, std::size_t size, std::size_t hop) {
  if (x.rank() != 1)
    throw std::invalid_argument("frame expects a 1-D signal");
  if (size == 0 || hop == 0)
    throw std::invalid_argument("frame size and hop must be positive");
  const std::size_t len = x.size();
  if (len < size)
    throw std::invalid_argument("signal of " + std::to_string(len) +
                                " samples is shorter than one frame of " + std::to_string(size));
  const std::size_t n = (len - size) / hop + 1;
  auto xv = x.values();
  std::vector<double> y(n * size);
  for (std::size_t f = 0; f < n; ++f)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(f * hop), size,
                y.begin() + static_cast<std::ptrdiff_t>(f * size));
  return make_op("frame", {n, size}, std::move(y), {x},
                 [n, size, hop](auto, std::span<const double> g, auto grads) {
                   auto &gx = *grads[0];
                   for (std::size_t f = 0; f < n; ++f)
                     for (std::size_t j = 0; j < size; ++j)
                       gx[f * hop + j] += g[f * size + j];
                 });
}

Tensor rfft_mag(const Tensor &x) {
  if (x.rank() == 0)
    throw std::invalid_argument("rfft_mag needs at least one axis");
  const std::size_t n = x.shape().back();
  const std::size_t bins = n / 2 + 1;
  const std::size_t rows = x.size() / n;
  RealFft fft(n);
  auto xv = x.values();
  auto spec = std::make_shared<std::vector<std::complex<double>>>(rows * bins);
  std::vector<double> y(rows * bins);
  for (std::size_t r = 0; r < rows; ++r) {
    std::span<std::complex<double>> out(spec->data() + r * bins, bins);
    fft.forward(xv.subspan(r * n, n), out);
    for (std::size_t k = 0; k < bins; ++k)
      y[r * bins + k] = std::abs(out[k]);
  }
  Shape out_shape = x.shape();
  out_shape.back() = bins;
  return make_op("rfft_mag", std::move(out_shape), std::move(y), {x},
                 [spec, n, bins, rows](std::span<const double> mag, std::span<const double> g,
                                       auto grads) {
                   RealFft fft(n);
                   std::vector<std::complex<double>> z(bins);
                   std::vector<double> out(n);
                   auto &gx = *grads[0];
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t k = 0; k < bins; ++k) {
                       const std::size_t i = r * bins + k;
                       const auto c = mag[i] > 0.0 ? g[i] * (*spec)[i] / mag[i]
                                                   : std::complex<double>{};
                       const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
                       z[k] = edge ? std::complex<double>(c.real(), 0.0) : c * 0.5;
                     }
                     fft.inverse(z, out);
                     for (std::size_t m = 0; m < n; ++m)
                       gx[r * n + m] += out[m];
                   }
                 });
}

} // namespace dmc::ag
