#include "dmc/optim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dmc::ag {

Tensor ParamStore::add(const std::string &name, Shape shape, std::vector<double> values) {
  if (index_.contains(name))
    throw std::invalid_argument("duplicate parameter name " + name);
  auto t = Tensor::parameter(std::move(shape), std::move(values));
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return t;
}

const Tensor &ParamStore::get(const std::string &name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw std::out_of_range("no parameter named " + name);
  return items_[it->second].second;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto &[_, t] : items_)
    out.push_back(t);
  return out;
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto &[_, t] : items_)
    n += t.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto &[_, t] : items_)
    t.zero_grad();
}

void ParamStore::set_requires_grad(bool on) {
  for (auto &[_, t] : items_)
    t.set_requires_grad(on);
}

double ParamStore::grad_norm() const {
  double s = 0.0;
  for (const auto &[_, t] : items_)
    for (double g : t.grad())
      s += g * g;
  return std::sqrt(s);
}

Adam::Adam(std::vector<Tensor> params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
  for (const auto &p : params_) {
    if (!p.is_leaf())
      throw std::invalid_argument("Adam: parameters must be leaf tensors");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    auto g = params_[p].grad();
    if (!g.empty() && g.size() != params_[p].size())
      throw std::logic_error("Adam: gradient shape mismatch");
    auto x = params_[p].mutable_values();
    auto &m = m_[p];
    auto &v = v_[p];
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      x[i] -= opt_.lr * mh / (std::sqrt(vh) + opt_.eps);
    }
  }
}

PlateauScheduler::PlateauScheduler(double lr, std::size_t patience, double factor)
    : lr_(lr), patience_(patience), factor_(factor),
      best_(std::numeric_limits<double>::infinity()) {
  if (patience == 0 || !(factor > 0.0 && factor < 1.0))
    throw std::invalid_argument("PlateauScheduler: patience must be positive and factor in (0, 1)");
}

double PlateauScheduler::update(double val_loss) {
  if (!seen_ || val_loss < best_) {
    seen_ = true;
    best_ = val_loss;
    stagnant_ = 0;
    return lr_;
  }
  if (++stagnant_ >= patience_) {
    lr_ *= factor_;
    stagnant_ = 0;
  }
  return lr_;
}

} // namespace dmc::ag
