#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dmc/autograd.hpp"

namespace dmc::ag {

/// Named leaf parameters in insertion order.
class ParamStore {
public:
  Tensor add(const std::string &name, Shape shape, std::vector<double> values);
  const Tensor &get(const std::string &name) const;
  bool contains(const std::string &name) const { return index_.contains(name); }

  const std::vector<std::pair<std::string, Tensor>> &items() const { return items_; }
  std::vector<Tensor> tensors() const;
  std::size_t total_size() const;

  void zero_grad();
  void set_requires_grad(bool on);
  /// Euclidean norm over every gradient.
  double grad_norm() const;

private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  Adam(std::vector<Tensor> params, AdamOptions opt = {});
  /// One bias-corrected update from the gradients currently held by the
  /// parameters. A parameter with no gradient counts as zero.
  void step();
  double lr() const { return opt_.lr; }
  void set_lr(double lr) { opt_.lr = lr; }
  std::int64_t steps() const { return t_; }

private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions opt_;
  std::int64_t t_ = 0;
};

/// Halves (by default) the learning rate once the monitored loss has gone
/// `patience` epochs without a strict improvement.
class PlateauScheduler {
public:
  PlateauScheduler(double lr, std::size_t patience, double factor = 0.5);
  /// Feed one epoch's validation loss; returns the learning rate to use next.
  double update(double val_loss);
  double lr() const { return lr_; }
  double best() const { return best_; }
  std::size_t stagnant_epochs() const { return stagnant_; }

private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double best_;
  bool seen_ = false;
  std::size_t stagnant_ = 0;
};

} // namespace dmc::ag
