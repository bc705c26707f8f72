#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "dmc/autograd.hpp"

namespace dmc::ag {

struct GradCheckOptions {
  double h = 1e-5;
  /// At most this many coordinates per tensor, chosen at random (0 = all).
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// Each coordinate is also differenced at h/2. When the two disagree by
  /// more than this (relative, beyond round-off) a kink lies within h and the
  /// coordinate is reported instead of compared. An undetected kink biases
  /// the difference by less than 2.5 * kink_tol. 0 disables the test.
  double kink_tol = 4e-5;
};

struct GradCheckCoord {
  std::string tensor;
  std::size_t index;
  double analytic;
  double numeric;
  double rel_error;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  GradCheckCoord worst{};
  std::vector<GradCheckCoord> kinks;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Compares the tape gradient of `f` with central differences for every
/// coordinate of `inputs` (leaves that require a gradient). `f` must build a
/// fresh graph on each call and return a one-element tensor.
GradCheckResult grad_check(const std::function<Tensor()> &f,
                           std::vector<std::pair<std::string, Tensor>> inputs,
                           const GradCheckOptions &opt = {});

} // namespace dmc::ag
