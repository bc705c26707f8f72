#pragma once

#include <algorithm>
#include <span>

namespace dmc {

/// Sum whose result does not depend on the order of `values`: the terms are
/// added in ascending order. Reorders `values`.
inline double order_invariant_sum(std::span<double> values) {
  if (values.size() > 2)
    std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values)
    acc += v;
  return acc;
}

} // namespace dmc
