#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace dmc {

/// One finite-difference check: an op or composed path at one seed.
struct SuiteCheck {
  std::string suite;
  std::string name;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  double tol = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;
  bool pass() const { return checked > 0 && max_rel_error < tol; }
};

/// Suites: grad_engine (every op, 1e-6), channel (basic channel -> stereo
/// loss), tcn (tiny TCN -> L1) and controller (end to end), 1e-4.
/// An empty list runs all of them.
std::vector<std::string> gradcheck_suite_names();
std::vector<SuiteCheck> run_gradcheck_suites(const std::vector<std::string> &suites,
                                             const std::vector<std::uint64_t> &seeds = {0, 1, 2, 3, 4});

} // namespace dmc
