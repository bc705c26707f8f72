#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmc::cli {

enum ExitCode : int { ok = 0, usage = 1, data_error = 2, numeric_failure = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// args excludes the program name. Machine-readable output goes to `out`,
/// the seed/config line and diagnostics to `err`.
int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

/// Files matching a shell pattern, sorted. Throws when nothing matches.
std::vector<std::string> expand_glob(const std::string &pattern);

} // namespace dmc::cli
