#include <malloc.h>

#include <iostream>

#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dmc/cli.hpp"

int main(int argc, char **argv) {
  // keep large buffers mapped between training steps
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  spdlog::set_default_logger(spdlog::stderr_color_mt("dmc"));
  spdlog::cfg::load_env_levels(); // SPDLOG_LEVEL=debug|info|warn|...
  return dmc::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
