#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "dmc/autograd.hpp"

namespace dmc {

struct NamedArray {
  std::string name;
  ag::Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  std::vector<NamedArray> arrays;

  const NamedArray &find(const std::string &name) const;
};

inline constexpr char kCheckpointMagic[8] = {'D', 'M', 'C', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

/// Layout: 8-byte magic, little-endian u64 header length, JSON header
/// {format_version, meta, arrays: [{name, shape, offset, count}]}, then the
/// float64 data. Written to a temporary file and renamed into place.
void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ck);
Checkpoint load_checkpoint(const std::filesystem::path &path);

} // namespace dmc
