#include "dmc/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dmc {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little endian");

const NamedArray &Checkpoint::find(const std::string &name) const {
  for (const auto &a : arrays)
    if (a.name == name)
      return a;
  throw std::out_of_range("checkpoint has no array named " + name);
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ck) {
  nlohmann::ordered_json header;
  header["format_version"] = kCheckpointVersion;
  header["meta"] = ck.meta;
  header["arrays"] = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto &a : ck.arrays) {
    if (a.data.size() != ag::shape_size(a.shape))
      throw std::invalid_argument("checkpoint array " + a.name + " does not match its shape");
    header["arrays"].push_back(
        {{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.data.size()}});
    offset += a.data.size() * sizeof(double);
  }
  const std::string text = header.dump();
  const std::uint64_t len = text.size();

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    out.write(reinterpret_cast<const char *>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto &a : ck.arrays)
      out.write(reinterpret_cast<const char *>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    if (!out)
      throw std::runtime_error("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char *>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw std::runtime_error(path.string() + " is not a checkpoint");
  if (len > (1u << 26))
    throw std::runtime_error("checkpoint header of " + std::to_string(len) + " bytes");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in)
    throw std::runtime_error("truncated checkpoint header in " + path.string());

  const auto header = nlohmann::ordered_json::parse(text);
  if (header.value("format_version", 0) != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version in " + path.string());
  Checkpoint ck;
  ck.meta = header.at("meta");
  const auto data_start = in.tellg();
  for (const auto &e : header.at("arrays")) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<ag::Shape>();
    const auto count = e.at("count").get<std::size_t>();
    if (count != ag::shape_size(a.shape))
      throw std::runtime_error("checkpoint array " + a.name + " has an inconsistent count");
    a.data.resize(count);
    in.seekg(data_start + static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
    in.read(reinterpret_cast<char *>(a.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in)
      throw std::runtime_error("truncated data for array " + a.name + " in " + path.string());
    ck.arrays.push_back(std::move(a));
  }
  return ck;
}

} // namespace dmc
