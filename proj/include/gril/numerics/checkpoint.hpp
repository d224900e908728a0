#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gril/errors.hpp"
#include "gril/numerics/tensor.hpp"

namespace gril {

// Named arrays plus free-form string metadata.
//
// On-disk layout:
//   line 1   "GRILCKPT 1"
//   line 2   byte length N of the manifest
//   N bytes  JSON manifest: {"meta": {...}, "entries": [{"name", "shape", "offset"}]}
//   payload  raw little-endian IEEE-754 doubles; `offset` is relative to payload start
struct Checkpoint {
  std::map<std::string, Tensor> arrays;
  std::map<std::string, std::string> meta;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {
inline constexpr const char* kCheckpointMagic = "GRILCKPT 1";
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  nlohmann::json manifest;
  manifest["meta"] = ck.meta;
  manifest["entries"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.arrays) {
    manifest["entries"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(double);
  }
  std::string m = manifest.dump();
  std::string out = std::string(detail::kCheckpointMagic) + "\n" + std::to_string(m.size()) + "\n" + m;
  for (const auto& [name, t] : ck.arrays) {
    out.append(reinterpret_cast<const char*>(t.values().data()), t.size() * sizeof(double));
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  std::istringstream in(bytes);
  std::string magic, len_line;
  if (!std::getline(in, magic) || magic != detail::kCheckpointMagic) throw DataError("checkpoint: bad magic");
  if (!std::getline(in, len_line)) throw DataError("checkpoint: missing manifest length");
  std::size_t mlen = 0;
  try {
    mlen = std::stoull(len_line);
  } catch (const std::exception&) {
    throw DataError("checkpoint: bad manifest length");
  }
  const std::size_t mstart = static_cast<std::size_t>(in.tellg());
  if (mstart + mlen > bytes.size()) throw DataError("checkpoint: truncated manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.substr(mstart, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: manifest: ") + e.what());
  }
  const std::size_t pstart = mstart + mlen;
  Checkpoint ck;
  ck.meta = manifest.at("meta").get<std::map<std::string, std::string>>();
  for (const auto& e : manifest.at("entries")) {
    Shape shape = e.at("shape").get<Shape>();
    std::size_t off = e.at("offset").get<std::size_t>();
    std::size_t n = shape_numel(shape);
    if (pstart + off + n * sizeof(double) > bytes.size()) throw DataError("checkpoint: truncated payload");
    std::vector<double> vals(n);
    std::memcpy(vals.data(), bytes.data() + pstart + off, n * sizeof(double));
    ck.arrays.emplace(e.at("name").get<std::string>(), Tensor(shape, std::move(vals)));
  }
  return ck;
}

// Writes to a sibling temp file then renames, so readers never see a partial file.
inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    std::string bytes = encode_checkpoint(ck);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace gril
