#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "docrl/digest.hpp"
#include "docrl/model.hpp"

namespace docrl {

// Checkpoint container:
//   bytes 0..7    magic "DOCRLCKP"
//   u32 LE        container version
//   u64 LE        manifest length L
//   L bytes       manifest (UTF-8 JSON)
//   payload       tensors as little-endian float64, row-major, in manifest order
inline constexpr char kCheckpointMagic[8] = {'D', 'O', 'C', 'R', 'L', 'C', 'K', 'P'};
inline constexpr uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kMissing, kVersion, kCorrupt, kFormat };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put_le(std::string& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, size_t at) {
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline std::string tensor_bytes(const Matrix& m) {
  std::string out;
  out.reserve(static_cast<size_t>(m.size()) * 8);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_le(out, std::bit_cast<uint64_t>(m(r, c)));
  }
  return out;
}

}  // namespace detail

struct LoadedCheckpoint {
  PolicyModel model;
  std::string tag;
};

inline void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path, const std::string& tag = "") {
  ordered_json manifest;
  manifest["format"] = "docrl-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["tag"] = tag;
  manifest["config"] = model.config().to_json();
  std::string payload;
  ordered_json entries = ordered_json::array();
  for (const auto& p : model.params()) {
    const std::string bytes = detail::tensor_bytes(p.value);
    ordered_json e;
    e["name"] = p.name;
    e["shape"] = {p.value.rows(), p.value.cols()};
    e["offset"] = payload.size();
    e["sha256"] = sha256_hex(bytes);
    entries.push_back(std::move(e));
    payload += bytes;
  }
  manifest["parameters"] = std::move(entries);
  const std::string manifest_text = manifest.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<uint32_t>(out, kCheckpointVersion);
  detail::put_le<uint64_t>(out, manifest_text.size());
  out += manifest_text;
  out += payload;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  using Kind = CheckpointError::Kind;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(Kind::kMissing, "checkpoint not found: " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string data = ss.str();

  constexpr size_t kHeader = sizeof(kCheckpointMagic) + 4 + 8;
  if (data.size() < kHeader || std::memcmp(data.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError(Kind::kFormat, "not a checkpoint file: " + path.string());
  }
  const auto version = detail::get_le<uint32_t>(data, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersion, "checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                              std::to_string(kCheckpointVersion) + ")");
  }
  const auto manifest_len = detail::get_le<uint64_t>(data, 12);
  if (kHeader + manifest_len > data.size()) throw CheckpointError(Kind::kCorrupt, "truncated manifest");
  json manifest;
  try {
    manifest = json::parse(data.substr(kHeader, manifest_len));
  } catch (const json::parse_error& e) {
    throw CheckpointError(Kind::kCorrupt, std::string("unreadable manifest: ") + e.what());
  }

  LoadedCheckpoint out;
  try {
    if (manifest.at("version").get<uint32_t>() != kCheckpointVersion) {
      throw CheckpointError(Kind::kVersion, "manifest version mismatch");
    }
    out.tag = manifest.value("tag", std::string());
    out.model = PolicyModel(ModelConfig::from_json(manifest.at("config")));
    const size_t base = kHeader + manifest_len;
    const auto& entries = manifest.at("parameters");
    if (entries.size() != out.model.params().size()) {
      throw CheckpointError(Kind::kFormat, "parameter count does not match the model configuration");
    }
    for (size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      ad::Parameter& p = out.model.params()[i];
      const auto shape = e.at("shape").get<std::vector<long>>();
      if (e.at("name").get<std::string>() != p.name || shape.size() != 2 || shape[0] != p.value.rows() ||
          shape[1] != p.value.cols()) {
        throw CheckpointError(Kind::kFormat, "parameter '" + e.at("name").get<std::string>() +
                                                 "' does not match the model configuration");
      }
      const size_t nbytes = static_cast<size_t>(p.value.size()) * 8;
      const size_t offset = base + e.at("offset").get<size_t>();
      if (offset + nbytes > data.size()) throw CheckpointError(Kind::kCorrupt, "truncated tensor data for " + p.name);
      const std::string bytes = data.substr(offset, nbytes);
      if (sha256_hex(bytes) != e.at("sha256").get<std::string>()) {
        throw CheckpointError(Kind::kCorrupt, "digest mismatch for parameter " + p.name);
      }
      size_t at = 0;
      for (Eigen::Index r = 0; r < p.value.rows(); ++r) {
        for (Eigen::Index c = 0; c < p.value.cols(); ++c, at += 8) {
          p.value(r, c) = std::bit_cast<double>(detail::get_le<uint64_t>(bytes, at));
        }
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kFormat, std::string("malformed manifest: ") + e.what());
  }
  return out;
}

}  // namespace docrl
