#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cfrl/tensor.hpp"

namespace cfrl::ckpt {

inline constexpr char kMagic[4] = {'C', 'F', 'F', 'G'};
inline constexpr std::uint32_t kFormatVersion = 1;

enum class Stage : std::uint32_t { Blackbox = 1, Autoencoder = 2, Actor = 3, Critic = 4 };

const char* to_string(Stage stage);

// Layout (little-endian): magic, u32 version, u64 schema fingerprint, u32 stage, u64 seed,
// u64 config hash, u32 tensor count, then per tensor u32 name length, name, u32 rank,
// u64 dims[rank], f64 data[]; finally a u64 FNV-1a hash of every preceding byte.
struct Checkpoint {
  std::uint32_t version = kFormatVersion;
  std::uint64_t schema_fingerprint = 0;
  Stage stage = Stage::Blackbox;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<NamedTensor> tensors;

  TensorMap tensor_map() const;
};

std::string serialize(const Checkpoint& ckpt);
// DataError on truncation, bad magic, unsupported version or a content hash mismatch.
Checkpoint deserialize(const std::string& bytes);

void save(const std::filesystem::path& path, const Checkpoint& ckpt);
// Also checks the stage and, when given, the schema fingerprint (ConfigError on mismatch).
Checkpoint load(const std::filesystem::path& path, Stage expected,
                std::optional<std::uint64_t> fingerprint = std::nullopt);

}  // namespace cfrl::ckpt
