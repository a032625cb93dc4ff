#include "cfrl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "cfrl/errors.hpp"
#include "cfrl/hash.hpp"

namespace cfrl::ckpt {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError("checkpoint is truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::Blackbox:
      return "blackbox";
    case Stage::Autoencoder:
      return "autoencoder";
    case Stage::Actor:
      return "actor";
    case Stage::Critic:
      return "critic";
  }
  return "unknown";
}

TensorMap Checkpoint::tensor_map() const {
  TensorMap m;
  for (const auto& t : tensors) m[t.name] = t;
  return m;
}

std::string serialize(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, ckpt.schema_fingerprint);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.stage));
  put<std::uint64_t>(out, ckpt.seed);
  put<std::uint64_t>(out, ckpt.config_hash);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.data.size() != t.element_count()) throw DimensionError("tensor " + t.name + " data does not match its dims");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put<std::uint64_t>(out, d);
    for (double v : t.data) put<double>(out, v);
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw DataError("not a checkpoint file (bad magic)");
  const std::string_view body(bytes.data(), bytes.size() - 8);
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 8);
  Reader r(bytes);
  r.str(sizeof kMagic);
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kFormatVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(c.version) + " (expected " +
                    std::to_string(kFormatVersion) + ")");
  if (fnv1a64(body) != stored) throw DataError("checkpoint content hash mismatch (file is corrupt)");
  c.schema_fingerprint = r.get<std::uint64_t>();
  const auto stage = r.get<std::uint32_t>();
  if (stage < 1 || stage > 4) throw DataError("unknown checkpoint stage " + std::to_string(stage));
  c.stage = static_cast<Stage>(stage);
  c.seed = r.get<std::uint64_t>();
  c.config_hash = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) t.dims.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const std::size_t n = t.element_count();
    if (n > (r.remaining() - 8) / 8) throw DataError("checkpoint is truncated in tensor " + t.name);
    t.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) t.data[k] = r.get<double>();
    c.tensors.push_back(std::move(t));
  }
  if (r.pos() != body.size()) throw DataError("checkpoint has trailing bytes");
  return c;
}

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load(const std::filesystem::path& path, Stage expected, std::optional<std::uint64_t> fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Checkpoint c;
  try {
    c = deserialize(bytes);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (c.stage != expected)
    throw ConfigError(path.string() + " holds a " + to_string(c.stage) + " checkpoint, expected " +
                      to_string(expected));
  if (fingerprint && c.schema_fingerprint != *fingerprint)
    throw ConfigError(path.string() + " was built for schema " + hex64(c.schema_fingerprint) + ", current schema is " +
                      hex64(*fingerprint));
  return c;
}

}  // namespace cfrl::ckpt
