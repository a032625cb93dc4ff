#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "cfrl/checkpoint.hpp"
#include "cfrl/errors.hpp"
#include "cfrl/hash.hpp"
#include "test_util.hpp"

using namespace cfrl;
using namespace cfrl::ckpt;

namespace {

Checkpoint sample() {
  Checkpoint c;
  c.schema_fingerprint = 0x1234abcd5678ef00ULL;
  c.stage = Stage::Autoencoder;
  c.seed = 42;
  c.config_hash = 7;
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, -6.5;
  c.tensors.push_back(tensor_from("w", m));
  c.tensors.push_back(scalar_tensor("cfg", {0.25}));
  c.tensors.push_back(NamedTensor{"empty", {0, 4}, {}});
  return c;
}

void rehash(std::string& bytes) {
  const std::uint64_t h = fnv1a64(std::string_view(bytes.data(), bytes.size() - 8));
  std::memcpy(bytes.data() + bytes.size() - 8, &h, 8);
}

}  // namespace

TEST(Checkpoint, RoundTrip) {
  const auto c = sample();
  const auto bytes = serialize(c);
  EXPECT_EQ(bytes.substr(0, 4), "CFFG");
  const auto back = deserialize(bytes);
  EXPECT_EQ(back.version, kFormatVersion);
  EXPECT_EQ(back.schema_fingerprint, c.schema_fingerprint);
  EXPECT_EQ(back.stage, Stage::Autoencoder);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.config_hash, 7u);
  ASSERT_EQ(back.tensors.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.tensors[i].name, c.tensors[i].name);
    EXPECT_EQ(back.tensors[i].dims, c.tensors[i].dims);
    EXPECT_EQ(back.tensors[i].data, c.tensors[i].data);
  }
  EXPECT_EQ(serialize(back), bytes);
  EXPECT_EQ(matrix_from(back.tensor_map().at("w"))(1, 2), -6.5);
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  const auto bytes = serialize(sample());
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  EXPECT_EQ(version, kFormatVersion);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[15]), 0x12);
}

TEST(Checkpoint, RejectsCorruption) {
  const auto good = serialize(sample());
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad), DataError);
  bad = good;
  bad[4] = 2;
  rehash(bad);
  EXPECT_THROW(deserialize(bad), DataError);
  bad = good;
  bad[good.size() / 2] ^= 0x40;
  EXPECT_THROW(deserialize(bad), DataError);
  EXPECT_THROW(deserialize(good.substr(0, good.size() - 20)), DataError);
  EXPECT_THROW(deserialize("CF"), DataError);
  bad = good;
  bad[16] = 9;
  rehash(bad);
  EXPECT_THROW(deserialize(bad), DataError);
  try {
    bad = good;
    bad[4] = 2;
    rehash(bad);
    deserialize(bad);
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, FileLoadChecksStageAndFingerprint) {
  const auto dir = cfrl::testing::scratch_dir("ckpt");
  const auto path = dir / "ae.ckpt";
  save(path, sample());
  EXPECT_NO_THROW(load(path, Stage::Autoencoder, 0x1234abcd5678ef00ULL));
  EXPECT_NO_THROW(load(path, Stage::Autoencoder));
  EXPECT_THROW(load(path, Stage::Actor), ConfigError);
  EXPECT_THROW(load(path, Stage::Autoencoder, 1ULL), ConfigError);
  EXPECT_THROW(load(dir / "missing.ckpt", Stage::Autoencoder), DataError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint at all";
  EXPECT_THROW(load(dir / "junk.ckpt", Stage::Autoencoder), DataError);
  NamedTensor broken{"x", {2, 2}, {1.0}};
  Checkpoint c;
  c.tensors.push_back(broken);
  EXPECT_THROW(serialize(c), DimensionError);
}
