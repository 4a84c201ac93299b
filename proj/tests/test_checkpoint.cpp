#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "medforge/checkpoint_avg.hpp"
#include "support.hpp"

using namespace medforge;
using namespace medforge::ckpt;

namespace {

TensorArchive random_archive(std::mt19937_64& rng, std::size_t scale = 1) {
  std::normal_distribution<float> g(0.0f, 3.0f);
  TensorArchive a;
  const std::vector<std::pair<std::string, std::vector<std::uint64_t>>> layout{
      {"embed.weight", {64 * scale, 16}}, {"layer0.bias", {16}}, {"layer0.weight", {16, 16, 2}}, {"scalar", {}}};
  for (const auto& [name, shape] : layout) {
    Tensor t{shape, {}};
    t.data.resize(t.element_count());
    for (auto& x : t.data) x = g(rng);
    a.emplace(name, std::move(t));
  }
  return a;
}

std::span<const std::byte> view(const std::vector<std::byte>& v) { return {v.data(), v.size()}; }

// Distance in representable floats.
std::int64_t ulp_distance(float a, float b) {
  std::int32_t ia, ib;
  std::memcpy(&ia, &a, 4);
  std::memcpy(&ib, &b, 4);
  if (ia < 0) ia = std::numeric_limits<std::int32_t>::min() - ia;
  if (ib < 0) ib = std::numeric_limits<std::int32_t>::min() - ib;
  return std::llabs(static_cast<std::int64_t>(ia) - ib);
}

}  // namespace

TEST(Checkpoint, RoundTripAndDeterminism) {
  std::mt19937_64 rng(1);
  const auto a = random_archive(rng);
  const auto bytes = serialize(a);
  EXPECT_EQ(serialize(a), bytes);
  EXPECT_EQ(deserialize(view(bytes)), a);
  EXPECT_EQ(std::memcmp(bytes.data(), "MFTA", 4), 0);
}

TEST(Checkpoint, DetectsCorruption) {
  std::mt19937_64 rng(2);
  const auto bytes = serialize(random_archive(rng));

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= std::byte{0x01};
  EXPECT_THROW(deserialize(view(flipped)), FormatError);

  auto magic = bytes;
  magic[0] = std::byte{'X'};
  EXPECT_THROW(deserialize(view(magic)), FormatError);

  auto version = bytes;
  version[4] = std::byte{2};
  EXPECT_THROW(deserialize(view(version)), FormatError);

  auto trailing = bytes;
  trailing.push_back(std::byte{0});
  EXPECT_THROW(deserialize(view(trailing)), FormatError);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 3, bytes.size() - 1}) {
    const std::vector<std::byte> truncated(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(deserialize(view(truncated)), IoError) << cut;
  }
}

TEST(Checkpoint, MeanOfSixWithinOneUlpOfWideReference) {
  std::mt19937_64 rng(3);
  std::vector<TensorArchive> arcs;
  for (int i = 0; i < 6; ++i) arcs.push_back(random_archive(rng));
  const auto mean = average(arcs);
  for (const auto& [name, t] : mean) {
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      long double s = 0.0L;
      for (const auto& a : arcs) s += static_cast<long double>(a.at(name).data[i]);
      const float ref = static_cast<float>(s / 6.0L);
      ASSERT_LE(ulp_distance(t.data[i], ref), 1) << name << "[" << i << "]";
    }
  }
}

TEST(Checkpoint, AveragingIdenticalArchivesIsExact) {
  std::mt19937_64 rng(4);
  const auto a = random_archive(rng);
  const auto m = average({a, a});
  EXPECT_EQ(serialize(m), serialize(a));
}

TEST(Checkpoint, ReportsDivergentTensor) {
  std::mt19937_64 rng(5);
  const auto a = random_archive(rng);
  auto b = a;
  b.at("layer0.bias").shape = {4, 4};
  try {
    average({a, b});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("layer0.bias"), std::string::npos);
  }
  auto c = a;
  c.erase("embed.weight");
  try {
    average({a, c});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("embed.weight"), std::string::npos);
  }
  EXPECT_THROW(average({a}), ValidationError);
}

TEST(Checkpoint, FileIo) {
  testutil::TempDir dir;
  std::mt19937_64 rng(6);
  const auto a = random_archive(rng);
  const auto n = write_archive(a, dir.file("a.mfta"));
  EXPECT_EQ(n, serialize(a).size());
  EXPECT_EQ(read_archive(dir.file("a.mfta")), a);
  EXPECT_THROW(read_archive(dir.file("missing.mfta")), IoError);
}

TEST(Checkpoint, RejectsShapeDataMismatch) {
  TensorArchive a;
  a["w"] = Tensor{{2, 2}, {1.0f, 2.0f, 3.0f}};
  EXPECT_THROW(serialize(a), ValidationError);
}
