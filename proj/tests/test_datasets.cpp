#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "sst/datasets.hpp"

using namespace sst;

namespace {

ShapeSpec chair(double arm, double legs = 0) {
  auto s = ShapeSpec::random("chair", 11);
  s.factors["armrests"] = arm;
  s.factors["leg_style"] = legs;
  return s;
}

DatasetConfig small_config(const std::string& category, std::size_t count) {
  DatasetConfig cfg;
  cfg.category = category;
  cfg.count = count;
  cfg.r = 16;
  cfg.n_uniform = 64;
  cfg.n_surface = 64;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(ShapeSpec, DeterministicAndValidated) {
  EXPECT_EQ(ShapeSpec::random("table", 3), ShapeSpec::random("table", 3));
  auto s = ShapeSpec::random("chair", 4);
  s.factors["seat_height"] = 2.0;
  EXPECT_THROW(make_solid(s), ValueError);
  s = ShapeSpec::random("chair", 4);
  s.factors["leg_style"] = 1.5;
  EXPECT_THROW(make_solid(s), ValueError);
  EXPECT_THROW(ShapeSpec::random("sofa", 1), ValueError);
}

TEST(MakeSolid, ArmrestsAddExactlyTwoLateralBoxes) {
  auto without = detail::build_chair(chair(0));
  auto with = detail::build_chair(chair(1));
  ASSERT_EQ(with.parts.size(), without.parts.size() + 2);
  for (std::size_t i = 0; i < without.parts.size(); ++i) EXPECT_EQ(with.parts[i].center, without.parts[i].center);
  for (std::size_t i = without.parts.size(); i < with.parts.size(); ++i) {
    EXPECT_EQ(with.parts[i].tag, "armrest");
    EXPECT_EQ(with.parts[i].kind, PrimitiveKind::Box);
  }
  EXPECT_NEAR(with.parts.back().center[0], -with.parts[with.parts.size() - 2].center[0], 1e-15);
}

TEST(MakeSolid, StarBaseHasFiveFoldFootprint) {
  auto s = detail::build_chair(chair(0, 1));
  std::vector<Primitive> feet;
  for (const auto& p : s.parts)
    if (p.tag == "foot") feet.push_back(p);
  ASSERT_EQ(feet.size(), 5u);
  // Rotating every foot centre by 72 degrees about y maps the set to itself.
  const Mat3 R = rotation(1, 2 * std::acos(-1.0) / 5);
  for (const auto& f : feet) {
    const Vec3 turned = rotate(R, f.center);
    double best = 1e9;
    for (const auto& g : feet) best = std::min(best, dist_sq(turned, g.center));
    EXPECT_LT(best, 1e-20);
  }
}

TEST(MakeSolid, AllSolidsFitWithMargin) {
  for (const auto& cat : categories())
    for (std::uint64_t seed = 0; seed < 334; ++seed) {
      auto b = make_solid(ShapeSpec::random(cat, seed)).bounds();
      for (int a = 0; a < 3; ++a) {
        EXPECT_GE(b.lo[a], 0.05 - 1e-12) << cat << " " << seed;
        EXPECT_LE(b.hi[a], 0.95 + 1e-12) << cat << " " << seed;
      }
    }
}

TEST(BuildDataset, SplitSizes) {
  auto sz = split_sizes(100);
  EXPECT_EQ(sz.train, 70u);
  EXPECT_EQ(sz.test, 20u);
  EXPECT_EQ(sz.val, 10u);
  auto splits = build_dataset(small_config("chair", 100));
  EXPECT_EQ(splits[0].shapes.size(), 70u);
  EXPECT_EQ(splits[1].shapes.size(), 20u);
  EXPECT_EQ(splits[2].shapes.size(), 10u);
  EXPECT_THROW(build_dataset(small_config("chair", 5)), ValueError);
}

TEST(BuildDataset, SplitsAreDisjoint) {
  auto splits = build_dataset(small_config("table", 40));
  std::set<std::uint64_t> seen;
  std::size_t total = 0;
  for (const auto& sp : splits)
    for (const auto& rec : sp.shapes) {
      seen.insert(rec.spec.seed);
      ++total;
    }
  EXPECT_EQ(seen.size(), total);
}

TEST(BuildDataset, OccupancyFractionIsPlausible) {
  for (const auto& cat : categories()) {
    auto cfg = small_config(cat, 30);
    cfg.r = 32;
    for (const auto& sp : build_dataset(cfg))
      for (const auto& rec : sp.shapes) {
        EXPECT_GT(rec.voxels.fraction(), 0.005) << cat << " " << rec.spec.seed;
        EXPECT_LT(rec.voxels.fraction(), 0.5) << cat << " " << rec.spec.seed;
      }
  }
}

TEST(Shards, BitIdenticalAndFactorsRoundTrip) {
  auto cfg = small_config("plane", 20);
  auto a = build_dataset(cfg);
  auto b = build_dataset(cfg);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(shard_container(a[i], cfg).serialize(), shard_container(b[i], cfg).serialize());

  const auto dir = (std::filesystem::temp_directory_path() / "sst_test_shards").string();
  auto paths = write_shards(a, cfg, dir);
  ASSERT_EQ(paths.size(), 3u);
  auto shard = load_shard(paths[0]);
  std::filesystem::remove_all(dir);
  ASSERT_EQ(shard.size(), a[0].shapes.size());
  EXPECT_EQ(shard.category, "plane");
  EXPECT_EQ(shard.points_per_shape, 128u);
  for (std::size_t i = 0; i < shard.size(); ++i) {
    EXPECT_EQ(shard.specs[i], a[0].shapes[i].spec);
    EXPECT_EQ(shard.voxels[i], a[0].shapes[i].voxels);
    EXPECT_EQ(shard.occupancy[i * 128 + 7], a[0].shapes[i].samples.occupancy[7]);
  }
}
