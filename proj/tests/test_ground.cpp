#include "sp4d/ground.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace sp4d;

namespace {

// Grid on z = slope * x plus points lifted 2 m above it.
PointFrame plane_scene(double tilt_deg, double noise, int elevated = 50, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  const double slope = std::tan(tilt_deg * M_PI / 180.0);
  PointFrame f;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 25; ++j) {
      const double x = -10 + 0.5 * i, y = -6 + 0.5 * j;
      f.points.emplace_back(x, y, slope * x + noise * n(rng));
    }
  for (int k = 0; k < elevated; ++k) {
    const double x = u(rng), y = u(rng);
    f.points.emplace_back(x, y, slope * x + 2.0);
  }
  return f;
}

}  // namespace

TEST(Ground, FlatPlaneMaskedExactly) {
  const PointFrame f = plane_scene(0.0, 0.0);
  GroundConfig cfg;
  cfg.threshold_m = 0.1;
  const GroundResult r = remove_ground(f, cfg);
  ASSERT_FALSE(r.used_fallback);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(r.mask[i], i < 1000 ? 1 : 0) << i;
  EXPECT_EQ(r.ground_count, 1000u);
  EXPECT_NEAR(r.model.normal.norm(), 1.0, 1e-9);
  EXPECT_GE(r.model.normal.z(), 0.0);
}

TEST(Ground, AllPointsOnOnePlane) {
  const PointFrame f = plane_scene(0.0, 0.0, 0);
  const GroundResult r = remove_ground(f, {});
  EXPECT_TRUE(r.all_ground);
  EXPECT_EQ(r.ground_count, f.size());
}

TEST(Ground, TiltedPlane) {
  const PointFrame f = plane_scene(5.0, 0.0);
  GroundConfig cfg;
  cfg.threshold_m = 0.1;
  const GroundResult r = remove_ground(f, cfg);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(r.mask[i], i < 1000 ? 1 : 0) << i;
  EXPECT_NEAR(std::acos(r.model.normal.z()) * 180.0 / M_PI, 5.0, 0.01);
}

TEST(Ground, RecallAndFalseRemovalUnderNoise) {
  // Noise sigma at a third of the threshold.
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    GroundConfig cfg;
    cfg.threshold_m = 0.15;
    cfg.seed = seed;
    const PointFrame f = plane_scene(3.0, 0.05, 300, seed);
    const GroundResult r = remove_ground(f, cfg);
    std::size_t hit = 0, false_removed = 0;
    for (std::size_t i = 0; i < f.size(); ++i) (i < 1000 ? hit : false_removed) += r.mask[i];
    EXPECT_GE(hit / 1000.0, 0.99) << seed;
    EXPECT_LE(false_removed / 300.0, 0.01) << seed;
  }
}

TEST(Ground, RoofPlaneIsNotGround) {
  // Few iterations so that many seeds never draw three ground points; the
  // raised slab has the whole ground beneath it and must never be taken.
  PointFrame f;
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 20; ++j) f.points.emplace_back(-15 + i, -10 + j, 0.0);
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) f.points.emplace_back(-2 + 0.2 * i, -2 + 0.2 * j, 1.8);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-8.0, 8.0), h(0.5, 3.0);
  for (int k = 0; k < 800; ++k) f.points.emplace_back(u(rng), u(rng), h(rng));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GroundConfig cfg;
    cfg.iterations = 30;
    cfg.seed = seed;
    const GroundResult r = remove_ground(f, cfg);
    for (std::size_t i = 600; i < 1000; ++i) ASSERT_EQ(r.mask[i], 0) << "seed " << seed << " point " << i;
  }
}

TEST(Ground, HeightFallbackWhenNoPlane) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  PointFrame f;
  for (int i = 0; i < 500; ++i) f.points.emplace_back(u(rng), u(rng), u(rng));
  GroundConfig cfg;
  cfg.min_inlier_fraction = 0.5;
  const GroundResult r = remove_ground(f, cfg);
  EXPECT_TRUE(r.used_fallback);
  double zmin = 1e9;
  for (const auto& p : f.points) zmin = std::min(zmin, p.z());
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(r.mask[i] != 0, f.points[i].z() <= zmin + cfg.z_max_m);
}

TEST(Ground, HeightMethod) {
  PointFrame f;
  f.points = {{0, 0, -1.0}, {0, 0, -0.75}, {0, 0, -0.6}, {0, 0, 1.0}};
  GroundConfig cfg;
  cfg.method = GroundMethod::kHeight;
  const GroundResult r = remove_ground(f, cfg);
  EXPECT_EQ(r.mask, (std::vector<std::uint8_t>{1, 1, 0, 0}));
  EXPECT_FALSE(r.used_fallback);
}

TEST(Ground, EmptyFrameAndBadConfig) {
  EXPECT_THROW(remove_ground(PointFrame{}, {}), ParameterError);
  GroundConfig bad;
  bad.threshold_m = 0;
  EXPECT_THROW(remove_ground(plane_scene(0, 0), bad), ParameterError);
}

TEST(Ground, DeterministicGivenSeed) {
  const PointFrame f = plane_scene(2.0, 0.04, 200);
  GroundConfig cfg;
  cfg.seed = 77;
  const GroundResult a = remove_ground(f, cfg), b = remove_ground(f, cfg);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.model.normal, b.model.normal);
  EXPECT_EQ(a.model.offset, b.model.offset);
}
