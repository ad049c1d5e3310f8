#include "oracles.hpp"
#include "sp4d/dbscan.hpp"

#include <gtest/gtest.h>

using namespace sp4d;

TEST(DbscanPoints, ForcedPartition) {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.1, 0, 0}, {5, 5, 5}};
  EXPECT_EQ(dbscan_points(pts, {0.5, 2}), (FrameLabels{0, 0, kNoise}));
}

TEST(DbscanPoints, SinglePointIsCore) {
  const std::vector<Vec3> pts{{1, 2, 3}};
  EXPECT_EQ(dbscan_points(pts, {0.5, 1}), (FrameLabels{0}));
  EXPECT_TRUE(dbscan_points(std::vector<Vec3>{}, {0.5, 1}).empty());
}

TEST(DbscanPoints, ClosedBallNeighborhood) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
  EXPECT_EQ(dbscan_points(pts, {1.0, 2}), (FrameLabels{0, 0}));
  EXPECT_EQ(dbscan_points(pts, {0.999, 2}), (FrameLabels{kNoise, kNoise}));
}

TEST(DbscanPoints, BorderGoesToEarliestCluster) {
  // Point 2 is a border point within reach of both chains' cores.
  const std::vector<Vec3> pts{{0, 0, 0}, {0.5, 0, 0}, {1.0, 0, 0}, {1.5, 0, 0}, {2.0, 0, 0}};
  // min_pts 2, eps 0.5: everything chains into one cluster.
  EXPECT_EQ(dbscan_points(pts, {0.5, 2}), (FrameLabels{0, 0, 0, 0, 0}));
  // Cores on both sides; the point at 0.7 is a border of both and joins the
  // cluster whose seed comes first in index order.
  std::vector<Vec3> two;
  for (double x : {0.0, 0.1, 0.2, 0.3, 0.7, 1.1, 1.2, 1.3, 1.4}) two.emplace_back(x, 0, 0);
  EXPECT_EQ(dbscan_points(two, {0.41, 4}), (FrameLabels{0, 0, 0, 0, 0, 1, 1, 1, 1}));
  std::reverse(two.begin(), two.end());
  EXPECT_EQ(dbscan_points(two, {0.41, 4}), (FrameLabels{0, 0, 0, 0, 0, 1, 1, 1, 1}));
  std::swap(two[4], two[8]);
  const FrameLabels l = dbscan_points(two, {0.41, 4});
  EXPECT_EQ(l[8], l[0]);
}

TEST(DbscanPoints, InvalidParams) {
  const std::vector<Vec3> pts{{0, 0, 0}};
  EXPECT_THROW(dbscan_points(pts, {0.0, 1}), ParameterError);
  EXPECT_THROW(dbscan_points(pts, {1.0, 0}), ParameterError);
}

TEST(DbscanPoints, OracleEquivalence) {
  std::uniform_int_distribution<int> size(1, 300), mp(1, 8);
  std::uniform_real_distribution<double> eps(0.2, 1.5);
  for (int c = 0; c < 150; ++c) {
    std::mt19937_64 rng(200 + c);
    const std::size_t n = static_cast<std::size_t>(size(rng));
    // Blobs plus uniform clutter so that noise, border and core points all occur.
    auto pts = oracle::random_points(rng, n, 4.0);
    for (std::size_t i = 0; i < n / 2; ++i) pts[i] = pts[i] * 0.15 + Vec3(i % 3 == 0 ? 2.0 : -2.0, 0, 0);
    const DbscanParams p{eps(rng), mp(rng)};
    const FrameLabels got = dbscan_points(pts, p);
    const auto want = oracle::dbscan(n, p.min_pts, [&](std::size_t i, std::size_t j) {
      return oracle::dist2(pts[i], pts[j]) <= p.eps * p.eps;
    });
    ASSERT_TRUE(oracle::same_partition(got, want)) << "case " << c;
  }
}

TEST(DbscanPoints, CorePartitionProperty) {
  // Core neighbors of a core point share its cluster; no neighbor of a core is noise.
  for (int c = 0; c < 20; ++c) {
    std::mt19937_64 rng(40 + c);
    const auto pts = oracle::random_points(rng, 250, 3.0);
    const DbscanParams p{0.6, 4};
    const FrameLabels l = dbscan_points(pts, p);
    auto is_core = [&](std::size_t i) { return static_cast<int>(oracle::radius(pts, pts[i], p.eps).size()) >= p.min_pts; };
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!is_core(i)) continue;
      for (std::size_t j : oracle::radius(pts, pts[i], p.eps)) {
        EXPECT_GE(l[j], 0);
        if (is_core(j)) {
          EXPECT_EQ(l[j], l[i]);
        }
      }
    }
  }
}

TEST(DbscanMatrix, Examples) {
  Eigen::MatrixXd d(2, 2);
  d << 0, 0.1, 0.1, 0;
  EXPECT_EQ(dbscan_matrix(d, {0.2, 1}), (FrameLabels{0, 0}));

  Eigen::MatrixXd blocks = Eigen::MatrixXd::Constant(4, 4, 5.0);
  blocks.topLeftCorner(2, 2).setConstant(0.1);
  blocks.bottomRightCorner(2, 2).setConstant(0.1);
  blocks.diagonal().setZero();
  EXPECT_EQ(dbscan_matrix(blocks, {1.0, 1}), (FrameLabels{0, 0, 1, 1}));
}

TEST(DbscanMatrix, RejectsAsymmetry) {
  Eigen::MatrixXd d(2, 2);
  d << 0, 0.1, 0.1 + 1e-6, 0;
  EXPECT_THROW(dbscan_matrix(d, {0.2, 1}), ParameterError);
  d(1, 0) = 0.1 + 1e-10;
  EXPECT_NO_THROW(dbscan_matrix(d, {0.2, 1}));
  EXPECT_THROW(dbscan_matrix(Eigen::MatrixXd::Zero(2, 3), {0.2, 1}), ParameterError);
}

TEST(DbscanMatrix, OracleEquivalence) {
  std::uniform_int_distribution<int> size(1, 60), mp(1, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int c = 0; c < 80; ++c) {
    std::mt19937_64 rng(900 + c);
    const int n = size(rng);
    Eigen::MatrixXd d(n, n);
    for (int i = 0; i < n; ++i) {
      d(i, i) = 0;
      for (int j = i + 1; j < n; ++j) d(i, j) = d(j, i) = u(rng) * 2.0;
    }
    const DbscanParams p{0.2 + 0.3 * u(rng), mp(rng)};
    const FrameLabels got = dbscan_matrix(d, p);
    const auto want = oracle::dbscan(static_cast<std::size_t>(n), p.min_pts, [&](std::size_t i, std::size_t j) {
      return d(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= p.eps;
    });
    ASSERT_TRUE(oracle::same_partition(got, want)) << "case " << c;
  }
}

TEST(DbscanPoints, Deterministic) {
  std::mt19937_64 rng(8);
  const auto pts = oracle::random_points(rng, 300, 3.0);
  EXPECT_EQ(dbscan_points(pts, {0.5, 3}), dbscan_points(pts, {0.5, 3}));
}
