#pragma once

#include "sp4d/core.hpp"
#include "sp4d/kdtree.hpp"

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <span>
#include <vector>

namespace sp4d {

struct DbscanParams {
  double eps = 0.7;
  int min_pts = 5;

  void validate() const {
    if (!(eps > 0)) throw ParameterError("dbscan: eps must be positive");
    if (min_pts < 1) throw ParameterError("dbscan: min_pts must be >= 1");
  }
};

namespace detail {

// Seeds are visited in ascending index order and clusters grow FIFO, so a border
// point belongs to the first cluster whose expansion reaches it.
template <typename NeighborFn>
FrameLabels dbscan_expand(std::size_t n, int min_pts, NeighborFn&& neighbors) {
  constexpr int kUnvisited = -3;
  FrameLabels labels(n, kUnvisited);
  int cluster = 0;
  std::deque<std::size_t> queue;
  for (std::size_t seed = 0; seed < n; ++seed) {
    if (labels[seed] != kUnvisited) continue;
    const std::vector<std::size_t> seed_nbrs = neighbors(seed);
    if (static_cast<int>(seed_nbrs.size()) < min_pts) {
      labels[seed] = kNoise;
      continue;
    }
    labels[seed] = cluster;
    queue.assign(seed_nbrs.begin(), seed_nbrs.end());
    while (!queue.empty()) {
      const std::size_t j = queue.front();
      queue.pop_front();
      if (labels[j] == kNoise) {
        labels[j] = cluster;
        continue;
      }
      if (labels[j] != kUnvisited) continue;
      labels[j] = cluster;
      const std::vector<std::size_t> nbrs = neighbors(j);
      if (static_cast<int>(nbrs.size()) >= min_pts) {
        for (std::size_t m : nbrs) {
          if (labels[m] == kUnvisited || labels[m] == kNoise) queue.push_back(m);
        }
      }
    }
    ++cluster;
  }
  return canonicalize_labels(labels);
}

}  // namespace detail

inline FrameLabels dbscan_points(std::span<const Vec3> points, const DbscanParams& params) {
  params.validate();
  if (points.empty()) return {};
  const NeighborIndex index(points);
  return detail::dbscan_expand(points.size(), params.min_pts,
                               [&](std::size_t i) { return index.radius_query(points[i], params.eps); });
}

inline FrameLabels dbscan_matrix(const Eigen::MatrixXd& dist, const DbscanParams& params) {
  params.validate();
  if (dist.rows() != dist.cols()) throw ParameterError("dbscan_matrix: distance matrix must be square");
  const auto n = static_cast<std::size_t>(dist.rows());
  for (Eigen::Index i = 0; i < dist.rows(); ++i) {
    for (Eigen::Index j = 0; j < dist.cols(); ++j) {
      if (!(std::abs(dist(i, j) - dist(j, i)) <= 1e-9)) {
        throw ParameterError("dbscan_matrix: matrix is not symmetric at (" + std::to_string(i) + "," +
                             std::to_string(j) + ")");
      }
      if (dist(i, j) < 0) throw ParameterError("dbscan_matrix: negative distance");
    }
  }
  return detail::dbscan_expand(n, params.min_pts, [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j) {
      if (dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) <= params.eps) out.push_back(j);
    }
    return out;
  });
}

}  // namespace sp4d
