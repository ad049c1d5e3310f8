#pragma once

#include "sp4d/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace sp4d {

enum class GroundMethod { kRansac, kHeight };

struct GroundConfig {
  GroundMethod method = GroundMethod::kRansac;
  double threshold_m = 0.15;
  int iterations = 200;
  double min_inlier_fraction = 0.2;
  std::uint64_t seed = 0;
  // Height fallback: z <= min_z + z_max_m counts as ground.
  double z_max_m = 0.3;
  // RANSAC candidates whose normal deviates more than this from +z are rejected.
  double max_tilt_deg = 30.0;
};

struct GroundModel {
  Vec3 normal = Vec3::UnitZ();  // unit length, oriented so normal.z() >= 0
  double offset = 0.0;          // plane: normal . x + offset = 0
  double inlier_threshold = 0.0;

  double signed_distance(const Vec3& p) const { return normal.dot(p) + offset; }
};

struct GroundResult {
  std::vector<std::uint8_t> mask;
  GroundModel model;
  bool used_fallback = false;
  // Every point was masked; the frame carries no object points.
  bool all_ground = false;
  std::size_t ground_count = 0;
};

namespace detail {

inline bool plane_from_points(const Vec3& a, const Vec3& b, const Vec3& c, GroundModel& out) {
  Vec3 n = (b - a).cross(c - a);
  const double len = n.norm();
  if (!(len > 1e-12)) return false;
  n /= len;
  if (n.z() < 0) n = -n;
  out.normal = n;
  out.offset = -n.dot(a);
  return true;
}

// Total least squares plane through the selected points.
inline bool refit_plane(const std::vector<Vec3>& pts, const std::vector<std::size_t>& sel, GroundModel& out) {
  if (sel.size() < 3) return false;
  Vec3 mean = Vec3::Zero();
  for (std::size_t i : sel) mean += pts[i];
  mean /= static_cast<double>(sel.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (std::size_t i : sel) {
    const Vec3 d = pts[i] - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  if (solver.info() != Eigen::Success) return false;
  Vec3 n = solver.eigenvectors().col(0);
  if (!(n.norm() > 0)) return false;
  n.normalize();
  if (n.z() < 0) n = -n;
  out.normal = n;
  out.offset = -n.dot(mean);
  return true;
}

inline std::size_t mark_below(const std::vector<Vec3>& pts, const GroundModel& model,
                              std::vector<std::uint8_t>& mask) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    // Within the band or beneath the plane.
    const bool g = model.signed_distance(pts[i]) <= model.inlier_threshold;
    mask[i] = g ? 1 : 0;
    count += g;
  }
  return count;
}

inline GroundResult height_ground(const std::vector<Vec3>& pts, const GroundConfig& cfg) {
  GroundResult res;
  res.mask.assign(pts.size(), 0);
  double zmin = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) zmin = std::min(zmin, p.z());
  res.model.normal = Vec3::UnitZ();
  res.model.offset = -(zmin + cfg.z_max_m);
  res.model.inlier_threshold = 0.0;
  res.ground_count = mark_below(pts, res.model, res.mask);
  return res;
}

}  // namespace detail

inline GroundResult remove_ground(const PointFrame& frame, const GroundConfig& cfg) {
  const auto& pts = frame.points;
  if (pts.empty()) throw ParameterError("remove_ground: empty frame " + std::to_string(frame.t));
  if (!(cfg.threshold_m > 0)) throw ParameterError("remove_ground: ground.threshold_m must be positive");
  if (cfg.iterations < 1) throw ParameterError("remove_ground: ground.iterations must be >= 1");

  GroundResult res;
  if (cfg.method == GroundMethod::kHeight || pts.size() < 3) {
    res = detail::height_ground(pts, cfg);
    res.used_fallback = cfg.method != GroundMethod::kHeight;
  } else {
    std::mt19937_64 rng(cfg.seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(frame.t + 1)));
    std::uniform_int_distribution<std::size_t> pick(0, pts.size() - 1);
    const double min_normal_z = std::cos(cfg.max_tilt_deg * M_PI / 180.0);

    GroundModel best;
    std::size_t best_count = 0;
    for (int it = 0; it < cfg.iterations; ++it) {
      GroundModel cand;
      if (!detail::plane_from_points(pts[pick(rng)], pts[pick(rng)], pts[pick(rng)], cand)) continue;
      if (cand.normal.z() < min_normal_z) continue;
      std::size_t count = 0, below = 0;
      for (const auto& p : pts) {
        const double d = cand.signed_distance(p);
        count += std::abs(d) <= cfg.threshold_m;
        below += d < -cfg.threshold_m;
      }
      // Ground is the lowest surface: a plane with more points under it than
      // on it is a roof or a slice through objects.
      if (below >= count) continue;
      if (count > best_count) {
        best_count = count;
        best = cand;
      }
    }

    const double fraction = static_cast<double>(best_count) / static_cast<double>(pts.size());
    if (best_count == 0 || fraction < cfg.min_inlier_fraction) {
      res = detail::height_ground(pts, cfg);
      res.used_fallback = true;
    } else {
      std::vector<std::size_t> inliers;
      inliers.reserve(best_count);
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (std::abs(best.signed_distance(pts[i])) <= cfg.threshold_m) inliers.push_back(i);
      }
      GroundModel refined = best;
      if (detail::refit_plane(pts, inliers, refined) && refined.normal.z() >= min_normal_z) best = refined;
      best.inlier_threshold = cfg.threshold_m;
      res.model = best;
      res.mask.assign(pts.size(), 0);
      res.ground_count = detail::mark_below(pts, res.model, res.mask);
    }
  }
  res.all_ground = res.ground_count == pts.size();
  return res;
}

}  // namespace sp4d
