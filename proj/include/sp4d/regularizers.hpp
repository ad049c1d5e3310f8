#pragma once

#include "sp4d/core.hpp"
#include "sp4d/kdtree.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace sp4d {

// Dense per-pixel 2D flow, row-major.
struct FlowMap2D {
  int height = 0;
  int width = 0;
  std::vector<Vec2> values;

  FlowMap2D() = default;
  FlowMap2D(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, Vec2::Zero()) {}

  Vec2& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
  const Vec2& at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
};

// Multi-channel image with intensities in [0,1], layout (row, col, channel).
struct Image2D {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> values;

  Image2D() = default;
  Image2D(int h, int w, int c)
      : height(h), width(w), channels(c), values(static_cast<std::size_t>(h) * w * c, 0.0) {}

  double& at(int r, int col, int ch) {
    return values[(static_cast<std::size_t>(r) * width + col) * channels + ch];
  }
  double at(int r, int col, int ch) const {
    return values[(static_cast<std::size_t>(r) * width + col) * channels + ch];
  }
};

enum class FlowNorm { kL1, kL2 };

struct Smooth2DParams {
  double lambda_edge = 150.0;
  FlowNorm norm = FlowNorm::kL1;
};

namespace detail {

inline void check_dims(const FlowMap2D& flow, const Image2D& image) {
  if (flow.height != image.height || flow.width != image.width) {
    throw ParameterError("smooth2d: flow map is " + std::to_string(flow.height) + "x" +
                         std::to_string(flow.width) + " but image is " + std::to_string(image.height) +
                         "x" + std::to_string(image.width));
  }
  if (flow.values.size() != static_cast<std::size_t>(flow.height) * flow.width) {
    throw ParameterError("smooth2d: flow map storage does not match its dimensions");
  }
  if (image.values.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw ParameterError("smooth2d: image storage does not match its dimensions");
  }
}

inline double edge_weight(const Image2D& image, int r0, int c0, int r1, int c1, double lambda) {
  double g = 0.0;
  for (int ch = 0; ch < image.channels; ++ch) g += std::abs(image.at(r1, c1, ch) - image.at(r0, c0, ch));
  return std::exp(-lambda * g);
}

inline double flow_magnitude(const Vec2& d, FlowNorm norm) {
  return norm == FlowNorm::kL1 ? std::abs(d.x()) + std::abs(d.y()) : d.norm();
}

// Subgradient of the magnitude; zero at the kink.
inline Vec2 flow_magnitude_grad(const Vec2& d, FlowNorm norm) {
  if (norm == FlowNorm::kL1) {
    auto sgn = [](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); };
    return {sgn(d.x()), sgn(d.y())};
  }
  const double n = d.norm();
  return n > 0 ? Vec2(d / n) : Vec2::Zero();
}

// Visits every forward-difference pair with its weight and direction normalizer.
template <typename Visit>
void for_each_difference(const FlowMap2D& flow, const Image2D& image, double lambda, Visit&& visit) {
  const int h = flow.height, w = flow.width;
  const double nx = static_cast<double>(h) * (w - 1);
  const double ny = static_cast<double>(h - 1) * w;
  if (w > 1) {
    for (int r = 0; r < h; ++r)
      for (int c = 0; c + 1 < w; ++c) visit(r, c, r, c + 1, edge_weight(image, r, c, r, c + 1, lambda) / nx);
  }
  if (h > 1) {
    for (int r = 0; r + 1 < h; ++r)
      for (int c = 0; c < w; ++c) visit(r, c, r + 1, c, edge_weight(image, r, c, r + 1, c, lambda) / ny);
  }
}

}  // namespace detail

// Edge-aware first-order smoothness: each direction's weighted |dF| is averaged
// over the pixels where that forward difference exists, then the two are summed.
inline double smooth2d_loss(const FlowMap2D& flow, const Image2D& image, const Smooth2DParams& params = {}) {
  detail::check_dims(flow, image);
  double loss = 0.0;
  detail::for_each_difference(flow, image, params.lambda_edge, [&](int r0, int c0, int r1, int c1, double w) {
    loss += w * detail::flow_magnitude(flow.at(r1, c1) - flow.at(r0, c0), params.norm);
  });
  return loss;
}

inline FlowMap2D smooth2d_grad(const FlowMap2D& flow, const Image2D& image, const Smooth2DParams& params = {}) {
  detail::check_dims(flow, image);
  FlowMap2D grad(flow.height, flow.width);
  detail::for_each_difference(flow, image, params.lambda_edge, [&](int r0, int c0, int r1, int c1, double w) {
    const Vec2 g = w * detail::flow_magnitude_grad(flow.at(r1, c1) - flow.at(r0, c0), params.norm);
    grad.at(r1, c1) += g;
    grad.at(r0, c0) -= g;
  });
  return grad;
}

// Per-point velocities with the canonical positions that define the neighbor graph.
struct VelocityField3D {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::size_t k = 8;
};

inline KnnGraph velocity_graph(const VelocityField3D& field) {
  if (field.positions.size() != field.velocities.size()) {
    throw ParameterError("smooth3d: positions and velocities differ in length");
  }
  if (field.k < 1) throw ParameterError("smooth3d: K must be >= 1");
  if (field.k >= field.positions.size()) throw ParameterError("smooth3d: K must be smaller than the point count");
  return build_knn_graph(field.positions, field.k);
}

namespace detail {

inline std::vector<Vec3> knn_residuals(const KnnGraph& graph, std::span<const Vec3> v) {
  std::vector<Vec3> res(v.size());
  const double inv_k = 1.0 / static_cast<double>(graph.k);
  for (std::size_t i = 0; i < v.size(); ++i) {
    // Averaging differences rather than velocities keeps equal fields exactly zero.
    Vec3 diff = Vec3::Zero();
    for (std::size_t j : graph.neighbors[i]) diff += v[i] - v[j];
    res[i] = diff * inv_k;
  }
  return res;
}

}  // namespace detail

// Sum (not mean) of squared deviations from the neighbor mean over a fixed graph.
inline double knn_smoothness_sum(const KnnGraph& graph, std::span<const Vec3> v) {
  if (graph.size() != v.size()) throw ParameterError("knn smoothness: graph and field sizes differ");
  double s = 0.0;
  for (const Vec3& r : detail::knn_residuals(graph, v)) s += r.squaredNorm();
  return s;
}

// Gradient of knn_smoothness_sum: direct term plus the transpose contributions
// from every point that lists m among its neighbors.
inline std::vector<Vec3> knn_smoothness_sum_grad(const KnnGraph& graph, std::span<const Vec3> v) {
  if (graph.size() != v.size()) throw ParameterError("knn smoothness: graph and field sizes differ");
  const std::vector<Vec3> res = detail::knn_residuals(graph, v);
  const double inv_k = 1.0 / static_cast<double>(graph.k);
  std::vector<Vec3> grad(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) grad[i] = 2.0 * res[i];
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Vec3 back = 2.0 * inv_k * res[i];
    for (std::size_t j : graph.neighbors[i]) grad[j] -= back;
  }
  return grad;
}

inline double smooth3d_loss(const KnnGraph& graph, std::span<const Vec3> v) {
  return knn_smoothness_sum(graph, v) / static_cast<double>(v.size());
}

inline std::vector<Vec3> smooth3d_grad(const KnnGraph& graph, std::span<const Vec3> v) {
  std::vector<Vec3> g = knn_smoothness_sum_grad(graph, v);
  const double inv_n = 1.0 / static_cast<double>(v.size());
  for (auto& x : g) x *= inv_n;
  return g;
}

inline double smooth3d_loss(const VelocityField3D& field) {
  return smooth3d_loss(velocity_graph(field), field.velocities);
}

inline std::vector<Vec3> smooth3d_grad(const VelocityField3D& field) {
  return smooth3d_grad(velocity_graph(field), field.velocities);
}

// v_i = d_i^{t+1} - d_i^t
inline std::vector<Vec3> velocities_from_offsets(std::span<const Vec3> offset_t, std::span<const Vec3> offset_next) {
  if (offset_t.size() != offset_next.size()) throw ParameterError("velocities: offset arrays differ in length");
  std::vector<Vec3> v(offset_t.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = offset_next[i] - offset_t[i];
  return v;
}

}  // namespace sp4d
