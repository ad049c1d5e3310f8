#pragma once

#include "sp4d/gradcheck.hpp"
#include "sp4d/regularizers.hpp"

#include <random>
#include <vector>

namespace sp4d {

struct RegCheckReport {
  double loss2d = 0.0;
  double loss3d = 0.0;
  GradCheckResult grad2d;
  GradCheckResult grad3d;
  bool has3d = false;

  double max_relative_error() const {
    return std::max(grad2d.max_relative_error, has3d ? grad3d.max_relative_error : 0.0);
  }
};

inline GradCheckResult check_smooth2d(const FlowMap2D& flow, const Image2D& image, const Smooth2DParams& params,
                                      double h = 1e-6) {
  const FlowMap2D grad = smooth2d_grad(flow, image, params);
  std::vector<double> x, analytic;
  for (std::size_t i = 0; i < flow.values.size(); ++i) {
    x.insert(x.end(), {flow.values[i].x(), flow.values[i].y()});
    analytic.insert(analytic.end(), {grad.values[i].x(), grad.values[i].y()});
  }
  FlowMap2D probe = flow;
  auto loss = [&](const std::vector<double>& p) {
    for (std::size_t i = 0; i < probe.values.size(); ++i) probe.values[i] = Vec2(p[2 * i], p[2 * i + 1]);
    return smooth2d_loss(probe, image, params);
  };
  return compare_gradients(analytic, central_differences(loss, x, h));
}

inline GradCheckResult check_smooth3d(const VelocityField3D& field, double h = 1e-6) {
  const KnnGraph graph = velocity_graph(field);
  const std::vector<Vec3> grad = smooth3d_grad(graph, field.velocities);
  std::vector<double> x, analytic;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      x.push_back(field.velocities[i][a]);
      analytic.push_back(grad[i][a]);
    }
  }
  std::vector<Vec3> probe(field.velocities.size());
  auto loss = [&](const std::vector<double>& p) {
    for (std::size_t i = 0; i < probe.size(); ++i) probe[i] = Vec3(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
    return smooth3d_loss(graph, probe);
  };
  return compare_gradients(analytic, central_differences(loss, x, h));
}

// Random inputs for self-checks. Image variation is kept small so the edge
// weights stay away from underflow at the default lambda.
inline FlowMap2D random_flowmap(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  FlowMap2D f(h, w);
  for (auto& v : f.values) v = Vec2(u(rng), u(rng));
  return f;
}

inline Image2D random_image(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image2D img(h, w, c);
  const double base = 0.2 + 0.6 * u(rng);
  for (auto& v : img.values) v = base + 0.01 * u(rng);
  return img;
}

inline VelocityField3D random_velocity_field(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::uniform_real_distribution<double> pos(-5.0, 5.0), vel(-1.0, 1.0);
  VelocityField3D f;
  f.k = k;
  for (std::size_t i = 0; i < n; ++i) {
    f.positions.emplace_back(pos(rng), pos(rng), pos(rng));
    f.velocities.emplace_back(vel(rng), vel(rng), vel(rng));
  }
  return f;
}

}  // namespace sp4d
