#pragma once

#include "sp4d/core.hpp"
#include "sp4d/kdtree.hpp"
#include "sp4d/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace sp4d {

struct FlowConfig {
  int iterations = 300;
  double step_size = 0.05;
  double rigidity_weight = 1.0;
  int rigidity_k = 8;
  double truncation_radius_m = 2.0;
  // Leading share of iterations that move each kNN-connected component as one
  // rigid translation (gradient projected onto component-constant fields).
  double rigid_fraction = 0.5;
  // Afterwards the step blends the point gradient with its component mean.
  double group_blend = 0.9;

  void validate() const {
    if (iterations < 0) throw ParameterError("flow: iterations must be >= 0");
    if (!(step_size > 0)) throw ParameterError("flow: step_size must be positive");
    if (!(rigidity_weight >= 0)) throw ParameterError("flow: rigidity_weight must be non-negative");
    if (rigidity_k < 1) throw ParameterError("flow: rigidity_k must be >= 1");
    if (!(truncation_radius_m > 0)) throw ParameterError("flow: truncation_radius_m must be positive");
    if (!(group_blend >= 0 && group_blend < 1)) throw ParameterError("flow: group_blend must be in [0, 1)");
    if (!(rigid_fraction >= 0 && rigid_fraction <= 1)) throw ParameterError("flow: rigid_fraction must be in [0, 1]");
  }
};

struct FlowEstimate {
  std::vector<Vec3> flow;
  // Objective before the first step and after every accepted step.
  std::vector<double> objective;
};

// Truncated chamfer plus kNN rigidity:
//   J(f) = sum_i min(d(p_i + f_i, dst)^2, R^2) + w * sum_i ||f_i - mean_{kNN(i)} f||^2
class FlowObjective {
 public:
  FlowObjective(std::span<const Vec3> src, std::span<const Vec3> dst, const FlowConfig& cfg)
      : src_(src), dst_index_(dst), cfg_(cfg), cap2_(cfg.truncation_radius_m * cfg.truncation_radius_m) {
    if (src.empty() || dst.empty()) throw ParameterError("estimate_flow: source and target must be non-empty");
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(cfg.rigidity_k), src.size() - 1);
    if (k >= 1 && cfg.rigidity_weight > 0) graph_ = build_knn_graph(src, k);
  }

  double value(std::span<const Vec3> f) const {
    double j = 0.0;
    for (std::size_t i = 0; i < src_.size(); ++i) {
      const auto [idx, d2] = dst_index_.nearest(src_[i] + f[i]);
      j += std::min(d2, cap2_);
    }
    if (graph_.size() == f.size()) j += cfg_.rigidity_weight * knn_smoothness_sum(graph_, f);
    return j;
  }

  const KnnGraph& graph() const { return graph_; }

  std::vector<Vec3> gradient(std::span<const Vec3> f) const {
    std::vector<Vec3> g(src_.size(), Vec3::Zero());
    for (std::size_t i = 0; i < src_.size(); ++i) {
      const Vec3 q = src_[i] + f[i];
      const auto [idx, d2] = dst_index_.nearest(q);
      if (d2 < cap2_) g[i] = 2.0 * (q - dst_index_.point(idx));
    }
    if (graph_.size() == f.size()) {
      const std::vector<Vec3> gr = knn_smoothness_sum_grad(graph_, f);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg_.rigidity_weight * gr[i];
    }
    return g;
  }

 private:
  std::span<const Vec3> src_;
  NeighborIndex dst_index_;
  FlowConfig cfg_;
  double cap2_;
  KnnGraph graph_;
};

namespace detail {

// Connected components of the symmetrized kNN graph.
inline std::vector<std::size_t> graph_components(const KnnGraph& graph, std::size_t n) {
  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = i;
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < graph.size(); ++i) {
    for (std::size_t j : graph.neighbors[i]) {
      const std::size_t a = find(i), b = find(j);
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  }
  std::vector<std::size_t> comp(n);
  for (std::size_t i = 0; i < n; ++i) comp[i] = find(i);
  return comp;
}

// Applies P = (1 - b) I + b A, where A averages over each component. A is an
// orthogonal projector, so P is positive semidefinite (definite for b < 1) and
// -P g never ascends.
inline void precondition(std::vector<Vec3>& g, const std::vector<std::size_t>& comp, double blend) {
  if (blend == 0.0) return;
  std::vector<Vec3> sum(g.size(), Vec3::Zero());
  std::vector<double> count(g.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    sum[comp[i]] += g[i];
    count[comp[i]] += 1.0;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (1.0 - blend) * g[i] + blend * (sum[comp[i]] / count[comp[i]]);
  }
}

}  // namespace detail

// A rigid step moves a whole component by its mean residual, so it tolerates
// far larger steps than a per-point step; the line search still guards descent.
inline constexpr double kRigidStepGrowth = 16.0;

inline FlowEstimate estimate_flow(std::span<const Vec3> src, std::span<const Vec3> dst, const FlowConfig& cfg) {
  cfg.validate();
  const FlowObjective objective(src, dst, cfg);
  FlowEstimate out;
  out.flow.assign(src.size(), Vec3::Zero());
  double current = objective.value(out.flow);
  out.objective.push_back(current);

  const std::vector<std::size_t> comp = detail::graph_components(objective.graph(), src.size());
  const int rigid_iterations = static_cast<int>(std::lround(cfg.rigid_fraction * cfg.iterations));
  double step = cfg.step_size;
  std::vector<Vec3> trial(src.size());
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Vec3> g = objective.gradient(out.flow);
    detail::precondition(g, comp, it < rigid_iterations ? 1.0 : cfg.group_blend);
    bool accepted = false;
    for (int halving = 0; halving < 40 && !accepted; ++halving) {
      for (std::size_t i = 0; i < trial.size(); ++i) trial[i] = out.flow[i] - step * g[i];
      const double next = objective.value(trial);
      if (next <= current) {
        accepted = true;
        current = next;
        out.flow.swap(trial);
        step = std::min(it < rigid_iterations ? kRigidStepGrowth * cfg.step_size : cfg.step_size, 2.0 * step);
      } else {
        step *= 0.5;
      }
    }
    if (!accepted) {
      if (it < rigid_iterations) {
        it = rigid_iterations - 1;
        step = cfg.step_size;
        continue;
      }
      break;
    }
    out.objective.push_back(current);
  }
  return out;
}

}  // namespace sp4d
