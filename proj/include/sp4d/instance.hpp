#pragma once

#include "sp4d/core.hpp"
#include "sp4d/dbscan.hpp"
#include "sp4d/parallel.hpp"
#include "sp4d/superpoint.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sp4d {

// Centroid and mean flow of one superpoint per frame of its lifespan. The last
// sequence frame has no outgoing flow, so mean_flow stops at flow_end.
struct SuperPointStats {
  int id = 0;
  int t_begin = 0;
  int t_end = 0;
  int flow_end = -1;  // last frame with a defined mean flow; < t_begin when none
  std::vector<Vec3> centroid;
  std::vector<Vec3> mean_flow;
  std::vector<std::size_t> count;

  bool alive(int t) const { return t >= t_begin && t <= t_end; }
  bool has_flow(int t) const { return t >= t_begin && t <= flow_end; }
  const Vec3& centroid_at(int t) const { return centroid.at(static_cast<std::size_t>(t - t_begin)); }
  const Vec3& flow_at(int t) const { return mean_flow.at(static_cast<std::size_t>(t - t_begin)); }
  std::size_t count_at(int t) const { return count.at(static_cast<std::size_t>(t - t_begin)); }
};

inline SuperPointStats compute_stats(const SuperPoint4D& sp, const FrameSequence& seq, const FlowField& flow) {
  SuperPointStats s;
  s.id = sp.id;
  s.t_begin = sp.t_begin;
  s.t_end = sp.t_end;
  s.flow_end = std::min(sp.t_end, flow.pair_count() - 1);
  for (int t = sp.t_begin; t <= sp.t_end; ++t) {
    const auto& members = sp.at(t);
    if (members.empty()) {
      throw InvariantError("compute_stats: superpoint " + std::to_string(sp.id) + " is empty at frame " +
                           std::to_string(t));
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    Vec3 c = Vec3::Zero();
    for (std::size_t i : members) c += seq[t].points.at(i);
    s.centroid.push_back(c * inv);
    s.count.push_back(members.size());
    if (t <= s.flow_end) {
      Vec3 f = Vec3::Zero();
      for (std::size_t i : members) f += flow[t].at(i);
      s.mean_flow.push_back(f * inv);
    }
  }
  return s;
}

inline std::vector<SuperPointStats> compute_all_stats(const SuperpointSet& set, const FrameSequence& seq,
                                                      const FlowField& flow) {
  std::vector<SuperPointStats> out(set.superpoints.size());
  parallel_for(out.size(), [&](std::size_t k) { out[k] = compute_stats(set.superpoints[k], seq, flow); });
  return out;
}

struct SimilarityParams {
  double lambda = 0.5;
  double sigma_m = 2.0;
  // Flows shorter than this contribute no direction information.
  double min_flow_norm = 1e-6;

  void validate() const {
    if (!(lambda >= 0 && lambda <= 1)) throw ParameterError("sim: lambda must be in [0, 1]");
    if (!(sigma_m > 0)) throw ParameterError("sim: sigma_m must be positive");
  }
};

inline double cosine_term(const Vec3& a, const Vec3& b, double min_norm) {
  const double na = a.norm(), nb = b.norm();
  if (na < min_norm || nb < min_norm) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

inline double pair_similarity(const SuperPointStats& a, const SuperPointStats& b, int t, const SimilarityParams& p) {
  if (!a.has_flow(t) || !b.has_flow(t)) {
    throw ParameterError("pair_similarity: superpoints " + std::to_string(a.id) + " and " + std::to_string(b.id) +
                         " are not both alive with flow at frame " + std::to_string(t));
  }
  const double motion = cosine_term(a.flow_at(t), b.flow_at(t), p.min_flow_norm);
  const double d2 = (a.centroid_at(t) - b.centroid_at(t)).squaredNorm();
  return p.lambda * motion + (1.0 - p.lambda) * std::exp(-d2 / (p.sigma_m * p.sigma_m));
}

// sum(k,l) accumulates per-frame similarity over frames where both have flow;
// co_alive(k,l) counts those frames. Pairs never co-alive hold -infinity.
struct SimilarityMatrix {
  Eigen::MatrixXd sum;
  Eigen::MatrixXi co_alive;
  SimilarityParams params;

  Eigen::Index size() const { return sum.rows(); }
  static constexpr double kNever = -std::numeric_limits<double>::infinity();
};

inline SimilarityMatrix aggregate_similarity(const std::vector<SuperPointStats>& stats, const SimilarityParams& p) {
  p.validate();
  const auto n = static_cast<Eigen::Index>(stats.size());
  SimilarityMatrix m;
  m.params = p;
  m.sum = Eigen::MatrixXd::Zero(n, n);
  m.co_alive = Eigen::MatrixXi::Zero(n, n);
  parallel_for(stats.size(), [&](std::size_t ku) {
    const auto k = static_cast<Eigen::Index>(ku);
    const SuperPointStats& a = stats[ku];
    m.co_alive(k, k) = std::max(0, a.flow_end - a.t_begin + 1);
    m.sum(k, k) = m.co_alive(k, k);
    for (Eigen::Index l = k + 1; l < n; ++l) {
      const SuperPointStats& b = stats[static_cast<std::size_t>(l)];
      const int lo = std::max(a.t_begin, b.t_begin);
      const int hi = std::min(a.flow_end, b.flow_end);
      double s = 0.0;
      int frames = 0;
      for (int t = lo; t <= hi; ++t) {
        s += pair_similarity(a, b, t, p);
        ++frames;
      }
      const double v = frames > 0 ? s : SimilarityMatrix::kNever;
      m.sum(k, l) = m.sum(l, k) = v;
      m.co_alive(k, l) = m.co_alive(l, k) = frames;
    }
  });
  return m;
}

struct InstanceParams {
  double eps = 0.4;
  int min_pts = 1;
  // Divide sums by co-alive frame count before turning them into distances.
  bool normalize = true;
  // Fold a split parent into its children's instance when they all share one.
  bool merge_split_parents = true;
};

// D = 1 - M/co_alive (normalized) or max(0, 1 - M) (raw); never-co-alive pairs get 2.
inline Eigen::MatrixXd similarity_to_distance(const SimilarityMatrix& m, bool normalize) {
  const Eigen::Index n = m.size();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index l = 0; l < n; ++l) {
      if (k == l) {
        d(k, l) = 0.0;
      } else if (m.co_alive(k, l) == 0) {
        d(k, l) = 2.0;
      } else if (normalize) {
        d(k, l) = 1.0 - m.sum(k, l) / static_cast<double>(m.co_alive(k, l));
      } else {
        d(k, l) = std::max(0.0, 1.0 - m.sum(k, l));
      }
    }
  }
  return d;
}

struct InstanceDecomposition {
  std::vector<int> superpoint_to_instance;
  int instance_count = 0;
  std::vector<std::vector<int>> instance_superpoints;  // ascending superpoint ids
  std::vector<int> t_begin, t_end;                      // per instance lifespan

  int lifespan(int k) const { return t_end[k] - t_begin[k] + 1; }
};

// Instance ids follow the order of each instance's lowest superpoint id.
inline InstanceDecomposition make_decomposition(const std::vector<int>& assignment,
                                                const std::vector<SuperPoint4D>& superpoints) {
  InstanceDecomposition out;
  out.superpoint_to_instance.assign(assignment.size(), -1);
  std::unordered_map<int, int> remap;
  for (std::size_t k = 0; k < assignment.size(); ++k) {
    auto [it, inserted] = remap.try_emplace(assignment[k], out.instance_count);
    if (inserted) {
      ++out.instance_count;
      out.instance_superpoints.emplace_back();
      out.t_begin.push_back(std::numeric_limits<int>::max());
      out.t_end.push_back(std::numeric_limits<int>::min());
    }
    const int inst = it->second;
    out.superpoint_to_instance[k] = inst;
    out.instance_superpoints[inst].push_back(static_cast<int>(k));
    out.t_begin[inst] = std::min(out.t_begin[inst], superpoints[k].t_begin);
    out.t_end[inst] = std::max(out.t_end[inst], superpoints[k].t_end);
  }
  return out;
}

inline InstanceDecomposition cluster_superpoints(const SimilarityMatrix& m, const std::vector<SuperPoint4D>& superpoints,
                                                 const InstanceParams& params) {
  if (static_cast<std::size_t>(m.size()) != superpoints.size()) {
    throw ParameterError("cluster_superpoints: similarity matrix does not match the superpoint count");
  }
  const Eigen::MatrixXd dist = similarity_to_distance(m, params.normalize);
  const FrameLabels labels = dbscan_matrix(dist, DbscanParams{params.eps, params.min_pts});

  const std::size_t n = superpoints.size();
  std::vector<int> group(n);
  int next = label_count(labels);
  for (std::size_t k = 0; k < n; ++k) group[k] = labels[k] >= 0 ? labels[k] : next++;

  if (params.merge_split_parents) {
    std::vector<int> parent_of(static_cast<std::size_t>(next));
    std::iota(parent_of.begin(), parent_of.end(), 0);
    auto find = [&](int x) {
      while (parent_of[x] != x) x = parent_of[x] = parent_of[parent_of[x]];
      return x;
    };
    std::vector<std::vector<int>> children(n);
    for (const auto& sp : superpoints) {
      if (sp.parent >= 0) children[static_cast<std::size_t>(sp.parent)].push_back(sp.id);
    }
    for (std::size_t p = 0; p < n; ++p) {
      if (children[p].empty()) continue;
      const int first = find(group[static_cast<std::size_t>(children[p].front())]);
      bool shared = true;
      for (int c : children[p]) shared = shared && find(group[static_cast<std::size_t>(c)]) == first;
      if (!shared) continue;
      const int a = find(group[p]);
      if (a != first) parent_of[std::max(a, first)] = std::min(a, first);
    }
    for (auto& g : group) g = find(g);
  }
  return make_decomposition(group, superpoints);
}

// Per-frame point counts of an instance.
inline std::vector<std::size_t> instance_point_counts(int inst, const InstanceDecomposition& dec,
                                                      const std::vector<SuperPoint4D>& superpoints) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(dec.lifespan(inst)), 0);
  for (int k : dec.instance_superpoints[inst]) {
    const SuperPoint4D& sp = superpoints[static_cast<std::size_t>(k)];
    for (int t = sp.t_begin; t <= sp.t_end; ++t) counts[static_cast<std::size_t>(t - dec.t_begin[inst])] += sp.at(t).size();
  }
  return counts;
}

// Frame with the most points; the earliest wins ties.
inline int select_canonical(std::span<const std::size_t> counts_per_frame, int t_begin) {
  if (counts_per_frame.empty()) throw ParameterError("select_canonical: instance has no frames");
  std::size_t best = 0;
  for (std::size_t i = 1; i < counts_per_frame.size(); ++i) {
    if (counts_per_frame[i] > counts_per_frame[best]) best = i;
  }
  return t_begin + static_cast<int>(best);
}

inline int select_canonical(int inst, const InstanceDecomposition& dec, const std::vector<SuperPoint4D>& superpoints) {
  const std::vector<std::size_t> counts = instance_point_counts(inst, dec, superpoints);
  return select_canonical(counts, dec.t_begin[inst]);
}

// Instance flows are rounded to this grid so cumulative sums are exact.
inline constexpr double kFlowGrid = 1.0 / 4294967296.0;  // 2^-32 m

inline double snap_to_grid(double v) { return std::nearbyint(v / kFlowGrid) * kFlowGrid; }
inline Vec3 snap_to_grid(const Vec3& v) { return {snap_to_grid(v.x()), snap_to_grid(v.y()), snap_to_grid(v.z())}; }

struct Deformation {
  Vec3 translation = Vec3::Zero();
  Vec3 scale = Vec3::Zero();
  Eigen::Vector4d rotation = Eigen::Vector4d::Zero();  // quaternion offset
};

struct DeformationTrack {
  int instance = 0;
  int canonical_frame = 0;
  std::vector<std::size_t> canonical_points;  // point indices of frame t*
  int t_begin = 0;
  int t_end = 0;
  // instance_flow[t - t_begin] for t in [t_begin, t_end - 1]
  std::vector<Vec3> instance_flow;
  std::vector<std::size_t> flow_weight;
  // deformation[t - t_begin] for t in [t_begin, t_end]
  std::vector<Deformation> deformation;

  const Deformation& at(int t) const { return deformation.at(static_cast<std::size_t>(t - t_begin)); }
  const Vec3& flow_at(int t) const { return instance_flow.at(static_cast<std::size_t>(t - t_begin)); }
};

// Membership-weighted mean of member superpoint flows at frame t.
inline std::pair<Vec3, std::size_t> instance_flow(int inst, int t, const InstanceDecomposition& dec,
                                                  const std::vector<SuperPointStats>& stats) {
  Vec3 sum = Vec3::Zero();
  std::size_t n = 0;
  for (int k : dec.instance_superpoints[inst]) {
    const SuperPointStats& s = stats[static_cast<std::size_t>(k)];
    if (!s.has_flow(t)) continue;
    sum += s.flow_at(t) * static_cast<double>(s.count_at(t));
    n += s.count_at(t);
  }
  if (n == 0) return {Vec3::Zero(), 0};
  return {sum / static_cast<double>(n), n};
}

// Offsets from the canonical frame: forward frames accumulate the instance
// flow, earlier frames accumulate its negation backwards.
inline DeformationTrack build_deformation(int inst, const InstanceDecomposition& dec,
                                          const std::vector<SuperPoint4D>& superpoints,
                                          const std::vector<SuperPointStats>& stats, int canonical_frame) {
  DeformationTrack track;
  track.instance = inst;
  track.t_begin = dec.t_begin[inst];
  track.t_end = dec.t_end[inst];
  track.canonical_frame = canonical_frame;
  if (canonical_frame < track.t_begin || canonical_frame > track.t_end) {
    throw ParameterError("build_deformation: canonical frame outside the instance lifespan");
  }
  for (int k : dec.instance_superpoints[inst]) {
    const SuperPoint4D& sp = superpoints[static_cast<std::size_t>(k)];
    if (sp.alive(canonical_frame)) {
      const auto& m = sp.at(canonical_frame);
      track.canonical_points.insert(track.canonical_points.end(), m.begin(), m.end());
    }
  }
  std::sort(track.canonical_points.begin(), track.canonical_points.end());

  for (int t = track.t_begin; t < track.t_end; ++t) {
    const auto [f, n] = instance_flow(inst, t, dec, stats);
    if (n == 0) {
      throw ParameterError("build_deformation: instance " + std::to_string(inst) + " has no flow at frame " +
                           std::to_string(t));
    }
    track.instance_flow.push_back(snap_to_grid(f));
    track.flow_weight.push_back(n);
  }

  track.deformation.resize(static_cast<std::size_t>(track.t_end - track.t_begin + 1));
  const auto slot = [&](int t) { return static_cast<std::size_t>(t - track.t_begin); };
  for (int t = canonical_frame + 1; t <= track.t_end; ++t) {
    track.deformation[slot(t)].translation = track.deformation[slot(t - 1)].translation + track.flow_at(t - 1);
  }
  for (int t = canonical_frame - 1; t >= track.t_begin; --t) {
    track.deformation[slot(t)].translation = track.deformation[slot(t + 1)].translation - track.flow_at(t);
  }
  return track;
}

enum class MotionClass { kStatic, kDynamic };

struct MotionResult {
  MotionClass motion = MotionClass::kStatic;
  double mean_flow_magnitude = 0.0;
};

// Dynamic iff the point-weighted mean of |F(I)| over the lifespan exceeds tau (strictly).
inline MotionResult classify_motion(const DeformationTrack& track, double tau_dyn) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < track.instance_flow.size(); ++i) {
    num += static_cast<double>(track.flow_weight[i]) * track.instance_flow[i].norm();
    den += static_cast<double>(track.flow_weight[i]);
  }
  MotionResult r;
  r.mean_flow_magnitude = den > 0 ? num / den : 0.0;
  r.motion = r.mean_flow_magnitude > tau_dyn ? MotionClass::kDynamic : MotionClass::kStatic;
  return r;
}

// Per-frame per-point instance ids (GROUND / NOISE for unassigned points).
inline std::vector<FrameLabels> instance_point_labels(const InstanceDecomposition& dec,
                                                      const std::vector<SuperPoint4D>& superpoints,
                                                      const FrameSequence& seq) {
  std::vector<FrameLabels> out(static_cast<std::size_t>(seq.frame_count()));
  for (int t = 0; t < seq.frame_count(); ++t) {
    out[t].resize(seq[t].size());
    for (std::size_t i = 0; i < seq[t].size(); ++i) out[t][i] = seq[t].is_ground(i) ? kGround : kNoise;
  }
  for (const auto& sp : superpoints) {
    const int inst = dec.superpoint_to_instance[static_cast<std::size_t>(sp.id)];
    for (int t = sp.t_begin; t <= sp.t_end; ++t)
      for (std::size_t i : sp.at(t)) out[t][i] = inst;
  }
  return out;
}

}  // namespace sp4d
