#pragma once

#include "sp4d/core.hpp"
#include "sp4d/kdtree.hpp"

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace sp4d {

// A cluster tracked over [t_begin, t_end]; members[t - t_begin] holds point
// indices of frame t in ascending order.
struct SuperPoint4D {
  int id = 0;
  int t_begin = 0;
  int t_end = 0;
  int parent = -1;  // superpoint this one split from, or -1
  std::vector<std::vector<std::size_t>> members;

  bool alive(int t) const { return t >= t_begin && t <= t_end; }
  const std::vector<std::size_t>& at(int t) const { return members.at(static_cast<std::size_t>(t - t_begin)); }
  int lifespan() const { return t_end - t_begin + 1; }
};

struct MatchConfig {
  double r_match_m = 0.5;
  int n_min = 3;
  double theta_split = 0.3;

  void validate() const {
    if (!(r_match_m > 0)) throw ParameterError("match: r_match_m must be positive");
    if (n_min < 1) throw ParameterError("match: n_min must be >= 1");
    if (!(theta_split > 0 && theta_split <= 1)) throw ParameterError("match: theta_split must be in (0, 1]");
  }
};

// Clustered points of frame t+1 that a warped point may land on.
class LandingTarget {
 public:
  LandingTarget(std::span<const Vec3> points, const FrameLabels& labels) {
    if (points.size() != labels.size()) throw ParameterError("landing target: points and labels differ in length");
    std::vector<Vec3> eligible;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (labels[i] >= 0) {
        eligible.push_back(points[i]);
        labels_.push_back(labels[i]);
      }
    }
    index_ = NeighborIndex(eligible);
  }

  bool empty() const { return index_.empty(); }

  // Cluster of the nearest eligible point if within r, else -1.
  int land(const Vec3& q, double r) const {
    if (index_.empty()) return -1;
    const auto [idx, d2] = index_.nearest(q);
    return d2 <= r * r ? labels_[idx] : -1;
  }

 private:
  NeighborIndex index_;
  std::vector<int> labels_;
};

using LandingCounts = std::map<int, int>;

inline LandingCounts count_landings(std::span<const std::size_t> src_cluster, std::span<const Vec3> src_points,
                                    std::span<const Vec3> flow, const LandingTarget& target, double r_match) {
  if (!(r_match > 0)) throw ParameterError("count_landings: r_match must be positive");
  LandingCounts counts;
  for (std::size_t i : src_cluster) {
    if (i >= src_points.size() || i >= flow.size()) throw ParameterError("count_landings: point index out of range");
    const int m = target.land(src_points[i] + flow[i], r_match);
    if (m >= 0) ++counts[m];
  }
  return counts;
}

struct MatchDecision {
  enum class Kind { kVanish, kMatch, kSplit };
  Kind kind = Kind::kVanish;
  std::vector<int> targets;  // one entry for kMatch, ascending ids for kSplit

  static MatchDecision vanish() { return {}; }
  static MatchDecision match(int m) { return {Kind::kMatch, {m}}; }
  static MatchDecision split(std::vector<int> ms) { return {Kind::kSplit, std::move(ms)}; }
  bool operator==(const MatchDecision&) const = default;
};

inline MatchDecision match_clusters(const LandingCounts& counts, const MatchConfig& cfg) {
  long total = 0;
  for (const auto& [m, c] : counts) total += c;
  int best = -1, best_count = 0;
  std::vector<int> split_targets;
  for (const auto& [m, c] : counts) {
    if (c < cfg.n_min) continue;
    if (c > best_count) {  // map order gives lower ids first, so ties keep them
      best = m;
      best_count = c;
    }
    if (static_cast<double>(c) >= cfg.theta_split * static_cast<double>(total)) split_targets.push_back(m);
  }
  if (best < 0) return MatchDecision::vanish();
  if (split_targets.size() >= 2) return MatchDecision::split(std::move(split_targets));
  return MatchDecision::match(best);
}

struct SuperpointSet {
  std::vector<SuperPoint4D> superpoints;
  // cluster_to_superpoint[t][k]: superpoint owning cluster k of frame t.
  std::vector<std::vector<int>> cluster_to_superpoint;
};

namespace detail {

inline std::vector<std::vector<std::size_t>> cluster_members(const FrameLabels& labels) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(label_count(labels)));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 0) out[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  return out;
}

}  // namespace detail

// Forward sweep over frame pairs. Matched targets inherit the source id; when
// several sources claim one target, the larger landed count wins (lower id on
// ties) and the losers end. Split children get fresh ids and record the parent;
// unclaimed targets start new superpoints.
inline SuperpointSet generate_superpoints(const FrameSequence& seq, const ClusterLabeling& labeling,
                                          const FlowField& flow, const MatchConfig& cfg) {
  cfg.validate();
  const int frames = seq.frame_count();
  if (frames < 1) throw ParameterError("generate_superpoints: empty sequence");
  if (labeling.frame_count() != frames) throw ParameterError("generate_superpoints: labeling frame count mismatch");
  if (flow.pair_count() != frames - 1) throw ParameterError("generate_superpoints: flow must cover T-1 frame pairs");
  for (int t = 0; t < frames; ++t) {
    if (labeling.frames[t].size() != seq[t].size()) {
      throw ParameterError("generate_superpoints: labels of frame " + std::to_string(t) + " do not match its points");
    }
    if (t + 1 < frames && flow[t].size() != seq[t].size()) {
      throw ParameterError("generate_superpoints: flow of frame " + std::to_string(t) + " does not match its points");
    }
  }

  SuperpointSet out;
  out.cluster_to_superpoint.resize(frames);
  std::vector<std::vector<std::vector<std::size_t>>> clusters(frames);
  for (int t = 0; t < frames; ++t) clusters[t] = detail::cluster_members(canonicalize_labels(labeling.frames[t]));

  auto start = [&](int t, std::size_t k, int parent) {
    SuperPoint4D sp;
    sp.id = static_cast<int>(out.superpoints.size());
    sp.t_begin = sp.t_end = t;
    sp.parent = parent;
    sp.members.push_back(clusters[t][k]);
    out.superpoints.push_back(std::move(sp));
    return out.superpoints.back().id;
  };

  for (std::size_t k = 0; k < clusters[0].size(); ++k) out.cluster_to_superpoint[0].push_back(start(0, k, -1));

  for (int t = 0; t + 1 < frames; ++t) {
    const FrameLabels next_labels = canonicalize_labels(labeling.frames[t + 1]);
    const LandingTarget target(seq[t + 1].points, next_labels);
    struct Claim {
      int count = 0;
      int source = -1;
      bool child = false;
    };
    std::vector<Claim> claims(clusters[t + 1].size());
    auto offer = [&](int m, int count, int source, bool child) {
      Claim& c = claims[static_cast<std::size_t>(m)];
      if (c.source < 0 || count > c.count || (count == c.count && source < c.source)) c = {count, source, child};
    };
    for (std::size_t k = 0; k < clusters[t].size(); ++k) {
      const int sp = out.cluster_to_superpoint[t][k];
      const LandingCounts counts = count_landings(clusters[t][k], seq[t].points, flow[t], target, cfg.r_match_m);
      const MatchDecision d = match_clusters(counts, cfg);
      for (int m : d.targets) offer(m, counts.at(m), sp, d.kind == MatchDecision::Kind::kSplit);
    }
    auto& owners = out.cluster_to_superpoint[t + 1];
    owners.resize(clusters[t + 1].size());
    for (std::size_t m = 0; m < clusters[t + 1].size(); ++m) {
      const Claim& c = claims[m];
      if (c.source >= 0 && !c.child) {
        SuperPoint4D& sp = out.superpoints[static_cast<std::size_t>(c.source)];
        sp.t_end = t + 1;
        sp.members.push_back(clusters[t + 1][m]);
        owners[m] = sp.id;
      } else {
        owners[m] = start(t + 1, m, c.source);
      }
    }
  }
  return out;
}

// Checks lifespan non-emptiness and per-frame disjointness.
inline void check_superpoints(const SuperpointSet& set, const FrameSequence& seq) {
  std::vector<std::vector<int>> owner(static_cast<std::size_t>(seq.frame_count()));
  for (int t = 0; t < seq.frame_count(); ++t) owner[t].assign(seq[t].size(), -1);
  for (const auto& sp : set.superpoints) {
    if (sp.t_begin < 0 || sp.t_end >= seq.frame_count() || sp.t_end < sp.t_begin ||
        static_cast<int>(sp.members.size()) != sp.lifespan()) {
      throw InvariantError("superpoint " + std::to_string(sp.id) + " has an inconsistent lifespan");
    }
    for (int t = sp.t_begin; t <= sp.t_end; ++t) {
      if (sp.at(t).empty()) {
        throw InvariantError("superpoint " + std::to_string(sp.id) + " is empty at frame " + std::to_string(t));
      }
      for (std::size_t i : sp.at(t)) {
        if (i >= owner[t].size() || owner[t][i] >= 0) {
          throw InvariantError("point " + std::to_string(i) + " of frame " + std::to_string(t) +
                               " is claimed twice or out of range");
        }
        owner[t][i] = sp.id;
      }
    }
  }
}

}  // namespace sp4d
