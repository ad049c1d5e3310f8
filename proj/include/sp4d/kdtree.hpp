#pragma once

#include "sp4d/core.hpp"

#include <algorithm>
#include <array>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace sp4d {

// Exact KD-tree over a fixed set of 3D points.
//
// Radius queries use the closed ball ||x - q|| <= r and return ascending indices.
// kNN queries order by (squared distance, index), so ties go to the lower index.
// All comparisons are done on squared distances computed as sum of squared
// coordinate differences, the same expression brute-force scans use.
class NeighborIndex {
 public:
  static constexpr std::size_t kLeafSize = 12;

  NeighborIndex() = default;

  explicit NeighborIndex(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points_.empty()) {
      nodes_.reserve(2 * points_.size() / kLeafSize + 2);
      build(0, order_.size());
    }
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const { return points_; }

  std::vector<std::size_t> radius_query(const Vec3& q, double r) const {
    if (!(r > 0.0)) throw ParameterError("radius_query: radius must be positive");
    std::vector<std::size_t> out;
    if (!nodes_.empty()) radius_recurse(0, q, r * r, out);
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t radius_count(const Vec3& q, double r) const { return radius_query(q, r).size(); }

  // k nearest points to q; `exclude` removes one index from consideration.
  std::vector<std::size_t> knn_query(const Vec3& q, std::size_t k,
                                     std::optional<std::size_t> exclude = std::nullopt) const {
    const std::size_t population = points_.size() - (exclude && *exclude < points_.size() ? 1 : 0);
    if (k == 0) throw ParameterError("knn_query: k must be >= 1");
    if (k > population) throw ParameterError("knn_query: k exceeds population");
    std::vector<Candidate> heap;
    heap.reserve(k + 1);
    knn_recurse(0, q, k, exclude, heap);
    std::sort_heap(heap.begin(), heap.end());
    std::vector<std::size_t> out;
    out.reserve(heap.size());
    for (const auto& c : heap) out.push_back(c.index);
    return out;
  }

  // Neighbors of stored point i, optionally skipping i itself.
  std::vector<std::size_t> knn_of(std::size_t i, std::size_t k, bool exclude_self) const {
    return knn_query(points_.at(i), k, exclude_self ? std::optional<std::size_t>(i) : std::nullopt);
  }

  // Nearest point (lowest index on ties) together with its squared distance.
  std::pair<std::size_t, double> nearest(const Vec3& q) const {
    if (points_.empty()) throw ParameterError("nearest: empty index");
    std::vector<Candidate> heap;
    heap.reserve(2);
    knn_recurse(0, q, 1, std::nullopt, heap);
    return {heap.front().index, heap.front().dist2};
  }

  static double squared_distance(const Vec3& a, const Vec3& b) {
    const double dx = a.x() - b.x();
    const double dy = a.y() - b.y();
    const double dz = a.z() - b.z();
    return dx * dx + dy * dy + dz * dz;
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_
    int axis = -1;                   // -1 marks a leaf
    double split = 0.0;
    std::size_t left = 0, right = 0;
    Vec3 lo, hi;                     // bounding box of the range
  };

  struct Candidate {
    double dist2;
    std::size_t index;
    bool operator<(const Candidate& o) const {
      return dist2 < o.dist2 || (dist2 == o.dist2 && index < o.index);
    }
  };

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (std::size_t i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    if (end - begin <= kLeafSize) return id;

    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       const double va = points_[a][axis], vb = points_[b][axis];
                       return va < vb || (va == vb && a < b);
                     });
    const double split = points_[order_[mid]][axis];
    const std::size_t left = build(begin, mid);
    const std::size_t right = build(mid, end);
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  static double box_distance2(const Node& n, const Vec3& q) {
    double d2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      double d = 0.0;
      if (q[a] < n.lo[a]) d = n.lo[a] - q[a];
      else if (q[a] > n.hi[a]) d = q[a] - n.hi[a];
      d2 += d * d;
    }
    return d2;
  }

  void radius_recurse(std::size_t id, const Vec3& q, double r2, std::vector<std::size_t>& out) const {
    const Node& n = nodes_[id];
    // The box bound is a lower bound on every contained distance, so a small
    // slack keeps the pruning conservative under rounding.
    if (box_distance2(n, q) > r2 * (1.0 + 1e-12) + 1e-300) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if (squared_distance(points_[idx], q) <= r2) out.push_back(idx);
      }
      return;
    }
    radius_recurse(n.left, q, r2, out);
    radius_recurse(n.right, q, r2, out);
  }

  void knn_recurse(std::size_t id, const Vec3& q, std::size_t k, std::optional<std::size_t> exclude,
                   std::vector<Candidate>& heap) const {
    const Node& n = nodes_[id];
    if (heap.size() == k && box_distance2(n, q) > heap.front().dist2 * (1.0 + 1e-12)) return;
    if (n.axis < 0) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const std::size_t idx = order_[i];
        if (exclude && *exclude == idx) continue;
        const Candidate c{squared_distance(points_[idx], q), idx};
        if (heap.size() < k) {
          heap.push_back(c);
          std::push_heap(heap.begin(), heap.end());
        } else if (c < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = c;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      return;
    }
    const bool go_left_first = q[n.axis] < n.split;
    knn_recurse(go_left_first ? n.left : n.right, q, k, exclude, heap);
    knn_recurse(go_left_first ? n.right : n.left, q, k, exclude, heap);
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
};

// Fixed neighbor lists: neighbors[i] holds the k nearest other points of i.
struct KnnGraph {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> neighbors;

  std::size_t size() const { return neighbors.size(); }
};

inline KnnGraph build_knn_graph(std::span<const Vec3> points, std::size_t k) {
  if (k == 0) throw ParameterError("build_knn_graph: k must be >= 1");
  if (k >= points.size()) throw ParameterError("build_knn_graph: k must be smaller than the point count");
  const NeighborIndex index(points);
  KnnGraph graph;
  graph.k = k;
  graph.neighbors.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) graph.neighbors[i] = index.knn_of(i, k, true);
  return graph;
}

}  // namespace sp4d
