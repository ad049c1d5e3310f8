#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace sp4d {

using Vec3 = Eigen::Vector3d;
using Vec2 = Eigen::Vector2d;

// Label sentinels, shared by every file format.
inline constexpr int kNoise = -1;
inline constexpr int kGround = -2;

// Raised for out-of-range parameters or inconsistent arguments.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised for malformed or inconsistent input data (files, flow rows).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a structural invariant of a produced object does not hold.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct PointFrame {
  int t = 0;
  std::vector<Vec3> points;
  // Empty when ground has not been classified yet; otherwise one entry per point.
  std::vector<std::uint8_t> ground_mask;

  std::size_t size() const { return points.size(); }
  bool has_ground_mask() const { return ground_mask.size() == points.size(); }
  bool is_ground(std::size_t i) const {
    return has_ground_mask() && ground_mask[i] != 0;
  }
};

struct FrameSequence {
  std::vector<PointFrame> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
  const PointFrame& operator[](std::size_t t) const { return frames[t]; }
  PointFrame& operator[](std::size_t t) { return frames[t]; }
};

using FrameLabels = std::vector<int>;

struct ClusterLabeling {
  std::vector<FrameLabels> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
};

// flow[t][i] moves point i of frame t towards frame t+1; covers t = 0..T-2.
struct FlowField {
  std::vector<std::vector<Vec3>> pairs;

  int pair_count() const { return static_cast<int>(pairs.size()); }
  const std::vector<Vec3>& operator[](std::size_t t) const { return pairs[t]; }
};

enum class ViolationKind { kEmptySequence, kEmptyFrame, kNonFinite, kNonContiguous };

inline const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::kEmptySequence: return "empty-sequence";
    case ViolationKind::kEmptyFrame: return "empty-frame";
    case ViolationKind::kNonFinite: return "non-finite";
    case ViolationKind::kNonContiguous: return "non-contiguous";
  }
  return "unknown";
}

struct Violation {
  ViolationKind kind;
  int frame = -1;
  long point = -1;

  bool operator==(const Violation&) const = default;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const { return violations.empty(); }
};

inline bool is_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

inline ValidationReport validate_sequence(const FrameSequence& seq) {
  ValidationReport report;
  if (seq.frames.empty()) {
    report.violations.push_back({ViolationKind::kEmptySequence, -1, -1});
    return report;
  }
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const PointFrame& frame = seq.frames[t];
    const int ti = static_cast<int>(t);
    if (frame.t != ti) report.violations.push_back({ViolationKind::kNonContiguous, ti, -1});
    if (frame.points.empty()) report.violations.push_back({ViolationKind::kEmptyFrame, ti, -1});
    for (std::size_t i = 0; i < frame.points.size(); ++i) {
      if (!is_finite(frame.points[i])) {
        report.violations.push_back({ViolationKind::kNonFinite, ti, static_cast<long>(i)});
      }
    }
  }
  return report;
}

// Renumbers non-negative labels 0..K-1 by first occurrence; sentinels pass through.
inline FrameLabels canonicalize_labels(const FrameLabels& labels) {
  FrameLabels out(labels.size());
  std::unordered_map<int, int> remap;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l < 0) {
      out[i] = l;
      continue;
    }
    auto [it, inserted] = remap.try_emplace(l, static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  return out;
}

inline ClusterLabeling canonicalize_labels(const ClusterLabeling& labeling) {
  ClusterLabeling out;
  out.frames.reserve(labeling.frames.size());
  for (const auto& f : labeling.frames) out.frames.push_back(canonicalize_labels(f));
  return out;
}

inline int label_count(const FrameLabels& labels) {
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  return k;
}

}  // namespace sp4d
