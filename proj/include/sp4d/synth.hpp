#pragma once

#include "sp4d/core.hpp"
#include "sp4d/kdtree.hpp"
#include "sp4d/labels.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace sp4d {

enum class ShapeKind { kBox, kSphereShell, kBipedBlob };

struct ObjectSpec {
  ShapeKind shape = ShapeKind::kBox;
  Vec3 size{4.0, 1.8, 1.5};  // length (body x), width (body y), height
  int points = 1000;
  Vec3 start = Vec3::Zero();  // body origin (bottom center) at first_frame
  Vec3 velocity = Vec3::Zero();  // meters per frame
  double yaw = 0.0;
  double yaw_rate = 0.0;  // radians per frame
  int first_frame = 0;
  int last_frame = -1;  // inclusive; -1 means the last frame
  // Optional split: from split_frame on, the halves on either side of the body
  // axis move apart by split_gap along that axis.
  int split_frame = -1;
  int split_axis = 1;
  double split_gap = 0.0;

  bool moves() const { return velocity.norm() > 0 || yaw_rate != 0.0 || (split_frame >= 0 && split_gap != 0.0); }
};

struct GroundSpec {
  bool enabled = true;
  Vec2 center = Vec2::Zero();
  Vec2 extent{60.0, 60.0};
  int points = 2000;
  double z = 0.0;
  double tilt_deg = 0.0;  // rotation about the y axis
};

struct SceneSpec {
  int frames = 10;
  std::uint64_t seed = 0;
  double noise_sigma = 0.02;
  // When positive, generation fails if points of two objects come closer.
  double min_separation = 0.0;
  GroundSpec ground;
  std::vector<ObjectSpec> objects;

  int last_frame_of(const ObjectSpec& o) const { return o.last_frame < 0 ? frames - 1 : o.last_frame; }
};

struct SyntheticScene {
  FrameSequence sequence;
  std::vector<FrameLabels> object_labels;  // object index per point, GROUND for ground
  FlowField flow;                          // exact displacement of every point to t+1
  std::vector<bool> object_dynamic;

  // Ground-truth table: superpoint and instance columns both carry the object id.
  std::vector<LabelTable> label_tables() const {
    std::vector<LabelTable> out(object_labels.size());
    for (std::size_t t = 0; t < object_labels.size(); ++t) {
      out[t].resize(object_labels[t].size());
      for (std::size_t i = 0; i < object_labels[t].size(); ++i) {
        const int o = object_labels[t][i];
        const char m = o == kGround ? kMotionGround
                                    : (object_dynamic[static_cast<std::size_t>(o)] ? kMotionDynamic : kMotionStatic);
        out[t].set(i, o, o, m);
      }
    }
    return out;
  }
};

namespace detail {

// Coordinates live on a 2^-20 m grid so p + (q - p) == q holds exactly.
inline constexpr double kPointGrid = 1.0 / 1048576.0;

inline Vec3 snap_point(const Vec3& p) {
  return {std::nearbyint(p.x() / kPointGrid) * kPointGrid, std::nearbyint(p.y() / kPointGrid) * kPointGrid,
          std::nearbyint(p.z() / kPointGrid) * kPointGrid};
}

inline Vec3 unit_sphere(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-9) return v / len;
  }
}

inline Vec3 ellipsoid_shell(std::mt19937_64& rng, const Vec3& center, const Vec3& radii) {
  return center + unit_sphere(rng).cwiseProduct(radii);
}

// Visible surface of a box: every face except the bottom.
inline Vec3 box_surface(std::mt19937_64& rng, const Vec3& size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double top = size.x() * size.y(), fx = size.y() * size.z(), fy = size.x() * size.z();
  const double total = top + 2 * fx + 2 * fy;
  const double r = u(rng) * total;
  Vec3 p((u(rng) - 0.5) * size.x(), (u(rng) - 0.5) * size.y(), u(rng) * size.z());
  if (r < top) p.z() = size.z();
  else if (r < top + fx) p.x() = -0.5 * size.x();
  else if (r < top + 2 * fx) p.x() = 0.5 * size.x();
  else if (r < top + 2 * fx + fy) p.y() = -0.5 * size.y();
  else p.y() = 0.5 * size.y();
  return p;
}

inline Vec3 biped_surface(std::mt19937_64& rng, const Vec3& size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double h = size.z(), w = size.y(), d = size.x();
  const double r = u(rng);
  if (r < 0.4) {
    const double side = r < 0.2 ? -1.0 : 1.0;
    return ellipsoid_shell(rng, {0.0, side * 0.25 * w, 0.225 * h}, {0.2 * d, 0.18 * w, 0.225 * h});
  }
  if (r < 0.85) return ellipsoid_shell(rng, {0.0, 0.0, 0.65 * h}, {0.45 * d, 0.5 * w, 0.2 * h});
  return ellipsoid_shell(rng, {0.0, 0.0, 0.925 * h}, {0.3 * d, 0.3 * w, 0.075 * h});
}

inline Vec3 sample_shape(std::mt19937_64& rng, const ObjectSpec& o) {
  switch (o.shape) {
    case ShapeKind::kBox: return box_surface(rng, o.size);
    case ShapeKind::kSphereShell: return ellipsoid_shell(rng, {0.0, 0.0, 0.5 * o.size.z()}, 0.5 * o.size);
    case ShapeKind::kBipedBlob: return biped_surface(rng, o.size);
  }
  return Vec3::Zero();
}

inline Vec3 place(const ObjectSpec& o, const Vec3& body, int t) {
  Vec3 local = body;
  if (o.split_frame >= 0 && t >= o.split_frame) {
    local[o.split_axis] += (body[o.split_axis] >= 0 ? 0.5 : -0.5) * o.split_gap;
  }
  const double dt = static_cast<double>(t - o.first_frame);
  const double yaw = o.yaw + o.yaw_rate * dt;
  const double c = std::cos(yaw), s = std::sin(yaw);
  const Vec3 rotated(c * local.x() - s * local.y(), s * local.x() + c * local.y(), local.z());
  return snap_point(rotated + o.start + o.velocity * dt);
}

}  // namespace detail

inline void validate_scene_spec(const SceneSpec& spec) {
  if (spec.frames < 1) throw ParameterError("scene: frames must be >= 1");
  if (!(spec.noise_sigma >= 0)) throw ParameterError("scene: noise_sigma must be non-negative");
  if (spec.ground.enabled && spec.ground.points < 0) throw ParameterError("scene: ground.points must be >= 0");
  for (std::size_t k = 0; k < spec.objects.size(); ++k) {
    const ObjectSpec& o = spec.objects[k];
    const std::string tag = "scene: object " + std::to_string(k) + ": ";
    if (o.points < 1) throw ParameterError(tag + "points must be >= 1");
    if (!(o.size.minCoeff() > 0)) throw ParameterError(tag + "size must be positive");
    if (o.first_frame < 0 || o.first_frame >= spec.frames) throw ParameterError(tag + "first_frame out of range");
    const int last = spec.last_frame_of(o);
    if (last < o.first_frame || last >= spec.frames) throw ParameterError(tag + "last_frame out of range");
    if (o.split_axis < 0 || o.split_axis > 2) throw ParameterError(tag + "split_axis must be 0, 1 or 2");
  }
  if (spec.frames > 0 && spec.objects.empty() && !spec.ground.enabled) {
    throw ParameterError("scene: needs at least one object or a ground plane");
  }
}

inline SyntheticScene generate_scene(const SceneSpec& spec) {
  validate_scene_spec(spec);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<std::vector<Vec3>> bodies(spec.objects.size());
  for (std::size_t k = 0; k < spec.objects.size(); ++k) {
    const ObjectSpec& o = spec.objects[k];
    bodies[k].reserve(static_cast<std::size_t>(o.points));
    for (int i = 0; i < o.points; ++i) {
      Vec3 p = detail::sample_shape(rng, o);
      if (spec.noise_sigma > 0) p += spec.noise_sigma * Vec3(noise(rng), noise(rng), noise(rng));
      bodies[k].push_back(p);
    }
  }

  std::vector<Vec3> ground;
  if (spec.ground.enabled) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const double slope = std::tan(spec.ground.tilt_deg * M_PI / 180.0);
    for (int i = 0; i < spec.ground.points; ++i) {
      const double x = spec.ground.center.x() + u(rng) * spec.ground.extent.x();
      const double y = spec.ground.center.y() + u(rng) * spec.ground.extent.y();
      double z = spec.ground.z + slope * x;
      if (spec.noise_sigma > 0) z += spec.noise_sigma * noise(rng);
      ground.push_back(detail::snap_point({x, y, z}));
    }
  }

  SyntheticScene scene;
  scene.object_dynamic.resize(spec.objects.size());
  for (std::size_t k = 0; k < spec.objects.size(); ++k) scene.object_dynamic[k] = spec.objects[k].moves();
  scene.sequence.frames.resize(static_cast<std::size_t>(spec.frames));
  scene.object_labels.resize(static_cast<std::size_t>(spec.frames));
  scene.flow.pairs.resize(static_cast<std::size_t>(spec.frames - 1));

  for (int t = 0; t < spec.frames; ++t) {
    PointFrame& frame = scene.sequence.frames[static_cast<std::size_t>(t)];
    frame.t = t;
    FrameLabels& labels = scene.object_labels[static_cast<std::size_t>(t)];
    std::vector<Vec3>* flow = t + 1 < spec.frames ? &scene.flow.pairs[static_cast<std::size_t>(t)] : nullptr;
    for (std::size_t k = 0; k < spec.objects.size(); ++k) {
      const ObjectSpec& o = spec.objects[k];
      if (t < o.first_frame || t > spec.last_frame_of(o)) continue;
      for (const Vec3& b : bodies[k]) {
        const Vec3 p = detail::place(o, b, t);
        frame.points.push_back(p);
        labels.push_back(static_cast<int>(k));
        if (flow) flow->push_back(detail::place(o, b, t + 1) - p);
      }
    }
    for (const Vec3& g : ground) {
      frame.points.push_back(g);
      labels.push_back(kGround);
      if (flow) flow->push_back(Vec3::Zero());
    }
  }

  if (spec.min_separation > 0) {
    for (int t = 0; t < spec.frames; ++t) {
      const PointFrame& frame = scene.sequence.frames[static_cast<std::size_t>(t)];
      const FrameLabels& labels = scene.object_labels[static_cast<std::size_t>(t)];
      const NeighborIndex index(frame.points);
      for (std::size_t i = 0; i < frame.size(); ++i) {
        if (labels[i] < 0) continue;
        for (std::size_t j : index.radius_query(frame.points[i], spec.min_separation)) {
          if (labels[j] >= 0 && labels[j] != labels[i]) {
            throw ParameterError("scene: objects " + std::to_string(labels[i]) + " and " + std::to_string(labels[j]) +
                                 " come closer than min_separation at frame " + std::to_string(t));
          }
        }
      }
    }
  }
  return scene;
}

// JSON scene description; see docs/scene_spec.md for the schema.
inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  auto vec3 = [](const nlohmann::json& a, const char* what) {
    if (!a.is_array() || a.size() != 3) throw FormatError(std::string("scene spec: ") + what + " must be [x, y, z]");
    return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  };
  auto vec2 = [](const nlohmann::json& a, const char* what) {
    if (!a.is_array() || a.size() != 2) throw FormatError(std::string("scene spec: ") + what + " must be [x, y]");
    return Vec2(a[0].get<double>(), a[1].get<double>());
  };
  try {
    SceneSpec spec;
    spec.frames = j.value("frames", spec.frames);
    spec.seed = j.value("seed", spec.seed);
    spec.noise_sigma = j.value("noise_sigma", spec.noise_sigma);
    spec.min_separation = j.value("min_separation", spec.min_separation);
    if (j.contains("ground")) {
      const auto& g = j.at("ground");
      spec.ground.enabled = g.value("enabled", true);
      if (g.contains("center")) spec.ground.center = vec2(g["center"], "ground.center");
      if (g.contains("extent")) spec.ground.extent = vec2(g["extent"], "ground.extent");
      spec.ground.points = g.value("points", spec.ground.points);
      spec.ground.z = g.value("z", spec.ground.z);
      spec.ground.tilt_deg = g.value("tilt_deg", spec.ground.tilt_deg);
    }
    for (const auto& oj : j.value("objects", nlohmann::json::array())) {
      ObjectSpec o;
      const std::string shape = oj.value("shape", std::string("box"));
      if (shape == "box") o.shape = ShapeKind::kBox;
      else if (shape == "sphere-shell") o.shape = ShapeKind::kSphereShell;
      else if (shape == "biped-blob") o.shape = ShapeKind::kBipedBlob;
      else throw FormatError("scene spec: unknown shape '" + shape + "'");
      if (oj.contains("size")) o.size = vec3(oj["size"], "size");
      o.points = oj.value("points", o.points);
      if (oj.contains("start")) o.start = vec3(oj["start"], "start");
      if (oj.contains("velocity")) o.velocity = vec3(oj["velocity"], "velocity");
      o.yaw = oj.value("yaw", o.yaw);
      o.yaw_rate = oj.value("yaw_rate", o.yaw_rate);
      o.first_frame = oj.value("first_frame", o.first_frame);
      o.last_frame = oj.value("last_frame", o.last_frame);
      if (oj.contains("split")) {
        const auto& s = oj["split"];
        o.split_frame = s.at("frame").get<int>();
        const std::string axis = s.value("axis", std::string("y"));
        if (axis == "x") o.split_axis = 0;
        else if (axis == "y") o.split_axis = 1;
        else if (axis == "z") o.split_axis = 2;
        else throw FormatError("scene spec: split axis must be x, y or z");
        o.split_gap = s.value("gap", 1.0);
      }
      spec.objects.push_back(o);
    }
    validate_scene_spec(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("scene spec: ") + e.what());
  }
}

}  // namespace sp4d
