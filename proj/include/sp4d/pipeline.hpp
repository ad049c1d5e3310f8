#pragma once

#include "sp4d/config.hpp"
#include "sp4d/core.hpp"
#include "sp4d/dbscan.hpp"
#include "sp4d/ground.hpp"
#include "sp4d/instance.hpp"
#include "sp4d/labels.hpp"
#include "sp4d/parallel.hpp"
#include "sp4d/sceneflow.hpp"
#include "sp4d/superpoint.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sp4d {

inline constexpr const char* kVersion = "0.1.0";

struct FrameReport {
  std::size_t points = 0;
  std::size_t ground_points = 0;
  bool ground_fallback = false;
  int clusters = 0;
};

struct Decomposition {
  FrameSequence sequence;  // ground masks filled in
  std::vector<FrameReport> frames;
  ClusterLabeling clusters;
  FlowField flow;
  bool flow_estimated = false;
  SuperpointSet superpoints;
  std::vector<SuperPointStats> stats;
  InstanceDecomposition instances;
  std::vector<DeformationTrack> tracks;
  std::vector<MotionResult> motion;
  std::vector<LabelTable> labels;
};

// Produces flow for a sequence whose ground masks are already set.
using FlowProvider = std::function<FlowField(const FrameSequence&)>;

inline void require_valid(const FrameSequence& seq) {
  const ValidationReport report = validate_sequence(seq);
  if (report.ok()) return;
  const Violation& v = report.violations.front();
  std::string msg = std::string("input: ") + to_string(v.kind);
  if (v.frame >= 0) msg += " at frame " + std::to_string(v.frame);
  if (v.point >= 0) msg += ", point " + std::to_string(v.point);
  if (report.violations.size() > 1) msg += " (+" + std::to_string(report.violations.size() - 1) + " more)";
  throw FormatError(msg);
}

inline std::vector<FrameReport> detect_ground(FrameSequence& seq, const PipelineConfig& cfg) {
  GroundConfig g = cfg.ground;
  g.seed = cfg.ground_seed();
  std::vector<FrameReport> reports(seq.frames.size());
  parallel_for(seq.frames.size(), [&](std::size_t t) {
    GroundResult r = remove_ground(seq.frames[t], g);
    reports[t].points = seq.frames[t].size();
    reports[t].ground_points = r.ground_count;
    reports[t].ground_fallback = r.used_fallback;
    seq.frames[t].ground_mask = std::move(r.mask);
  });
  return reports;
}

inline std::vector<std::size_t> non_ground_indices(const PointFrame& frame) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < frame.size(); ++i)
    if (!frame.is_ground(i)) idx.push_back(i);
  return idx;
}

inline std::vector<Vec3> gather(const PointFrame& frame, const std::vector<std::size_t>& idx) {
  std::vector<Vec3> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(frame.points[i]);
  return out;
}

inline ClusterLabeling cluster_frames(const FrameSequence& seq, const DbscanParams& params) {
  params.validate();
  ClusterLabeling out;
  out.frames.resize(seq.frames.size());
  parallel_for(seq.frames.size(), [&](std::size_t t) {
    const PointFrame& frame = seq[t];
    const auto idx = non_ground_indices(frame);
    const FrameLabels local = dbscan_points(gather(frame, idx), params);
    FrameLabels& full = out.frames[t];
    full.assign(frame.size(), kGround);
    for (std::size_t j = 0; j < idx.size(); ++j) full[idx[j]] = local[j];
  });
  return out;
}

// Estimated on non-ground points; ground rows carry zero flow.
inline FlowField estimate_sequence_flow(const FrameSequence& seq, const FlowConfig& cfg) {
  cfg.validate();
  FlowField flow;
  const std::size_t pairs = seq.frames.size() > 0 ? seq.frames.size() - 1 : 0;
  flow.pairs.resize(pairs);
  parallel_for(pairs, [&](std::size_t t) {
    const auto src_idx = non_ground_indices(seq[t]);
    const auto dst_idx = non_ground_indices(seq[t + 1]);
    std::vector<Vec3>& out = flow.pairs[t];
    out.assign(seq[t].size(), Vec3::Zero());
    if (src_idx.empty() || dst_idx.empty()) return;
    const std::vector<Vec3> src = gather(seq[t], src_idx);
    const std::vector<Vec3> dst = gather(seq[t + 1], dst_idx);
    const FlowEstimate est = estimate_flow(src, dst, cfg);
    for (std::size_t j = 0; j < src_idx.size(); ++j) out[src_idx[j]] = est.flow[j];
  });
  return flow;
}

inline void check_flow_shape(const FlowField& flow, const FrameSequence& seq) {
  if (flow.pair_count() + 1 != seq.frame_count()) {
    throw FormatError("flow: expected " + std::to_string(seq.frame_count() - 1) + " frame pairs, got " +
                      std::to_string(flow.pair_count()));
  }
  for (int t = 0; t < flow.pair_count(); ++t) {
    if (flow[t].size() != seq[t].size()) {
      throw FormatError("flow: pair t=" + std::to_string(t) + " has " + std::to_string(flow[t].size()) +
                        " vectors for " + std::to_string(seq[t].size()) + " points");
    }
    for (std::size_t i = 0; i < flow[t].size(); ++i) {
      if (!is_finite(flow[t][i])) {
        throw FormatError("flow: non-finite vector at t=" + std::to_string(t) + ", row " + std::to_string(i));
      }
    }
  }
}

// Per-point rows: superpoint id, instance id and motion code.
inline std::vector<LabelTable> make_label_tables(const FrameSequence& seq, const std::vector<SuperPoint4D>& superpoints,
                                                 const InstanceDecomposition& dec,
                                                 const std::vector<MotionResult>& motion) {
  std::vector<LabelTable> out(seq.frames.size());
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    out[t].resize(seq[t].size());
    for (std::size_t i = 0; i < seq[t].size(); ++i) {
      if (seq[t].is_ground(i)) out[t].set(i, kGround, kGround, kMotionGround);
      else out[t].set(i, kNoise, kNoise, kMotionNoise);
    }
  }
  for (const SuperPoint4D& sp : superpoints) {
    const int inst = dec.superpoint_to_instance[static_cast<std::size_t>(sp.id)];
    const char m = motion[static_cast<std::size_t>(inst)].motion == MotionClass::kDynamic ? kMotionDynamic : kMotionStatic;
    for (int t = sp.t_begin; t <= sp.t_end; ++t)
      for (std::size_t i : sp.at(t)) out[t].set(i, sp.id, inst, m);
  }
  return out;
}

// Canonical frames, deformation tracks, motion classes and label tables.
inline void initialize_instances(Decomposition& d, const PipelineConfig& cfg) {
  const auto& sps = d.superpoints.superpoints;
  const auto n = static_cast<std::size_t>(d.instances.instance_count);
  d.tracks.assign(n, {});
  d.motion.assign(n, {});
  parallel_for(n, [&](std::size_t k) {
    const int inst = static_cast<int>(k);
    const int canonical = select_canonical(inst, d.instances, sps);
    d.tracks[k] = build_deformation(inst, d.instances, sps, d.stats, canonical);
    d.motion[k] = classify_motion(d.tracks[k], cfg.tau_dyn_m);
  });
  d.labels = make_label_tables(d.sequence, sps, d.instances, d.motion);
}

inline FlowField resolve_flow(const FrameSequence& seq, const PipelineConfig& cfg, const FlowProvider& provided,
                              bool& estimated) {
  estimated = false;
  if (provided) {
    FlowField flow = provided(seq);
    check_flow_shape(flow, seq);
    return flow;
  }
  if (!cfg.estimate_flow) throw ConfigError("flow: no flow input given and flow.estimate = false");
  estimated = true;
  return estimate_sequence_flow(seq, cfg.flow);
}

// Full decomposition: ground, per-frame clusters, flow, superpoints,
// instances, then the canonical/deformation initialization.
inline Decomposition decompose(FrameSequence seq, const PipelineConfig& cfg, const FlowProvider& flow = {}) {
  require_valid(seq);
  cfg.match.validate();
  cfg.sim.validate();
  Decomposition d;
  d.frames = detect_ground(seq, cfg);
  d.sequence = std::move(seq);
  d.clusters = cluster_frames(d.sequence, cfg.dbscan);
  for (std::size_t t = 0; t < d.frames.size(); ++t) d.frames[t].clusters = label_count(d.clusters.frames[t]);
  d.flow = resolve_flow(d.sequence, cfg, flow, d.flow_estimated);
  d.superpoints = generate_superpoints(d.sequence, d.clusters, d.flow, cfg.match);
  check_superpoints(d.superpoints, d.sequence);
  d.stats = compute_all_stats(d.superpoints, d.sequence, d.flow);
  const SimilarityMatrix m = aggregate_similarity(d.stats, cfg.sim);
  d.instances = cluster_superpoints(m, d.superpoints.superpoints, cfg.instance);
  initialize_instances(d, cfg);
  return d;
}

inline Decomposition decompose(FrameSequence seq, const PipelineConfig& cfg, FlowField flow) {
  return decompose(std::move(seq), cfg, [flow = std::move(flow)](const FrameSequence&) { return flow; });
}

// Rebuilds superpoints and instances from label tables, then initializes.
// Superpoint and instance ids are renumbered densely in ascending order.
inline Decomposition init_from_labels(FrameSequence seq, const std::vector<LabelTable>& labels,
                                      const PipelineConfig& cfg, const FlowProvider& flow = {}) {
  require_valid(seq);
  if (labels.size() != seq.frames.size()) {
    throw FormatError("labels: " + std::to_string(labels.size()) + " label files for " +
                      std::to_string(seq.frames.size()) + " frames");
  }
  std::map<int, int> sp_ids;
  std::map<int, int> sp_instance;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t].size() != seq[t].size()) {
      throw FormatError("labels: frame " + std::to_string(t) + " has " + std::to_string(labels[t].size()) +
                        " rows for " + std::to_string(seq[t].size()) + " points");
    }
    auto& frame = seq.frames[t];
    frame.ground_mask.assign(frame.size(), 0);
    for (std::size_t i = 0; i < labels[t].size(); ++i) {
      const int sp = labels[t].superpoint[i];
      const char m = labels[t].motion[i];
      frame.ground_mask[i] = m == kMotionGround;
      if (sp < 0) continue;
      if (m == kMotionGround) {
        throw FormatError("labels: frame " + std::to_string(t) + " row " + std::to_string(i) +
                          " is ground but has a superpoint");
      }
      sp_ids.try_emplace(sp, 0);
      const auto [it, inserted] = sp_instance.try_emplace(sp, labels[t].instance[i]);
      if (!inserted && it->second != labels[t].instance[i]) {
        throw FormatError("labels: superpoint " + std::to_string(sp) + " maps to two instances");
      }
    }
  }
  int next = 0;
  for (auto& [id, dense] : sp_ids) dense = next++;

  Decomposition d;
  d.sequence = std::move(seq);
  auto& sps = d.superpoints.superpoints;
  sps.resize(sp_ids.size());
  d.superpoints.cluster_to_superpoint.resize(d.sequence.frames.size());
  std::vector<std::vector<std::vector<std::size_t>>> per_frame(sp_ids.size());
  for (auto& v : per_frame) v.resize(d.sequence.frames.size());
  for (std::size_t t = 0; t < labels.size(); ++t)
    for (std::size_t i = 0; i < labels[t].size(); ++i)
      if (labels[t].superpoint[i] >= 0) per_frame[sp_ids.at(labels[t].superpoint[i])][t].push_back(i);

  d.clusters.frames.resize(d.sequence.frames.size());
  for (std::size_t t = 0; t < labels.size(); ++t) {
    d.clusters.frames[t].assign(d.sequence[t].size(), kNoise);
    for (std::size_t i = 0; i < labels[t].size(); ++i)
      if (d.sequence[t].is_ground(i)) d.clusters.frames[t][i] = kGround;
  }
  for (std::size_t k = 0; k < sps.size(); ++k) {
    SuperPoint4D& sp = sps[k];
    sp.id = static_cast<int>(k);
    int first = -1, last = -1;
    for (std::size_t t = 0; t < per_frame[k].size(); ++t) {
      if (per_frame[k][t].empty()) continue;
      if (first < 0) first = static_cast<int>(t);
      else if (last != static_cast<int>(t) - 1) {
        throw FormatError("labels: superpoint " + std::to_string(k) + " has a gap in its lifespan before frame " +
                          std::to_string(t));
      }
      last = static_cast<int>(t);
    }
    sp.t_begin = first;
    sp.t_end = last;
    for (int t = first; t <= last; ++t) {
      auto& cl = d.superpoints.cluster_to_superpoint[static_cast<std::size_t>(t)];
      for (std::size_t i : per_frame[k][static_cast<std::size_t>(t)])
        d.clusters.frames[static_cast<std::size_t>(t)][i] = static_cast<int>(cl.size());
      cl.push_back(sp.id);
      sp.members.push_back(std::move(per_frame[k][static_cast<std::size_t>(t)]));
    }
  }
  d.frames.resize(d.sequence.frames.size());
  for (std::size_t t = 0; t < d.frames.size(); ++t) {
    d.frames[t].points = d.sequence[t].size();
    for (std::size_t i = 0; i < d.sequence[t].size(); ++i) d.frames[t].ground_points += d.sequence[t].is_ground(i);
    d.frames[t].clusters = static_cast<int>(d.superpoints.cluster_to_superpoint[t].size());
  }
  check_superpoints(d.superpoints, d.sequence);

  d.flow = resolve_flow(d.sequence, cfg, flow, d.flow_estimated);
  d.stats = compute_all_stats(d.superpoints, d.sequence, d.flow);
  std::vector<int> assignment;
  assignment.reserve(sps.size());
  for (const auto& [id, inst] : sp_instance) assignment.push_back(inst);
  d.instances = make_decomposition(assignment, sps);
  initialize_instances(d, cfg);
  return d;
}

// ---- manifest --------------------------------------------------------------

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline nlohmann::ordered_json build_manifest(const Decomposition& d, const PipelineConfig& cfg) {
  using json = nlohmann::ordered_json;
  json m;
  m["version"] = kVersion;
  m["config_hash"] = hex64(config_hash(cfg));
  json config = json::object();
  for (const auto& [k, v] : cfg.values()) config[k] = v;
  m["config"] = std::move(config);
  m["frame_count"] = d.sequence.frame_count();
  m["flow_source"] = d.flow_estimated ? "estimated" : "input";

  json frames = json::array();
  for (std::size_t t = 0; t < d.frames.size(); ++t) {
    frames.push_back({{"t", t},
                      {"points", d.frames[t].points},
                      {"ground_points", d.frames[t].ground_points},
                      {"ground_fallback", d.frames[t].ground_fallback},
                      {"clusters", d.frames[t].clusters}});
  }
  m["frames"] = std::move(frames);

  int dynamic = 0;
  json instances = json::array();
  for (int k = 0; k < d.instances.instance_count; ++k) {
    const DeformationTrack& tr = d.tracks[static_cast<std::size_t>(k)];
    const MotionResult& mr = d.motion[static_cast<std::size_t>(k)];
    dynamic += mr.motion == MotionClass::kDynamic;
    json deformation = json::array();
    for (int t = tr.t_begin; t <= tr.t_end; ++t) {
      const Vec3& x = tr.at(t).translation;
      deformation.push_back(json::array({t, x.x(), x.y(), x.z()}));
    }
    bool zero_offsets = true;
    for (const Deformation& df : tr.deformation) zero_offsets &= df.scale.isZero(0.0) && df.rotation.isZero(0.0);
    json flows = json::array();
    for (int t = tr.t_begin; t < tr.t_end; ++t) {
      const Vec3& f = tr.flow_at(t);
      flows.push_back(json::array({t, f.x(), f.y(), f.z()}));
    }
    instances.push_back({{"id", k},
                         {"lifespan", json::array({tr.t_begin, tr.t_end})},
                         {"motion", mr.motion == MotionClass::kDynamic ? "dynamic" : "static"},
                         {"mean_flow_magnitude", mr.mean_flow_magnitude},
                         {"canonical_frame", tr.canonical_frame},
                         {"canonical_point_count", tr.canonical_points.size()},
                         {"superpoints", d.instances.instance_superpoints[static_cast<std::size_t>(k)]},
                         {"scale_rotation_zero", zero_offsets},
                         {"instance_flow", std::move(flows)},
                         {"deformation", std::move(deformation)}});
  }
  m["summary"] = {{"superpoints", d.superpoints.superpoints.size()},
                  {"instances", d.instances.instance_count},
                  {"dynamic_instances", dynamic},
                  {"static_instances", d.instances.instance_count - dynamic}};
  m["instances"] = std::move(instances);

  json superpoints = json::array();
  for (const SuperPoint4D& sp : d.superpoints.superpoints) {
    json counts = json::array();
    for (const auto& mem : sp.members) counts.push_back(mem.size());
    superpoints.push_back({{"id", sp.id},
                           {"lifespan", json::array({sp.t_begin, sp.t_end})},
                           {"parent", sp.parent},
                           {"instance", d.instances.superpoint_to_instance[static_cast<std::size_t>(sp.id)]},
                           {"point_counts", std::move(counts)}});
  }
  m["superpoints"] = std::move(superpoints);
  return m;
}

// Cross-checks a manifest against per-frame label tables; throws InvariantError.
inline void check_manifest(const nlohmann::ordered_json& m, const std::vector<LabelTable>& labels) {
  auto fail = [](const std::string& what) { throw InvariantError("manifest/labels mismatch: " + what); };
  if (m.at("frame_count").get<std::size_t>() != labels.size()) fail("frame count");
  const auto& instances = m.at("instances");
  const auto& superpoints = m.at("superpoints");
  std::map<int, int> sp_to_inst;
  for (const auto& sp : superpoints) sp_to_inst[sp.at("id").get<int>()] = sp.at("instance").get<int>();

  // Per-instance and per-superpoint point counts, recomputed from the labels.
  std::map<std::pair<int, int>, std::size_t> inst_frame_count;
  std::map<std::pair<int, int>, std::size_t> sp_frame_count;
  std::map<int, char> inst_motion;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    for (std::size_t i = 0; i < labels[t].size(); ++i) {
      const int sp = labels[t].superpoint[i];
      const int inst = labels[t].instance[i];
      const char motion = labels[t].motion[i];
      if ((sp < 0) != (inst < 0)) fail("frame " + std::to_string(t) + " row " + std::to_string(i) + ": partial ids");
      if (sp < 0) {
        const char want = sp == kGround ? kMotionGround : kMotionNoise;
        if (motion != want || inst != sp) fail("frame " + std::to_string(t) + " row " + std::to_string(i) + ": sentinel");
        continue;
      }
      const auto it = sp_to_inst.find(sp);
      if (it == sp_to_inst.end() || it->second != inst) fail("superpoint " + std::to_string(sp) + " instance");
      ++inst_frame_count[{inst, static_cast<int>(t)}];
      ++sp_frame_count[{sp, static_cast<int>(t)}];
      const auto [mit, inserted] = inst_motion.try_emplace(inst, motion);
      if (!inserted && mit->second != motion) fail("instance " + std::to_string(inst) + " mixed motion codes");
    }
  }
  for (const auto& sp : superpoints) {
    const int id = sp.at("id").get<int>();
    const int b = sp.at("lifespan")[0].get<int>();
    const auto& counts = sp.at("point_counts");
    for (std::size_t j = 0; j < counts.size(); ++j) {
      const auto it = sp_frame_count.find({id, b + static_cast<int>(j)});
      if (it == sp_frame_count.end() || it->second != counts[j].get<std::size_t>()) {
        fail("superpoint " + std::to_string(id) + " count at frame " + std::to_string(b + static_cast<int>(j)));
      }
    }
  }
  std::size_t seen = 0;
  for (const auto& inst : instances) {
    const int id = inst.at("id").get<int>();
    const int b = inst.at("lifespan")[0].get<int>();
    const int e = inst.at("lifespan")[1].get<int>();
    const int canonical = inst.at("canonical_frame").get<int>();
    const char want = inst.at("motion").get<std::string>() == "dynamic" ? kMotionDynamic : kMotionStatic;
    const auto mit = inst_motion.find(id);
    if (mit == inst_motion.end() || mit->second != want) fail("instance " + std::to_string(id) + " motion");
    std::size_t best = 0;
    for (int t = b; t <= e; ++t) {
      const auto it = inst_frame_count.find({id, t});
      if (it == inst_frame_count.end()) fail("instance " + std::to_string(id) + " absent at frame " + std::to_string(t));
      best = std::max(best, it->second);
      ++seen;
    }
    const auto cit = inst_frame_count.find({id, canonical});
    if (cit == inst_frame_count.end() || cit->second != inst.at("canonical_point_count").get<std::size_t>() ||
        cit->second != best) {
      fail("instance " + std::to_string(id) + " canonical frame");
    }
    if (inst.at("deformation").size() != static_cast<std::size_t>(e - b + 1)) fail("instance deformation length");
  }
  if (seen != inst_frame_count.size()) fail("labels contain instance frames outside the manifest lifespans");
}

}  // namespace sp4d
