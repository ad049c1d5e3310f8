// sp4d command line: flow, decompose, init, reg-check, synth, eval.
#include "sp4d/config.hpp"
#include "sp4d/eval.hpp"
#include "sp4d/io.hpp"
#include "sp4d/pipeline.hpp"
#include "sp4d/regcheck.hpp"
#include "sp4d/synth.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace sp4d;

namespace {

constexpr double kRegCheckTolerance = 1e-5;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", file, "flat key = value config file");
    cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
  }

  PipelineConfig load() const {
    PipelineConfig cfg;
    if (!file.empty()) load_config_file(cfg, file);
    for (const std::string& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      cfg.set(detail::trim(kv.substr(0, eq)), kv.substr(eq + 1));
    }
    return cfg;
  }
};

void report_error(int code, const char* kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", code}, {"kind", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

FlowProvider flow_from_dir(const std::string& dir) {
  if (dir.empty()) return {};
  if (!fs::is_directory(dir)) throw ConfigError("flow: directory not found: " + dir);
  return [dir](const FrameSequence& seq) { return io::load_flow(dir, seq); };
}

void write_outputs(const fs::path& out, const Decomposition& d, const PipelineConfig& cfg) {
  const nlohmann::ordered_json manifest = build_manifest(d, cfg);
  check_manifest(manifest, d.labels);
  io::write_label_dir(out, d.labels);
  if (d.flow_estimated) io::write_flow_dir(out / "flow", d.flow);
  io::write_atomic(out / "manifest.json", manifest.dump(2) + "\n");
}

void print_summary(const Decomposition& d) {
  int dynamic = 0;
  for (const auto& m : d.motion) dynamic += m.motion == MotionClass::kDynamic;
  std::printf("frames %d  superpoints %zu  instances %d  dynamic %d  static %d\n", d.sequence.frame_count(),
              d.superpoints.superpoints.size(), d.instances.instance_count, dynamic, d.instances.instance_count - dynamic);
}

int run_flow(const std::string& in, const std::string& out, const std::string& copy_from, const ConfigArgs& ca) {
  const PipelineConfig cfg = ca.load();
  FrameSequence seq = io::read_frames(in);
  require_valid(seq);
  detect_ground(seq, cfg);
  bool estimated = false;
  const FlowField flow = resolve_flow(seq, cfg, flow_from_dir(copy_from), estimated);
  io::write_flow_dir(out, flow);
  std::printf("%s flow for %d frame pairs\n", estimated ? "estimated" : "copied", flow.pair_count());
  return 0;
}

int run_decompose(const std::string& in, const std::string& flow_dir, const std::string& out, const ConfigArgs& ca) {
  const PipelineConfig cfg = ca.load();
  FlowProvider provider = flow_from_dir(flow_dir);
  if (!provider && !cfg.estimate_flow) throw ConfigError("decompose: --flow is required when flow.estimate = false");
  const Decomposition d = decompose(io::read_frames(in), cfg, provider);
  write_outputs(out, d, cfg);
  print_summary(d);
  return 0;
}

int run_init(const std::string& in, const std::string& labels_dir, const std::string& flow_dir,
             const std::string& out, const ConfigArgs& ca) {
  const PipelineConfig cfg = ca.load();
  FrameSequence seq = io::read_frames(in);
  const auto labels = io::read_label_dir(labels_dir, seq.frame_count());
  // Without --flow, reuse flow written next to the labels by decompose.
  std::string flow = flow_dir;
  if (flow.empty() && fs::is_directory(fs::path(labels_dir) / "flow")) flow = (fs::path(labels_dir) / "flow").string();
  FlowProvider provider = flow_from_dir(flow);
  if (!provider && !cfg.estimate_flow) throw ConfigError("init: --flow is required when flow.estimate = false");
  const Decomposition d = init_from_labels(std::move(seq), labels, cfg, provider);
  write_outputs(out, d, cfg);
  print_summary(d);
  return 0;
}

int run_reg_check(const std::string& flowmap, const std::string& image, const std::string& field,
                  std::optional<std::uint64_t> random_seed, int cases, const ConfigArgs& ca) {
  const PipelineConfig cfg = ca.load();
  std::vector<RegCheckReport> reports;
  if (random_seed) {
    std::mt19937_64 rng(*random_seed);
    for (int c = 0; c < cases; ++c) {
      RegCheckReport r;
      const FlowMap2D f = random_flowmap(rng, 12, 15);
      const Image2D img = random_image(rng, 12, 15, 3);
      r.loss2d = smooth2d_loss(f, img, cfg.reg2d);
      r.grad2d = check_smooth2d(f, img, cfg.reg2d);
      const VelocityField3D v = random_velocity_field(rng, 60, cfg.reg_k3d);
      r.has3d = true;
      r.loss3d = smooth3d_loss(v);
      r.grad3d = check_smooth3d(v);
      reports.push_back(r);
    }
  } else {
    if (flowmap.empty() || image.empty()) throw ConfigError("reg-check: give --flowmap and --image, or --random SEED");
    RegCheckReport r;
    const FlowMap2D f = io::read_flowmap_csv(flowmap);
    const Image2D img = io::read_image_csv(image);
    if (f.height != img.height || f.width != img.width) {
      throw FormatError("reg-check: flow map is " + std::to_string(f.height) + "x" + std::to_string(f.width) +
                        " but image is " + std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    r.loss2d = smooth2d_loss(f, img, cfg.reg2d);
    r.grad2d = check_smooth2d(f, img, cfg.reg2d);
    if (!field.empty()) {
      const VelocityField3D v = io::read_velocity_field_csv(field, cfg.reg_k3d);
      if (v.positions.size() <= v.k) {
        throw FormatError("reg-check: field has " + std::to_string(v.positions.size()) + " points, needs more than K=" +
                          std::to_string(v.k));
      }
      r.has3d = true;
      r.loss3d = smooth3d_loss(v);
      r.grad3d = check_smooth3d(v);
    }
    reports.push_back(r);
  }
  double e2 = 0, e3 = 0;
  bool any3d = false;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    e2 = std::max(e2, r.grad2d.max_relative_error);
    std::printf("case %zu  loss2d %.12g  grad2d_rel_err %.3e", i, r.loss2d, r.grad2d.max_relative_error);
    if (r.has3d) {
      any3d = true;
      e3 = std::max(e3, r.grad3d.max_relative_error);
      std::printf("  loss3d %.12g  grad3d_rel_err %.3e", r.loss3d, r.grad3d.max_relative_error);
    }
    std::printf("\n");
  }
  const double worst = std::max(e2, e3);
  std::printf("max relative error: 2d %.3e", e2);
  if (any3d) std::printf("  3d %.3e", e3);
  std::printf("  overall %.3e (tolerance %.0e)\n", worst, kRegCheckTolerance);
  if (worst > kRegCheckTolerance) {
    report_error(3, "invariant", "gradient check failed: max relative error " + std::to_string(worst));
    return 3;
  }
  return 0;
}

int run_synth(const std::string& spec_path, const std::string& out, const std::string& format) {
  if (format != "csv" && format != "ply") throw ConfigError("synth: --format must be csv or ply");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(spec_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(spec_path + ": " + e.what());
  }
  const SceneSpec spec = scene_spec_from_json(j);
  const SyntheticScene scene = generate_scene(spec);
  const fs::path dir(out);
  for (int t = 0; t < scene.sequence.frame_count(); ++t) {
    const auto& pts = scene.sequence[t].points;
    if (format == "csv") io::write_frame_csv(dir / io::frame_name("frame", t, "csv"), pts);
    else io::write_frame_ply(dir / io::frame_name("frame", t, "ply"), pts);
  }
  io::write_label_dir(dir / "gt", scene.label_tables());
  io::write_flow_dir(dir / "gt" / "flow", scene.flow);
  io::write_atomic(dir / "scene.json", j.dump(2) + "\n");
  std::size_t points = 0;
  for (const auto& f : scene.sequence.frames) points += f.size();
  std::printf("wrote %d frames (%zu points) to %s\n", scene.sequence.frame_count(), points, out.c_str());
  return 0;
}

int run_eval(const std::string& pred_dir, const std::string& gt_dir, const std::string& out,
             const std::string& pred_flow, const std::string& gt_flow) {
  const auto gt = io::read_label_dir(gt_dir);
  const auto pred = io::read_label_dir(pred_dir, static_cast<int>(gt.size()));
  const EvalReport r = evaluate(pred, gt);
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["id_consistency"] = r.id_consistency;
  j["frame_id_consistency"] = r.frame_id_consistency;
  j["gt_dynamic_objects"] = r.gt_dynamic_objects;
  j["pred_dynamic_instances"] = r.pred_dynamic_instances;
  j["instance_count_error"] = r.instance_count_error;
  j["dynamic_points"] = r.dynamic_points;
  if (!pred_flow.empty() || !gt_flow.empty()) {
    if (pred_flow.empty() || gt_flow.empty()) throw ConfigError("eval: --pred-flow and --gt-flow go together");
    const int pairs = static_cast<int>(gt.size()) - 1;
    j["flow_epe"] = flow_epe(io::read_flow_dir(pred_flow, pairs), io::read_flow_dir(gt_flow, pairs), gt);
  }
  nlohmann::ordered_json matching = nlohmann::ordered_json::object();
  for (const auto& [g, p] : r.matching) matching[std::to_string(g)] = p;
  j["matching"] = std::move(matching);
  const std::string text = j.dump(2) + "\n";
  if (!out.empty()) io::write_atomic(out, text);
  std::fputs(text.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"4D superpoint decomposition of LiDAR sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  ConfigArgs flow_cfg, dec_cfg, init_cfg, reg_cfg;
  std::string in, out, flow_dir, labels_dir, spec, format = "csv";
  std::string flowmap, image, field, pred, gt, pred_flow, gt_flow;
  std::optional<std::uint64_t> random_seed;
  int cases = 20;

  auto* flow = app.add_subcommand("flow", "estimate scene flow per frame pair (or validate and copy --flow)");
  flow->add_option("--in", in, "frame directory")->required();
  flow->add_option("--out", out, "output directory for flow_%04d.csv")->required();
  flow->add_option("--flow", flow_dir, "existing flow directory to validate and copy");
  flow_cfg.add_to(flow);

  auto* dec = app.add_subcommand("decompose", "ground, clusters, superpoints, instances and motion");
  dec->add_option("--in", in, "frame directory")->required();
  dec->add_option("--flow", flow_dir, "precomputed flow directory");
  dec->add_option("--out", out, "output directory")->required();
  dec_cfg.add_to(dec);

  auto* init = app.add_subcommand("init", "canonical frames, deformation tracks and motion from label files");
  init->add_option("--in", in, "frame directory")->required();
  init->add_option("--labels", labels_dir, "label directory")->required();
  init->add_option("--flow", flow_dir, "flow directory (default: <labels>/flow when present)");
  init->add_option("--out", out, "output directory")->required();
  init_cfg.add_to(init);

  auto* reg = app.add_subcommand("reg-check", "evaluate the smoothness regularizers and check their gradients");
  reg->add_option("--flowmap", flowmap, "CSV row,col,u,v");
  reg->add_option("--image", image, "CSV row,col,c0[,c1...]");
  reg->add_option("--field", field, "CSV x,y,z,vx,vy,vz");
  reg->add_option("--random", random_seed, "check random inputs generated from this seed instead");
  reg->add_option("--cases", cases, "number of random cases")->check(CLI::PositiveNumber);
  reg_cfg.add_to(reg);

  auto* syn = app.add_subcommand("synth", "generate a synthetic scene with ground truth");
  syn->add_option("--spec", spec, "scene JSON")->required();
  syn->add_option("--out", out, "output directory")->required();
  syn->add_option("--format", format, "frame format: csv or ply");

  auto* ev = app.add_subcommand("eval", "compare predicted labels with ground truth");
  ev->add_option("--pred", pred, "predicted label directory")->required();
  ev->add_option("--gt", gt, "ground-truth label directory")->required();
  ev->add_option("--out", out, "report JSON path");
  ev->add_option("--pred-flow", pred_flow, "predicted flow directory");
  ev->add_option("--gt-flow", gt_flow, "ground-truth flow directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(1, "usage", e.what());
    return 1;
  }

  try {
    if (*flow) return run_flow(in, out, flow_dir, flow_cfg);
    if (*dec) return run_decompose(in, flow_dir, out, dec_cfg);
    if (*init) return run_init(in, labels_dir, flow_dir, out, init_cfg);
    if (*reg) return run_reg_check(flowmap, image, field, random_seed, cases, reg_cfg);
    if (*syn) return run_synth(spec, out, format);
    if (*ev) return run_eval(pred, gt, out, pred_flow, gt_flow);
  } catch (const ConfigError& e) {
    report_error(1, "config", e.what());
    return 1;
  } catch (const ParameterError& e) {
    report_error(1, "parameter", e.what());
    return 1;
  } catch (const FormatError& e) {
    report_error(2, "format", e.what());
    return 2;
  } catch (const InvariantError& e) {
    report_error(3, "invariant", e.what());
    return 3;
  } catch (const nlohmann::json::exception& e) {
    report_error(2, "format", e.what());
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    report_error(2, "format", e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error(3, "internal", e.what());
    return 3;
  }
  return 1;
}
