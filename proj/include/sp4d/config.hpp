#pragma once

#include "sp4d/core.hpp"
#include "sp4d/dbscan.hpp"
#include "sp4d/ground.hpp"
#include "sp4d/instance.hpp"
#include "sp4d/regularizers.hpp"
#include "sp4d/sceneflow.hpp"
#include "sp4d/superpoint.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace sp4d {

// Raised for unknown keys or unparsable values; maps to the usage exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  GroundConfig ground;
  bool ground_seed_set = false;
  DbscanParams dbscan;
  FlowConfig flow;
  bool estimate_flow = true;
  MatchConfig match;
  SimilarityParams sim;
  InstanceParams instance;
  double tau_dyn_m = 0.05;
  Smooth2DParams reg2d;
  std::size_t reg_k3d = 8;

  std::uint64_t ground_seed() const { return ground_seed_set ? ground.seed : seed; }

  void set(const std::string& key, const std::string& value);
  // Effective values of every key, formatted the way set() parses them.
  std::map<std::string, std::string> values() const;
  static std::vector<std::string> keys();
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("config: " + key + ": not a number: '" + v + "'");
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("config: " + key + ": not an integer: '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + ": expected true or false, got '" + v + "'");
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

struct ConfigKey {
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

inline const std::map<std::string, ConfigKey>& config_registry() {
  using C = PipelineConfig;
  static const std::map<std::string, ConfigKey> registry = [] {
    std::map<std::string, ConfigKey> r;
    // `ref` is a generic accessor usable on both const and mutable configs.
    auto add_double = [&r](const std::string& key, auto ref) {
      r[key] = {[ref](C& c, const std::string& k, const std::string& v) { ref(c) = parse_double(k, v); },
                [ref](const C& c) { return format_double(ref(c)); }};
    };
    auto add_int = [&r](const std::string& key, auto ref, long long lo) {
      r[key] = {[ref, lo](C& c, const std::string& k, const std::string& v) {
                  const long long x = parse_int(k, v);
                  if (x < lo || x > std::numeric_limits<int>::max()) throw ConfigError("config: " + k + ": out of range");
                  ref(c) = static_cast<int>(x);
                },
                [ref](const C& c) { return std::to_string(ref(c)); }};
    };
    auto add_bool = [&r](const std::string& key, auto ref) {
      r[key] = {[ref](C& c, const std::string& k, const std::string& v) { ref(c) = parse_bool(k, v); },
                [ref](const C& c) { return std::string(ref(c) ? "true" : "false"); }};
    };

    r["seed"] = {[](C& c, const std::string& k, const std::string& v) {
                   const long long x = parse_int(k, v);
                   if (x < 0) throw ConfigError("config: seed must be non-negative");
                   c.seed = static_cast<std::uint64_t>(x);
                 },
                 [](const C& c) { return std::to_string(c.seed); }};

    r["ground.method"] = {[](C& c, const std::string& k, const std::string& v) {
                            if (v == "ransac") c.ground.method = GroundMethod::kRansac;
                            else if (v == "height") c.ground.method = GroundMethod::kHeight;
                            else throw ConfigError("config: " + k + ": expected ransac or height");
                          },
                          [](const C& c) {
                            return std::string(c.ground.method == GroundMethod::kRansac ? "ransac" : "height");
                          }};
    add_double("ground.threshold_m", [](auto& c) -> auto& { return c.ground.threshold_m; });
    add_int("ground.iterations", [](auto& c) -> auto& { return c.ground.iterations; }, 1);
    r["ground.seed"] = {[](C& c, const std::string& k, const std::string& v) {
                          const long long x = parse_int(k, v);
                          if (x < 0) throw ConfigError("config: ground.seed must be non-negative");
                          c.ground.seed = static_cast<std::uint64_t>(x);
                          c.ground_seed_set = true;
                        },
                        [](const C& c) { return std::to_string(c.ground_seed()); }};
    add_double("ground.z_max_m", [](auto& c) -> auto& { return c.ground.z_max_m; });
    add_double("ground.min_inlier_fraction", [](auto& c) -> auto& { return c.ground.min_inlier_fraction; });
    add_double("ground.max_tilt_deg", [](auto& c) -> auto& { return c.ground.max_tilt_deg; });

    add_double("dbscan.eps_m", [](auto& c) -> auto& { return c.dbscan.eps; });
    add_int("dbscan.min_pts", [](auto& c) -> auto& { return c.dbscan.min_pts; }, 1);

    add_bool("flow.estimate", [](auto& c) -> auto& { return c.estimate_flow; });
    add_int("flow.iterations", [](auto& c) -> auto& { return c.flow.iterations; }, 0);
    add_double("flow.step_size", [](auto& c) -> auto& { return c.flow.step_size; });
    add_double("flow.rigidity_weight", [](auto& c) -> auto& { return c.flow.rigidity_weight; });
    add_int("flow.rigidity_k", [](auto& c) -> auto& { return c.flow.rigidity_k; }, 1);
    add_double("flow.truncation_radius_m", [](auto& c) -> auto& { return c.flow.truncation_radius_m; });
    add_double("flow.rigid_fraction", [](auto& c) -> auto& { return c.flow.rigid_fraction; });
    add_double("flow.group_blend", [](auto& c) -> auto& { return c.flow.group_blend; });

    add_double("match.r_match_m", [](auto& c) -> auto& { return c.match.r_match_m; });
    add_int("match.n_min", [](auto& c) -> auto& { return c.match.n_min; }, 1);
    add_double("match.theta_split", [](auto& c) -> auto& { return c.match.theta_split; });

    add_double("sim.lambda", [](auto& c) -> auto& { return c.sim.lambda; });
    add_double("sim.sigma_m", [](auto& c) -> auto& { return c.sim.sigma_m; });
    add_bool("sim.normalize", [](auto& c) -> auto& { return c.instance.normalize; });

    add_double("instance.eps", [](auto& c) -> auto& { return c.instance.eps; });
    add_int("instance.min_pts", [](auto& c) -> auto& { return c.instance.min_pts; }, 1);
    add_bool("instance.merge_split_parents", [](auto& c) -> auto& { return c.instance.merge_split_parents; });

    add_double("motion.tau_dyn_m", [](auto& c) -> auto& { return c.tau_dyn_m; });

    add_double("reg.lambda_edge", [](auto& c) -> auto& { return c.reg2d.lambda_edge; });
    r["reg.flow_norm"] = {[](C& c, const std::string& k, const std::string& v) {
                            if (v == "l1") c.reg2d.norm = FlowNorm::kL1;
                            else if (v == "l2") c.reg2d.norm = FlowNorm::kL2;
                            else throw ConfigError("config: " + k + ": expected l1 or l2");
                          },
                          [](const C& c) { return std::string(c.reg2d.norm == FlowNorm::kL1 ? "l1" : "l2"); }};
    r["reg.k3d"] = {[](C& c, const std::string& k, const std::string& v) {
                      const long long x = parse_int(k, v);
                      if (x < 1) throw ConfigError("config: reg.k3d must be >= 1");
                      c.reg_k3d = static_cast<std::size_t>(x);
                    },
                    [](const C& c) { return std::to_string(c.reg_k3d); }};
    return r;
  }();
  return registry;
}

}  // namespace detail

inline void PipelineConfig::set(const std::string& key, const std::string& value) {
  const auto& reg = detail::config_registry();
  const auto it = reg.find(key);
  if (it == reg.end()) throw ConfigError("config: unknown key '" + key + "'");
  it->second.set(*this, key, detail::trim(value));
}

inline std::map<std::string, std::string> PipelineConfig::values() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, entry] : detail::config_registry()) out[key] = entry.get(*this);
  return out;
}

inline std::vector<std::string> PipelineConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [key, entry] : detail::config_registry()) out.push_back(key);
  return out;
}

// Flat "key = value" lines; '#' starts a comment.
inline void apply_config_text(PipelineConfig& cfg, const std::string& text, const std::string& source = "config") {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void load_config_file(PipelineConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

inline std::string config_text(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : cfg.values()) out += k + " = " + v + "\n";
  return out;
}

// FNV-1a over the canonical config text.
inline std::uint64_t config_hash(const PipelineConfig& cfg) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : config_text(cfg)) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace sp4d
