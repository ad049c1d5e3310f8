#pragma once

#include "sp4d/core.hpp"
#include "sp4d/labels.hpp"
#include "sp4d/regularizers.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace sp4d::io {

namespace fs = std::filesystem;

inline std::string frame_name(const char* prefix, int t, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%04d.%s", prefix, t, ext);
  return buf;
}

inline std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// Writes through a sibling temp file and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string_view field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
bool parse_field(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && !s.empty();
}

// Calls row(fields, line_number) for every data line after the header;
// header_ok decides whether the first non-empty line is acceptable.
template <typename HeaderOk, typename Row>
void read_csv_with(const fs::path& path, HeaderOk&& header_ok, std::string_view expected, Row&& row) {
  const std::string text = read_file(path);
  std::size_t pos = 0;
  int lineno = 0;
  bool header_seen = false;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (pos > text.size()) break;
      continue;
    }
    const auto fields = split_commas(line);
    if (!header_seen) {
      if (!header_ok(fields)) {
        throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected header '" +
                          std::string(expected) + "'");
      }
      header_seen = true;
      continue;
    }
    row(fields, lineno);
  }
  if (!header_seen) throw FormatError(path.string() + ": missing header '" + std::string(expected) + "'");
}

template <typename Row>
void read_csv(const fs::path& path, std::string_view expected_header, Row&& row) {
  const auto exact = [&](const std::vector<std::string_view>& fields) {
    std::string joined;
    for (std::size_t i = 0; i < fields.size(); ++i) joined += (i ? "," : "") + std::string(fields[i]);
    return joined == expected_header;
  };
  read_csv_with(path, exact, expected_header, std::forward<Row>(row));
}

inline std::string where(const fs::path& path, int lineno) { return path.string() + ":" + std::to_string(lineno); }

inline std::vector<Vec3> read_vec3_csv(const fs::path& path, std::string_view header) {
  std::vector<Vec3> out;
  read_csv(path, header, [&](const std::vector<std::string_view>& f, int lineno) {
    if (f.size() != 3) {
      throw FormatError(where(path, lineno) + ": expected 3 columns, found " + std::to_string(f.size()));
    }
    Vec3 v;
    for (int a = 0; a < 3; ++a) {
      if (!parse_field(f[a], v[a])) throw FormatError(where(path, lineno) + ": not a number: '" + std::string(f[a]) + "'");
    }
    if (!is_finite(v)) {
      throw FormatError(where(path, lineno) + ": non-finite value in row " + std::to_string(out.size()));
    }
    out.push_back(v);
  });
  return out;
}

inline std::string vec3_csv(std::string_view header, const std::vector<Vec3>& rows) {
  std::string s(header);
  s += '\n';
  for (const Vec3& v : rows) {
    s += format_number(v.x());
    s += ',';
    s += format_number(v.y());
    s += ',';
    s += format_number(v.z());
    s += '\n';
  }
  return s;
}

}  // namespace detail

// ---- frames -------------------------------------------------------------

inline std::vector<Vec3> read_frame_csv(const fs::path& path) { return detail::read_vec3_csv(path, "x,y,z"); }

inline void write_frame_csv(const fs::path& path, const std::vector<Vec3>& points) {
  write_atomic(path, detail::vec3_csv("x,y,z", points));
}

// Binary little-endian PLY; vertex x/y/z are required, other scalar properties skipped.
inline std::vector<Vec3> read_frame_ply(const fs::path& path) {
  const std::string data = read_file(path);
  const std::size_t header_end = data.find("end_header");
  if (data.rfind("ply", 0) != 0 || header_end == std::string::npos) {
    throw FormatError(path.string() + ": not a PLY file");
  }
  std::size_t body = data.find('\n', header_end);
  if (body == std::string::npos) throw FormatError(path.string() + ": truncated header");
  ++body;

  std::istringstream header(data.substr(0, header_end));
  std::string line;
  long vertex_count = -1;
  bool in_vertex = false, vertex_seen = false;
  std::size_t stride = 0;
  struct Prop {
    std::string type;
    std::size_t offset;
  };
  std::map<std::string, Prop> props;
  static const std::map<std::string, std::size_t> sizes = {
      {"char", 1},  {"uchar", 1},  {"int8", 1},    {"uint8", 1},   {"short", 2},   {"ushort", 2},
      {"int16", 2}, {"uint16", 2}, {"int", 4},     {"uint", 4},    {"int32", 4},   {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  int lineno = 0;
  while (std::getline(header, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream words(line);
    std::string kw;
    words >> kw;
    if (kw == "format") {
      std::string fmt;
      words >> fmt;
      if (fmt != "binary_little_endian") {
        throw FormatError(detail::where(path, lineno) + ": only binary_little_endian PLY is supported");
      }
    } else if (kw == "element") {
      std::string name;
      long count = 0;
      words >> name >> count;
      in_vertex = name == "vertex";
      if (in_vertex) {
        if (vertex_seen) throw FormatError(detail::where(path, lineno) + ": duplicate vertex element");
        vertex_count = count;
        vertex_seen = true;
      } else if (!vertex_seen) {
        throw FormatError(detail::where(path, lineno) + ": vertex must be the first element");
      }
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      words >> type >> name;
      if (type == "list") throw FormatError(detail::where(path, lineno) + ": list properties on vertices are not supported");
      const auto it = sizes.find(type);
      if (it == sizes.end()) throw FormatError(detail::where(path, lineno) + ": unknown property type '" + type + "'");
      props[name] = {type, stride};
      stride += it->second;
    }
  }
  if (vertex_count < 0) throw FormatError(path.string() + ": no vertex element");
  for (const char* axis : {"x", "y", "z"}) {
    if (!props.count(axis)) throw FormatError(path.string() + ": vertex property '" + axis + "' missing");
  }
  if (data.size() < body + stride * static_cast<std::size_t>(vertex_count)) {
    throw FormatError(path.string() + ": truncated vertex data at offset " + std::to_string(data.size()));
  }
  static_assert(std::endian::native == std::endian::little, "PLY reader assumes a little-endian host");
  auto read_scalar = [&](std::size_t at, const std::string& type) -> double {
    const char* p = data.data() + at;
    if (type == "float" || type == "float32") {
      float f;
      std::memcpy(&f, p, 4);
      return f;
    }
    if (type == "double" || type == "float64") {
      double d;
      std::memcpy(&d, p, 8);
      return d;
    }
    throw FormatError(path.string() + ": coordinate properties must be float or double");
  };
  std::vector<Vec3> out(static_cast<std::size_t>(vertex_count));
  for (long i = 0; i < vertex_count; ++i) {
    const std::size_t row = body + stride * static_cast<std::size_t>(i);
    Vec3 v(read_scalar(row + props["x"].offset, props["x"].type), read_scalar(row + props["y"].offset, props["y"].type),
           read_scalar(row + props["z"].offset, props["z"].type));
    if (!is_finite(v)) {
      throw FormatError(path.string() + ": non-finite vertex " + std::to_string(i) + " at offset " + std::to_string(row));
    }
    out[static_cast<std::size_t>(i)] = v;
  }
  return out;
}

inline void write_frame_ply(const fs::path& path, const std::vector<Vec3>& points) {
  std::string s = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(points.size()) +
                  "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
  for (const Vec3& p : points) {
    for (int a = 0; a < 3; ++a) {
      const float f = static_cast<float>(p[a]);
      char b[4];
      std::memcpy(b, &f, 4);
      s.append(b, 4);
    }
  }
  write_atomic(path, s);
}

// Reads frame_0000.{csv,ply}, frame_0001..., stopping at the first missing index.
inline FrameSequence read_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("frame directory not found: " + dir.string());
  FrameSequence seq;
  for (int t = 0;; ++t) {
    const fs::path csv = dir / frame_name("frame", t, "csv");
    const fs::path ply = dir / frame_name("frame", t, "ply");
    PointFrame frame;
    frame.t = t;
    if (fs::exists(csv)) frame.points = read_frame_csv(csv);
    else if (fs::exists(ply)) frame.points = read_frame_ply(ply);
    else break;
    seq.frames.push_back(std::move(frame));
  }
  if (seq.frames.empty()) throw FormatError("no frame_0000.csv or frame_0000.ply in " + dir.string());
  // A later index after a gap means the numbering is not contiguous.
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int idx = -1;
    if (name.size() == 14 && name.rfind("frame_", 0) == 0 && (name.ends_with(".csv") || name.ends_with(".ply")) &&
        detail::parse_field(std::string_view(name).substr(6, 4), idx) && idx >= seq.frame_count()) {
      throw FormatError("frame numbering has a gap before " + entry.path().string());
    }
  }
  return seq;
}

// ---- flow ---------------------------------------------------------------

inline void write_flow(const fs::path& path, const std::vector<Vec3>& flow) {
  write_atomic(path, detail::vec3_csv("fx,fy,fz", flow));
}

inline void write_flow_dir(const fs::path& dir, const FlowField& flow) {
  for (int t = 0; t < flow.pair_count(); ++t) write_flow(dir / frame_name("flow", t, "csv"), flow[t]);
}

// One flow_%04d.csv per pair. Rows cover either every point of frame t or only
// its non-ground points (ground then gets zero flow).
inline FlowField load_flow(const fs::path& dir, const FrameSequence& seq) {
  FlowField flow;
  for (int t = 0; t + 1 < seq.frame_count(); ++t) {
    const fs::path path = dir / frame_name("flow", t, "csv");
    if (!fs::exists(path)) throw FormatError("flow file missing for t=" + std::to_string(t) + ": " + path.string());
    std::vector<Vec3> rows = detail::read_vec3_csv(path, "fx,fy,fz");
    const PointFrame& frame = seq[t];
    std::size_t non_ground = 0;
    for (std::size_t i = 0; i < frame.size(); ++i) non_ground += !frame.is_ground(i);
    if (rows.size() == frame.size()) {
      flow.pairs.push_back(std::move(rows));
    } else if (frame.has_ground_mask() && rows.size() == non_ground) {
      std::vector<Vec3> full(frame.size(), Vec3::Zero());
      std::size_t r = 0;
      for (std::size_t i = 0; i < frame.size(); ++i) {
        if (!frame.is_ground(i)) full[i] = rows[r++];
      }
      flow.pairs.push_back(std::move(full));
    } else {
      throw FormatError("flow for t=" + std::to_string(t) + " has " + std::to_string(rows.size()) +
                        " rows; frame has " + std::to_string(frame.size()) + " points (" +
                        std::to_string(non_ground) + " non-ground)");
    }
  }
  return flow;
}

// Raw flow files without a sequence to size them against.
inline FlowField read_flow_dir(const fs::path& dir, int pairs) {
  FlowField flow;
  for (int t = 0; t < pairs; ++t) {
    const fs::path path = dir / frame_name("flow", t, "csv");
    if (!fs::exists(path)) throw FormatError("flow file missing for t=" + std::to_string(t) + ": " + path.string());
    flow.pairs.push_back(detail::read_vec3_csv(path, "fx,fy,fz"));
  }
  return flow;
}

// ---- labels -------------------------------------------------------------

inline constexpr std::string_view kLabelHeader = "point_index,superpoint_id,instance_id,motion";

inline std::string labels_csv(const LabelTable& table) {
  std::string s(kLabelHeader);
  s += '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    s += std::to_string(i) + ',' + std::to_string(table.superpoint[i]) + ',' + std::to_string(table.instance[i]) + ',' +
         table.motion[i] + '\n';
  }
  return s;
}

inline void write_labels(const fs::path& path, const LabelTable& table) { write_atomic(path, labels_csv(table)); }

inline LabelTable read_labels(const fs::path& path) {
  LabelTable table;
  detail::read_csv(path, kLabelHeader, [&](const std::vector<std::string_view>& f, int lineno) {
    if (f.size() != 4) throw FormatError(detail::where(path, lineno) + ": expected 4 columns, found " + std::to_string(f.size()));
    long idx = 0;
    int sp = 0, inst = 0;
    if (!detail::parse_field(f[0], idx) || idx != static_cast<long>(table.size())) {
      throw FormatError(detail::where(path, lineno) + ": point_index must count up from 0");
    }
    if (!detail::parse_field(f[1], sp) || !detail::parse_field(f[2], inst)) {
      throw FormatError(detail::where(path, lineno) + ": ids must be integers");
    }
    if (f[3].size() != 1 || !is_motion_code(f[3][0])) {
      throw FormatError(detail::where(path, lineno) + ": motion must be one of S, D, G, N");
    }
    table.superpoint.push_back(sp);
    table.instance.push_back(inst);
    table.motion.push_back(f[3][0]);
  });
  return table;
}

inline void write_label_dir(const fs::path& dir, const std::vector<LabelTable>& labels) {
  for (std::size_t t = 0; t < labels.size(); ++t) {
    write_labels(dir / frame_name("labels", static_cast<int>(t), "csv"), labels[t]);
  }
}

inline std::vector<LabelTable> read_label_dir(const fs::path& dir, std::optional<int> frames = std::nullopt) {
  if (!fs::is_directory(dir)) throw FormatError("label directory not found: " + dir.string());
  std::vector<LabelTable> out;
  for (int t = 0; !frames || t < *frames; ++t) {
    const fs::path path = dir / frame_name("labels", t, "csv");
    if (!fs::exists(path)) {
      if (frames) throw FormatError("label file missing for t=" + std::to_string(t) + ": " + path.string());
      break;
    }
    out.push_back(read_labels(path));
  }
  if (out.empty()) throw FormatError("no labels_0000.csv in " + dir.string());
  return out;
}

// ---- regularizer inputs ---------------------------------------------------

namespace detail {

inline std::vector<double> parse_row(const fs::path& path, int lineno, const std::vector<std::string_view>& f,
                                     std::size_t columns) {
  if (f.size() != columns) {
    throw FormatError(where(path, lineno) + ": expected " + std::to_string(columns) + " columns, found " +
                      std::to_string(f.size()));
  }
  std::vector<double> v(columns);
  for (std::size_t a = 0; a < columns; ++a) {
    if (!parse_field(f[a], v[a]) || !std::isfinite(v[a])) {
      throw FormatError(where(path, lineno) + ": not a finite number: '" + std::string(f[a]) + "'");
    }
  }
  return v;
}

// Rows of (row, col, values...) into a dense grid; every cell exactly once.
inline std::vector<std::vector<double>> read_grid(const fs::path& path, std::size_t columns, int& height, int& width,
                                                  std::vector<std::pair<int, int>>& cells) {
  std::vector<std::vector<double>> rows;
  const auto header_ok = [&](const std::vector<std::string_view>& f) {
    if (f.size() < 3 || f[0] != "row" || f[1] != "col") return false;
    if (columns == 0) columns = f.size();
    return f.size() == columns;
  };
  read_csv_with(path, header_ok, "row,col,...", [&](const std::vector<std::string_view>& f, int lineno) {
    std::vector<double> v = parse_row(path, lineno, f, columns);
    if (v[0] < 0 || v[1] < 0 || v[0] != std::floor(v[0]) || v[1] != std::floor(v[1]) || v[0] > 1e6 || v[1] > 1e6) {
      throw FormatError(where(path, lineno) + ": row/col must be non-negative integers");
    }
    cells.emplace_back(static_cast<int>(v[0]), static_cast<int>(v[1]));
    rows.push_back(std::move(v));
  });
  height = width = 0;
  for (const auto& [r, c] : cells) {
    height = std::max(height, r + 1);
    width = std::max(width, c + 1);
  }
  if (rows.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw FormatError(path.string() + ": grid is not dense (" + std::to_string(rows.size()) + " rows for " +
                      std::to_string(height) + "x" + std::to_string(width) + ")");
  }
  std::vector<char> seen(rows.size(), 0);
  for (const auto& [r, c] : cells) {
    char& s = seen[static_cast<std::size_t>(r) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)];
    if (s) throw FormatError(path.string() + ": duplicate cell (" + std::to_string(r) + "," + std::to_string(c) + ")");
    s = 1;
  }
  return rows;
}

}  // namespace detail

// Header row,col,u,v.
inline FlowMap2D read_flowmap_csv(const fs::path& path) {
  int h = 0, w = 0;
  std::vector<std::pair<int, int>> cells;
  const auto rows = detail::read_grid(path, 4, h, w, cells);
  FlowMap2D f(h, w);
  for (std::size_t i = 0; i < rows.size(); ++i) f.at(cells[i].first, cells[i].second) = Vec2(rows[i][2], rows[i][3]);
  return f;
}

// Header row,col followed by one column per channel; intensities in [0,1].
inline Image2D read_image_csv(const fs::path& path) {
  int h = 0, w = 0;
  std::vector<std::pair<int, int>> cells;
  const auto rows = detail::read_grid(path, 0, h, w, cells);
  const int channels = rows.empty() ? 0 : static_cast<int>(rows[0].size()) - 2;
  Image2D img(h, w, channels);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int c = 0; c < channels; ++c) {
      const double v = rows[i][static_cast<std::size_t>(c) + 2];
      if (v < 0.0 || v > 1.0) {
        throw FormatError(path.string() + ": intensity outside [0,1] at cell (" + std::to_string(cells[i].first) +
                          "," + std::to_string(cells[i].second) + ")");
      }
      img.at(cells[i].first, cells[i].second, c) = v;
    }
  }
  return img;
}

// Header x,y,z,vx,vy,vz: canonical positions and per-point velocities.
inline VelocityField3D read_velocity_field_csv(const fs::path& path, std::size_t k) {
  VelocityField3D f;
  f.k = k;
  detail::read_csv(path, "x,y,z,vx,vy,vz", [&](const std::vector<std::string_view>& fields, int lineno) {
    const std::vector<double> v = detail::parse_row(path, lineno, fields, 6);
    f.positions.emplace_back(v[0], v[1], v[2]);
    f.velocities.emplace_back(v[3], v[4], v[5]);
  });
  return f;
}

}  // namespace sp4d::io
