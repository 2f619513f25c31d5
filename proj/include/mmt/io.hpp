#pragma once

// File formats.
//
// Point clouds: "x y z" text (one point per line, '#' comments) or PLY
// (ascii / binary_little_endian / binary_big_endian), vertex x, y, z only.
//
// Surface text (keys in this order, '#' comments allowed):
//   format mmt-surface 1
//   axis_origin x y z
//   axis_direction x y z        unit body axis
//   axis_reference x y z        unit theta = 0 direction, orthogonal to the axis
//   num_slices S
//   num_angles N
//   slice_z z_0 ... z_{S-1}     strictly increasing
//   radii                       then S lines of N radii, row-major by slice
//
// Scan log: one sample per line, "t r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz
// fx fy fz mx my mz" (19 numbers). Pose-only lines (13 numbers) are accepted
// where only poses are needed.
//
// Model archive (all integers and floats little-endian):
//   char[8]  "MMTMODEL"
//   u32      version (1)
//   u32      flags (bit 0: fitted)
//   f64 x5   r0 dr dtheta z0 dz
//   u32 x3   nr ntheta nz
//   f64 x2   inner, outer boundary value
//   u32      row scaling (0 unit diagonal, 1 raw, 2 cell volume)
//   f64 x9   axis origin, direction, reference
//   u32 x2   num_slices S, num_angles N
//   f64 x S  slice z
//   f64 x SN radii
//   f64      lambda
//   u64      measurement count T
//   u32, u8[] training-log digest (length, bytes)
//   u64      V, then f64 x V potential values

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmt/error.hpp"
#include "mmt/geometry.hpp"
#include "mmt/pointshell_render.hpp"
#include "mmt/surface_extraction.hpp"
#include "mmt/voxel_field.hpp"

namespace mmt::io {

namespace fs = std::filesystem;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// "fnv1a64:<hex>" of the file bytes.
inline std::string file_digest(const fs::path& path) { return "fnv1a64:" + hex64(fnv1a64(read_text(path))); }

namespace detail {

inline std::string strip_comment(const std::string& line) {
  const auto pos = line.find('#');
  return pos == std::string::npos ? line : line.substr(0, pos);
}

inline std::vector<double> parse_numbers(const std::string& text, const std::string& where) {
  std::vector<double> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == tok.size(), ErrorKind::input, where + ": not a number: '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Point clouds

inline RawPointCloud read_xyz(std::istream& in, const std::string& name = "xyz") {
  RawPointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto vals = detail::parse_numbers(detail::strip_comment(line), name + ":" + std::to_string(lineno));
    if (vals.empty()) continue;
    require(vals.size() == 3, ErrorKind::input,
            name + ":" + std::to_string(lineno) + ": expected 3 numbers, got " + std::to_string(vals.size()));
    const Vec3 p(vals[0], vals[1], vals[2]);
    require(p.allFinite(), ErrorKind::input, name + ":" + std::to_string(lineno) + ": non-finite coordinate");
    cloud.points.push_back(p);
  }
  return cloud;
}

namespace detail {

enum class PlyFormat { ascii, binary_le, binary_be };

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

inline int ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  fail(ErrorKind::input, "ply: unknown property type '" + t + "'");
}

inline double ply_decode(const unsigned char* raw, const std::string& t, bool big_endian) {
  const int n = ply_type_size(t);
  unsigned char b[8] = {};
  for (int i = 0; i < n; ++i) b[i] = raw[big_endian ? n - 1 - i : i];  // now little-endian
  std::uint64_t u = 0;
  for (int i = n - 1; i >= 0; --i) u = (u << 8) | b[i];
  if (t == "float" || t == "float32") return std::bit_cast<float>(static_cast<std::uint32_t>(u));
  if (t == "double" || t == "float64") return std::bit_cast<double>(u);
  const bool is_signed = t == "char" || t == "int8" || t == "short" || t == "int16" || t == "int" || t == "int32";
  if (!is_signed) return static_cast<double>(u);
  const int bits = 8 * n;
  const std::int64_t s = static_cast<std::int64_t>(u << (64 - bits)) >> (64 - bits);
  return static_cast<double>(s);
}

}  // namespace detail

inline RawPointCloud read_ply(std::istream& in, const std::string& name = "ply") {
  using namespace detail;
  std::string line;
  require(std::getline(in, line) && line.rfind("ply", 0) == 0, ErrorKind::input, name + ": missing 'ply' magic");
  PlyFormat format = PlyFormat::ascii;
  std::vector<PlyElement> elements;
  bool have_format = false;
  while (true) {
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::input, name + ": truncated header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "end_header") break;
    if (kw == "comment" || kw == "obj_info" || kw.empty()) continue;
    if (kw == "format") {
      std::string f;
      ss >> f;
      if (f == "ascii") {
        format = PlyFormat::ascii;
      } else if (f == "binary_little_endian") {
        format = PlyFormat::binary_le;
      } else if (f == "binary_big_endian") {
        format = PlyFormat::binary_be;
      } else {
        fail(ErrorKind::input, name + ": unsupported format '" + f + "'");
      }
      have_format = true;
    } else if (kw == "element") {
      PlyElement e;
      ss >> e.name >> e.count;
      require(static_cast<bool>(ss), ErrorKind::input, name + ": malformed element line");
      elements.push_back(e);
    } else if (kw == "property") {
      require(!elements.empty(), ErrorKind::input, name + ": property before element");
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        std::string ct, it;
        ss >> ct >> it >> p.name;
        p.is_list = true;
        p.type = ct + " " + it;
      } else {
        p.type = t;
        ss >> p.name;
        ply_type_size(t);
      }
      elements.back().props.push_back(p);
    } else {
      fail(ErrorKind::input, name + ": unexpected header keyword '" + kw + "'");
    }
  }
  require(have_format, ErrorKind::input, name + ": missing format line");

  RawPointCloud cloud;
  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    int ix = -1, iy = -1, iz = -1;
    for (int i = 0; i < static_cast<int>(e.props.size()); ++i) {
      if (e.props[i].name == "x") ix = i;
      if (e.props[i].name == "y") iy = i;
      if (e.props[i].name == "z") iz = i;
    }
    if (is_vertex) {
      require(ix >= 0 && iy >= 0 && iz >= 0, ErrorKind::input, name + ": vertex element lacks x/y/z");
    }
    bool has_list = false;
    for (const auto& p : e.props) has_list = has_list || p.is_list;
    if (!is_vertex && has_list && format != PlyFormat::ascii) {
      fail(ErrorKind::input, name + ": binary list element '" + e.name + "' before vertices is not supported");
    }
    for (std::size_t n = 0; n < e.count; ++n) {
      std::array<double, 3> xyz{};
      if (format == PlyFormat::ascii) {
        require(static_cast<bool>(std::getline(in, line)), ErrorKind::input, name + ": truncated body");
        if (!is_vertex) continue;
        const auto vals = parse_numbers(line, name);
        require(vals.size() >= e.props.size(), ErrorKind::input, name + ": short vertex line");
        xyz = {vals[ix], vals[iy], vals[iz]};
      } else {
        for (int i = 0; i < static_cast<int>(e.props.size()); ++i) {
          const int sz = ply_type_size(e.props[i].type);
          unsigned char raw[8];
          in.read(reinterpret_cast<char*>(raw), sz);
          require(static_cast<bool>(in), ErrorKind::input, name + ": truncated binary body");
          const double v = ply_decode(raw, e.props[i].type, format == PlyFormat::binary_be);
          if (i == ix) xyz[0] = v;
          if (i == iy) xyz[1] = v;
          if (i == iz) xyz[2] = v;
        }
        if (!is_vertex) continue;
      }
      const Vec3 p(xyz[0], xyz[1], xyz[2]);
      require(p.allFinite(), ErrorKind::input, name + ": non-finite vertex " + std::to_string(n));
      cloud.points.push_back(p);
    }
    if (is_vertex) break;
  }
  return cloud;
}

inline RawPointCloud read_point_cloud(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open point cloud " + path.string());
  char magic[3] = {};
  in.read(magic, 3);
  in.clear();
  in.seekg(0);
  if (std::string_view(magic, 3) == "ply") return read_ply(in, path.string());
  return read_xyz(in, path.string());
}

inline void write_xyz(const RawPointCloud& cloud, const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << "# x y z (m)\n";
  for (const auto& p : cloud.points) {
    out << detail::format_double(p.x()) << ' ' << detail::format_double(p.y()) << ' ' << detail::format_double(p.z())
        << '\n';
  }
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

inline void write_ply_binary(const RawPointCloud& cloud, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << cloud.points.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const auto& p : cloud.points) {
    for (int a = 0; a < 3; ++a) {
      std::uint64_t u = std::bit_cast<std::uint64_t>(p(a));
      unsigned char b[8];
      for (int i = 0; i < 8; ++i, u >>= 8) b[i] = static_cast<unsigned char>(u & 0xff);
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  }
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Scan-set manifest
//
// {
//   "clouds": [ {"file": "a.xyz", "pose": [12 numbers, row-major R|t]}, ... ],
//   "axis": {"origin": [x,y,z], "direction": [x,y,z], "reference": [x,y,z]}
//     or  {"probe_pose": [12 numbers], "depth_offset": d},
//   "extraction": {"z_min":..., "z_max":..., "num_slices":..., "num_angles":...,
//                  "candidate_threshold":..., "process_noise":..., "initial_variance":...}   (optional)
// }
// Relative cloud paths resolve against the manifest's directory.

struct ScanManifest {
  std::vector<fs::path> files;
  std::vector<ScanPose> poses;
  BodyAxis axis;
  std::optional<ExtractionConfig> extraction;
};

namespace detail {

inline Vec3 json_vec3(const nlohmann::json& j, const std::string& what) {
  require(j.is_array() && j.size() == 3, ErrorKind::input, what + " must be an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    require(j[i].is_number(), ErrorKind::input, what + " must contain numbers");
    v(i) = j[i].get<double>();
  }
  return v;
}

inline RigidPose json_pose(const nlohmann::json& j, const std::string& what) {
  require(j.is_array() && j.size() == 12, ErrorKind::input, what + " must be an array of 12 numbers");
  std::vector<double> v;
  for (const auto& x : j) {
    require(x.is_number(), ErrorKind::input, what + " must contain numbers");
    v.push_back(x.get<double>());
  }
  RigidPose p = RigidPose::from_row_major(v);
  p.validate(1e-6);
  return p;
}

}  // namespace detail

inline nlohmann::json parse_json_file(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::input, path.string() + ": " + e.what());
  }
}

inline ScanManifest read_manifest(const fs::path& path) {
  const auto j = parse_json_file(path);
  ScanManifest m;
  require(j.contains("clouds") && j["clouds"].is_array(), ErrorKind::input, "manifest: missing 'clouds' array");
  const fs::path base = path.parent_path();
  for (std::size_t i = 0; i < j["clouds"].size(); ++i) {
    const auto& c = j["clouds"][i];
    const std::string where = "manifest clouds[" + std::to_string(i) + "]";
    require(c.contains("file") && c["file"].is_string(), ErrorKind::input, where + ": missing 'file'");
    fs::path f = c["file"].get<std::string>();
    if (f.is_relative()) f = base / f;
    require(fs::exists(f), ErrorKind::io, where + ": file does not exist: " + f.string());
    m.files.push_back(f);
    m.poses.push_back(c.contains("pose") ? detail::json_pose(c["pose"], where + ".pose") : RigidPose{});
  }
  require(j.contains("axis") && j["axis"].is_object(), ErrorKind::input, "manifest: missing 'axis' object");
  const auto& a = j["axis"];
  if (a.contains("probe_pose")) {
    const double depth = a.value("depth_offset", 0.0);
    m.axis = axis_from_probe_pose(detail::json_pose(a["probe_pose"], "axis.probe_pose"), depth);
  } else {
    m.axis.origin = detail::json_vec3(a.at("origin"), "axis.origin");
    m.axis.z_direction = detail::json_vec3(a.at("direction"), "axis.direction").normalized();
    if (a.contains("reference")) {
      Vec3 x = detail::json_vec3(a["reference"], "axis.reference");
      x -= x.dot(m.axis.z_direction) * m.axis.z_direction;
      require(x.norm() > 1e-9, ErrorKind::input, "axis.reference is parallel to the axis direction");
      m.axis.x_direction = x.normalized();
    } else {
      // Any perpendicular direction; pick the world axis least aligned with z.
      const Vec3& z = m.axis.z_direction;
      Vec3 seed = Vec3::UnitX();
      if (std::abs(z.y()) < std::abs(z(0)) && std::abs(z.y()) <= std::abs(z.z())) seed = Vec3::UnitY();
      if (std::abs(z.z()) < std::abs(z(0)) && std::abs(z.z()) < std::abs(z.y())) seed = Vec3::UnitZ();
      m.axis.x_direction = (seed - seed.dot(z) * z).normalized();
    }
    m.axis.validate();
  }
  if (j.contains("extraction")) {
    const auto& e = j["extraction"];
    ExtractionConfig cfg;
    cfg.z_min = e.value("z_min", cfg.z_min);
    cfg.z_max = e.value("z_max", cfg.z_max);
    cfg.num_slices = e.value("num_slices", cfg.num_slices);
    cfg.num_angles = e.value("num_angles", cfg.num_angles);
    cfg.candidate_threshold = e.value("candidate_threshold", cfg.candidate_threshold);
    cfg.process_noise = e.value("process_noise", cfg.process_noise);
    cfg.initial_variance = e.value("initial_variance", cfg.initial_variance);
    m.extraction = cfg;
  }
  return m;
}

inline RawPointCloud load_manifest_cloud(const ScanManifest& m) {
  std::vector<RawPointCloud> clouds;
  clouds.reserve(m.files.size());
  for (const auto& f : m.files) clouds.push_back(read_point_cloud(f));
  return merge_scans(clouds, m.poses);
}

// ---------------------------------------------------------------------------
// Surface text

inline void write_surface(const SurfaceModel& s, std::ostream& out) {
  using detail::format_double;
  const auto vec = [&](const Vec3& v) {
    return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
  };
  out << "format mmt-surface 1\n";
  out << "axis_origin " << vec(s.axis().origin) << "\n";
  out << "axis_direction " << vec(s.axis().z_direction) << "\n";
  out << "axis_reference " << vec(s.axis().x_direction) << "\n";
  out << "num_slices " << s.num_slices() << "\n";
  out << "num_angles " << s.num_angles() << "\n";
  out << "slice_z";
  for (double z : s.slice_z()) out << " " << format_double(z);
  out << "\nradii\n";
  for (int j = 0; j < s.num_slices(); ++j) {
    for (int k = 0; k < s.num_angles(); ++k) out << (k ? " " : "") << format_double(s.radius(j, k));
    out << "\n";
  }
}

inline void write_surface(const SurfaceModel& s, const fs::path& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  write_surface(s, out);
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

inline SurfaceModel read_surface(std::istream& in, const std::string& name = "surface") {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    line = detail::strip_comment(line);
    if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
  }
  std::size_t pos = 0;
  auto keyed = [&](const std::string& key) {
    require(pos < lines.size(), ErrorKind::input, name + ": missing '" + key + "'");
    std::istringstream ss(lines[pos]);
    std::string k;
    ss >> k;
    require(k == key, ErrorKind::input, name + ": expected '" + key + "', found '" + k + "'");
    ++pos;
    std::string rest;
    std::getline(ss, rest);
    return rest;
  };
  {
    std::istringstream ss(keyed("format"));
    std::string f;
    int version = 0;
    ss >> f >> version;
    require(f == "mmt-surface" && version == 1, ErrorKind::input, name + ": unsupported surface format");
  }
  auto vec3 = [&](const std::string& key) {
    const auto v = detail::parse_numbers(keyed(key), name + ":" + key);
    require(v.size() == 3, ErrorKind::input, name + ": " + key + " needs 3 numbers");
    return Vec3(v[0], v[1], v[2]);
  };
  BodyAxis axis;
  axis.origin = vec3("axis_origin");
  axis.z_direction = vec3("axis_direction");
  axis.x_direction = vec3("axis_reference");
  const auto count = [&](const std::string& key) {
    const auto v = detail::parse_numbers(keyed(key), name + ":" + key);
    require(v.size() == 1 && v[0] >= 1 && v[0] == std::floor(v[0]), ErrorKind::input,
            name + ": " + key + " must be a positive integer");
    return static_cast<int>(v[0]);
  };
  const int S = count("num_slices");
  const int N = count("num_angles");
  auto z = detail::parse_numbers(keyed("slice_z"), name + ":slice_z");
  require(static_cast<int>(z.size()) == S, ErrorKind::input, name + ": slice_z has wrong length");
  keyed("radii");
  std::vector<double> radii;
  radii.reserve(static_cast<std::size_t>(S) * N);
  for (int j = 0; j < S; ++j) {
    require(pos < lines.size(), ErrorKind::input, name + ": missing radii rows");
    const auto row = detail::parse_numbers(lines[pos++], name + ":radii");
    require(static_cast<int>(row.size()) == N, ErrorKind::input,
            name + ": radii row " + std::to_string(j) + " has wrong length");
    radii.insert(radii.end(), row.begin(), row.end());
  }
  require(pos == lines.size(), ErrorKind::input, name + ": trailing content after radii");
  return SurfaceModel(axis, std::move(z), N, std::move(radii));
}

inline SurfaceModel read_surface(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open surface " + path.string());
  return read_surface(in, path.string());
}

// ---------------------------------------------------------------------------
// Scan log

inline void write_scan_log(std::span<const ScanRecord> records, std::ostream& out, const std::string& header = {}) {
  out << "# t r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz fx fy fz mx my mz\n";
  if (!header.empty()) out << "# " << header << "\n";
  for (const auto& r : records) {
    out << detail::format_double(r.time);
    for (double v : r.pose.to_row_major()) out << ' ' << detail::format_double(v);
    for (int a = 0; a < 3; ++a) out << ' ' << detail::format_double(r.force(a));
    for (int a = 0; a < 3; ++a) out << ' ' << detail::format_double(r.torque(a));
    out << '\n';
  }
}

inline void write_scan_log(std::span<const ScanRecord> records, const fs::path& path, const std::string& header = {}) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  write_scan_log(records, out, header);
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

/// With allow_pose_only, 13-number lines are accepted and get a zero wrench.
inline std::vector<ScanRecord> read_scan_log(std::istream& in, const std::string& name = "scan",
                                             bool allow_pose_only = false) {
  std::vector<ScanRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto v = detail::parse_numbers(detail::strip_comment(line), where);
    if (v.empty()) continue;
    require(v.size() == 19 || (allow_pose_only && v.size() == 13), ErrorKind::input,
            where + ": expected 19 numbers (t, pose[12], force[3], torque[3]), got " + std::to_string(v.size()));
    for (double x : v) require(std::isfinite(x), ErrorKind::input, where + ": non-finite value");
    ScanRecord r;
    r.time = v[0];
    r.pose = RigidPose::from_row_major(std::span<const double>(v).subspan(1, 12));
    try {
      r.pose.validate(1e-6);
    } catch (const Error& e) {
      fail(ErrorKind::input, where + ": " + e.what());
    }
    if (v.size() == 19) {
      r.force = Vec3(v[13], v[14], v[15]);
      r.torque = Vec3(v[16], v[17], v[18]);
    }
    require(out.empty() || r.time > out.back().time, ErrorKind::input, where + ": timestamps must increase");
    out.push_back(r);
  }
  return out;
}

inline std::vector<ScanRecord> read_scan_log(const fs::path& path, bool allow_pose_only = false) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open scan log " + path.string());
  return read_scan_log(in, path.string(), allow_pose_only);
}

// ---------------------------------------------------------------------------
// Model archive

inline constexpr char kArchiveMagic[8] = {'M', 'M', 'T', 'M', 'O', 'D', 'E', 'L'};
inline constexpr std::uint32_t kArchiveVersion = 1;

namespace detail {

class LeWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class LeReader {
 public:
  LeReader(std::string_view data, std::string name) : data_(data), name_(std::move(name)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint32_t u32() {
    const auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
    return v;
  }
  std::uint64_t u64() {
    const auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[i]);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view take(std::size_t n) {
    require(pos_ + n <= data_.size(), ErrorKind::input, name_ + ": truncated model archive");
    const auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string_view data_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_model(const FieldModel& m) {
  require(m.field.size() == m.grid.size(), ErrorKind::dimension, "model: field size does not match grid");
  detail::LeWriter w;
  w.bytes(std::string_view(kArchiveMagic, 8));
  w.u32(kArchiveVersion);
  w.u32(m.fitted ? 1u : 0u);
  const auto& g = m.grid;
  for (double v : {g.r0, g.dr, g.dtheta, g.z0, g.dz}) w.f64(v);
  for (int n : {g.nr, g.ntheta, g.nz}) w.u32(static_cast<std::uint32_t>(n));
  w.f64(m.boundary.inner_value);
  w.f64(m.boundary.outer_value);
  w.u32(static_cast<std::uint32_t>(m.scaling));
  const auto& a = m.surface.axis();
  for (const Vec3* v : {&a.origin, &a.z_direction, &a.x_direction}) {
    for (int i = 0; i < 3; ++i) w.f64((*v)(i));
  }
  w.u32(static_cast<std::uint32_t>(m.surface.num_slices()));
  w.u32(static_cast<std::uint32_t>(m.surface.num_angles()));
  for (double z : m.surface.slice_z()) w.f64(z);
  for (double r : m.surface.radii()) w.f64(r);
  w.f64(m.lambda);
  w.u64(m.measurement_count);
  w.u32(static_cast<std::uint32_t>(m.training_digest.size()));
  w.bytes(m.training_digest);
  w.u64(static_cast<std::uint64_t>(m.field.size()));
  for (Index v = 0; v < m.field.size(); ++v) w.f64(m.field(v));
  return w.data();
}

inline FieldModel decode_model(std::string_view data, const std::string& name = "model") {
  detail::LeReader r(data, name);
  require(r.take(8) == std::string_view(kArchiveMagic, 8), ErrorKind::input, name + ": not a model archive");
  const auto version = r.u32();
  require(version == kArchiveVersion, ErrorKind::input,
          name + ": unsupported archive version " + std::to_string(version));
  FieldModel m;
  m.fitted = (r.u32() & 1u) != 0;
  auto& g = m.grid;
  g.r0 = r.f64();
  g.dr = r.f64();
  g.dtheta = r.f64();
  g.z0 = r.f64();
  g.dz = r.f64();
  g.nr = static_cast<int>(r.u32());
  g.ntheta = static_cast<int>(r.u32());
  g.nz = static_cast<int>(r.u32());
  g.validate();
  m.boundary.inner_value = r.f64();
  m.boundary.outer_value = r.f64();
  const auto scaling = r.u32();
  require(scaling <= 2, ErrorKind::input, name + ": unknown row scaling");
  m.scaling = static_cast<RowScaling>(scaling);
  BodyAxis axis;
  for (Vec3* v : {&axis.origin, &axis.z_direction, &axis.x_direction}) {
    for (int i = 0; i < 3; ++i) (*v)(i) = r.f64();
  }
  const auto S = r.u32();
  const auto N = r.u32();
  require(static_cast<std::uint64_t>(S) * N <= data.size() / 8, ErrorKind::input, name + ": corrupt surface size");
  std::vector<double> z(S), radii(static_cast<std::size_t>(S) * N);
  for (auto& x : z) x = r.f64();
  for (auto& x : radii) x = r.f64();
  m.surface = SurfaceModel(axis, std::move(z), static_cast<int>(N), std::move(radii));
  m.lambda = r.f64();
  m.measurement_count = r.u64();
  const auto dlen = r.u32();
  m.training_digest = std::string(r.take(dlen));
  const auto V = r.u64();
  require(V == static_cast<std::uint64_t>(g.size()), ErrorKind::input,
          name + ": value count " + std::to_string(V) + " does not match grid size " + std::to_string(g.size()));
  m.field.values.resize(static_cast<Index>(V));
  for (Index v = 0; v < static_cast<Index>(V); ++v) m.field.values(v) = r.f64();
  require(r.at_end(), ErrorKind::input, name + ": trailing bytes in model archive");
  return m;
}

inline void write_model(const FieldModel& m, const fs::path& path) {
  const std::string bytes = encode_model(m);
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path.string());
}

inline FieldModel read_model(const fs::path& path) { return decode_model(read_text(path), path.string()); }

}  // namespace mmt::io
