#pragma once

// Run configuration: one JSON document, every key optional, unknown keys
// rejected. default_config_json() prints the full set of defaults.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "mmt/error.hpp"
#include "mmt/impedance_solver.hpp"
#include "mmt/io.hpp"
#include "mmt/pointshell_render.hpp"
#include "mmt/scan_sim.hpp"
#include "mmt/voxel_field.hpp"

namespace mmt {

struct RunPaths {
  std::string manifest;  // extract-surface input
  std::string surface;   // build-field input
  std::string model;     // fit / render / evaluate / heatmap input
  std::string scan;      // fit / evaluate input
  std::string poses;     // render input
};

struct RunConfig {
  std::uint64_t seed = 7;
  RunPaths paths;
  GridResolution grid;
  BoundarySpec boundary;
  SolverOptions solver;
  double lambda = kDefaultLambda;
  ProbeGeometry probe;
  double extraction_slice_pitch = 0.005;
  int extraction_angles = 180;
  PhantomSpec phantom = default_phantom();
  TrajectoryParams trajectory;
  double force_sigma = 0.1;
  double torque_sigma = 0.005;

  static PhantomSpec default_phantom() {
    PhantomSpec p;
    StiffnessBump b;
    b.center = Vec3(0.13, 0.0, 0.1);
    b.width = 0.02;
    b.amplitude = 0.8;
    p.bump = b;
    return p;
  }

  void validate() const {
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::configuration, "lambda must be >= 0");
    require(grid.dr > 0 && grid.dtheta > 0 && grid.dz > 0 && grid.margin_voxels >= 1 && grid.inner_fraction > 0 &&
                grid.inner_fraction < 1,
            ErrorKind::configuration, "invalid grid resolution");
    require(std::isfinite(boundary.inner_value) && std::isfinite(boundary.outer_value), ErrorKind::configuration,
            "boundary values must be finite");
    require(probe.target_points >= 4, ErrorKind::configuration, "probe needs at least 4 points");
    require(force_sigma >= 0 && torque_sigma >= 0, ErrorKind::configuration, "noise sigmas must be >= 0");
    require(extraction_slice_pitch > 0 && extraction_angles >= 3, ErrorKind::configuration,
            "invalid extraction sampling");
    phantom.validate();
    for (const std::string* p : {&paths.manifest, &paths.surface, &paths.model, &paths.scan, &paths.poses}) {
      require(p->empty() || std::filesystem::exists(*p), ErrorKind::configuration,
              "configured file does not exist: " + *p);
    }
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  require(j.is_object(), ErrorKind::configuration, where + " must be an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(known.count(it.key()) != 0, ErrorKind::configuration,
            "unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
  }
}

template <class T>
void read_opt(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::configuration, "config key '" + where + "." + key + "' has the wrong type");
  }
}

inline Vec3 read_vec3(const nlohmann::json& j, const std::string& where) {
  require(j.is_array() && j.size() == 3, ErrorKind::configuration, where + " must be an array of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

inline std::string shape_name(ProbeGeometry::Shape s) {
  switch (s) {
    case ProbeGeometry::Shape::sphere: return "sphere";
    case ProbeGeometry::Shape::box: return "box";
    default: return "rounded_box";
  }
}

inline std::string method_name(SolveMethod m) {
  switch (m) {
    case SolveMethod::direct: return "direct";
    case SolveMethod::iterative: return "iterative";
    default: return "automatic";
  }
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  json bump = nullptr;
  if (c.phantom.bump) {
    const auto& b = *c.phantom.bump;
    bump = {{"center", {b.center.x(), b.center.y(), b.center.z()}}, {"width", b.width}, {"amplitude", b.amplitude}};
  }
  const auto& t = c.trajectory;
  return {
      {"seed", c.seed},
      {"paths",
       {{"manifest", c.paths.manifest},
        {"surface", c.paths.surface},
        {"model", c.paths.model},
        {"scan", c.paths.scan},
        {"poses", c.paths.poses}}},
      {"grid",
       {{"dr", c.grid.dr},
        {"angular_cells", static_cast<int>(std::lround(kTwoPi / c.grid.dtheta))},
        {"dz", c.grid.dz},
        {"margin_voxels", c.grid.margin_voxels},
        {"inner_fraction", c.grid.inner_fraction}}},
      {"boundary", {{"inner", c.boundary.inner_value}, {"outer", c.boundary.outer_value}}},
      {"solver",
       {{"method", detail::method_name(c.solver.method)},
        {"tolerance", c.solver.tolerance},
        {"max_iterations", c.solver.max_iterations},
        {"direct_limit", c.solver.direct_limit}}},
      {"lambda", c.lambda},
      {"probe",
       {{"shape", detail::shape_name(c.probe.shape)},
        {"half_extents", {c.probe.half_extents.x(), c.probe.half_extents.y(), c.probe.half_extents.z()}},
        {"radius", c.probe.radius},
        {"points", c.probe.target_points}}},
      {"extraction", {{"slice_pitch", c.extraction_slice_pitch}, {"num_angles", c.extraction_angles}}},
      {"phantom",
       {{"semi_axis_x", c.phantom.semi_axis_x},
        {"semi_axis_y", c.phantom.semi_axis_y},
        {"length", c.phantom.length},
        {"surface_angles", c.phantom.surface_angles},
        {"slice_pitch", c.phantom.slice_pitch},
        {"bump", bump}}},
      {"trajectory",
       {{"kind", to_string(t.kind)},
        {"theta", t.theta},
        {"z_start", t.z_start},
        {"sweep_length", t.sweep_length},
        {"max_depth", t.max_depth},
        {"standoff", t.standoff},
        {"duration", t.duration},
        {"rate", t.rate},
        {"tip_offset", t.tip_offset},
        {"jitter", t.jitter}}},
      {"noise", {{"force_sigma", c.force_sigma}, {"torque_sigma", c.torque_sigma}}},
  };
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  RunConfig c;
  detail::reject_unknown(j,
                         {"seed", "paths", "grid", "boundary", "solver", "lambda", "probe", "extraction", "phantom",
                          "trajectory", "noise"},
                         "");
  read_opt(j, "seed", c.seed, "");
  read_opt(j, "lambda", c.lambda, "");
  if (j.contains("paths")) {
    const auto& p = j["paths"];
    detail::reject_unknown(p, {"manifest", "surface", "model", "scan", "poses"}, "paths");
    read_opt(p, "manifest", c.paths.manifest, "paths");
    read_opt(p, "surface", c.paths.surface, "paths");
    read_opt(p, "model", c.paths.model, "paths");
    read_opt(p, "scan", c.paths.scan, "paths");
    read_opt(p, "poses", c.paths.poses, "paths");
  }
  if (j.contains("grid")) {
    const auto& g = j["grid"];
    detail::reject_unknown(g, {"dr", "angular_cells", "dz", "margin_voxels", "inner_fraction"}, "grid");
    read_opt(g, "dr", c.grid.dr, "grid");
    read_opt(g, "dz", c.grid.dz, "grid");
    read_opt(g, "margin_voxels", c.grid.margin_voxels, "grid");
    read_opt(g, "inner_fraction", c.grid.inner_fraction, "grid");
    if (g.contains("angular_cells")) {
      int n = 0;
      read_opt(g, "angular_cells", n, "grid");
      require(n >= 3, ErrorKind::configuration, "grid.angular_cells must be >= 3");
      c.grid.dtheta = kTwoPi / n;
    }
  }
  if (j.contains("boundary")) {
    const auto& b = j["boundary"];
    detail::reject_unknown(b, {"inner", "outer"}, "boundary");
    read_opt(b, "inner", c.boundary.inner_value, "boundary");
    read_opt(b, "outer", c.boundary.outer_value, "boundary");
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    detail::reject_unknown(s, {"method", "tolerance", "max_iterations", "direct_limit"}, "solver");
    std::string m = detail::method_name(c.solver.method);
    read_opt(s, "method", m, "solver");
    if (m == "automatic") {
      c.solver.method = SolveMethod::automatic;
    } else if (m == "direct") {
      c.solver.method = SolveMethod::direct;
    } else if (m == "iterative") {
      c.solver.method = SolveMethod::iterative;
    } else {
      fail(ErrorKind::configuration, "solver.method must be automatic, direct or iterative");
    }
    read_opt(s, "tolerance", c.solver.tolerance, "solver");
    read_opt(s, "max_iterations", c.solver.max_iterations, "solver");
    read_opt(s, "direct_limit", c.solver.direct_limit, "solver");
  }
  if (j.contains("probe")) {
    const auto& p = j["probe"];
    detail::reject_unknown(p, {"shape", "half_extents", "radius", "points"}, "probe");
    std::string shape = detail::shape_name(c.probe.shape);
    read_opt(p, "shape", shape, "probe");
    if (shape == "sphere") {
      c.probe.shape = ProbeGeometry::Shape::sphere;
    } else if (shape == "box") {
      c.probe.shape = ProbeGeometry::Shape::box;
    } else if (shape == "rounded_box") {
      c.probe.shape = ProbeGeometry::Shape::rounded_box;
    } else {
      fail(ErrorKind::configuration, "probe.shape must be sphere, box or rounded_box");
    }
    if (p.contains("half_extents")) c.probe.half_extents = detail::read_vec3(p["half_extents"], "probe.half_extents");
    read_opt(p, "radius", c.probe.radius, "probe");
    read_opt(p, "points", c.probe.target_points, "probe");
  }
  if (j.contains("extraction")) {
    const auto& e = j["extraction"];
    detail::reject_unknown(e, {"slice_pitch", "num_angles"}, "extraction");
    read_opt(e, "slice_pitch", c.extraction_slice_pitch, "extraction");
    read_opt(e, "num_angles", c.extraction_angles, "extraction");
  }
  if (j.contains("phantom")) {
    const auto& p = j["phantom"];
    detail::reject_unknown(p, {"semi_axis_x", "semi_axis_y", "length", "surface_angles", "slice_pitch", "bump"},
                           "phantom");
    read_opt(p, "semi_axis_x", c.phantom.semi_axis_x, "phantom");
    read_opt(p, "semi_axis_y", c.phantom.semi_axis_y, "phantom");
    read_opt(p, "length", c.phantom.length, "phantom");
    read_opt(p, "surface_angles", c.phantom.surface_angles, "phantom");
    read_opt(p, "slice_pitch", c.phantom.slice_pitch, "phantom");
    if (p.contains("bump")) {
      if (p["bump"].is_null()) {
        c.phantom.bump.reset();
      } else {
        const auto& b = p["bump"];
        detail::reject_unknown(b, {"center", "width", "amplitude"}, "phantom.bump");
        StiffnessBump bump = c.phantom.bump.value_or(StiffnessBump{});
        if (b.contains("center")) bump.center = detail::read_vec3(b["center"], "phantom.bump.center");
        read_opt(b, "width", bump.width, "phantom.bump");
        read_opt(b, "amplitude", bump.amplitude, "phantom.bump");
        c.phantom.bump = bump;
      }
    }
  }
  if (j.contains("trajectory")) {
    const auto& t = j["trajectory"];
    detail::reject_unknown(t,
                           {"kind", "theta", "z_start", "sweep_length", "max_depth", "standoff", "duration", "rate",
                            "tip_offset", "jitter"},
                           "trajectory");
    std::string kind = to_string(c.trajectory.kind);
    read_opt(t, "kind", kind, "trajectory");
    require(kind == "press" || kind == "sweep", ErrorKind::configuration, "trajectory.kind must be press or sweep");
    c.trajectory.kind = kind == "press" ? TrajectoryKind::press : TrajectoryKind::sweep;
    read_opt(t, "theta", c.trajectory.theta, "trajectory");
    read_opt(t, "z_start", c.trajectory.z_start, "trajectory");
    read_opt(t, "sweep_length", c.trajectory.sweep_length, "trajectory");
    read_opt(t, "max_depth", c.trajectory.max_depth, "trajectory");
    read_opt(t, "standoff", c.trajectory.standoff, "trajectory");
    read_opt(t, "duration", c.trajectory.duration, "trajectory");
    read_opt(t, "rate", c.trajectory.rate, "trajectory");
    read_opt(t, "tip_offset", c.trajectory.tip_offset, "trajectory");
    read_opt(t, "jitter", c.trajectory.jitter, "trajectory");
  }
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    detail::reject_unknown(n, {"force_sigma", "torque_sigma"}, "noise");
    read_opt(n, "force_sigma", c.force_sigma, "noise");
    read_opt(n, "torque_sigma", c.torque_sigma, "noise");
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) { return config_from_json(io::parse_json_file(path)); }

inline std::string default_config_json() { return to_json(RunConfig{}).dump(2); }

}  // namespace mmt
