#pragma once

// Synthetic ground truth: elliptic-cylinder phantoms with known potential
// fields, press/sweep probe trajectories sampled at 20 Hz, and noisy wrench
// measurements rendered against the true field.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mmt/error.hpp"
#include "mmt/geometry.hpp"
#include "mmt/pointshell_render.hpp"
#include "mmt/surface_extraction.hpp"
#include "mmt/voxel_field.hpp"

namespace mmt {

inline constexpr double kScanRateHz = 20.0;

/// Radius of the ellipse x^2/a^2 + y^2/b^2 = 1 along angle theta.
inline double ellipse_radius(double a, double b, double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  return a * b / std::sqrt(b * b * c * c + a * a * s * s);
}

/// Truncated Gaussian stiffness bump (zero beyond three widths).
struct StiffnessBump {
  Vec3 center = Vec3::Zero();  // body frame: x toward theta = 0, z along the axis
  double width = 0.02;
  double amplitude = 1.0;

  double operator()(const Vec3& x) const {
    const double d2 = (x - center).squaredNorm();
    if (d2 >= 9.0 * width * width) return 0.0;
    return amplitude * std::exp(-d2 / (2.0 * width * width));
  }
};

struct PhantomSpec {
  double semi_axis_x = 0.15;  // along theta = 0
  double semi_axis_y = 0.10;
  double length = 0.2;
  int surface_angles = 180;
  double slice_pitch = 0.005;
  BoundarySpec boundary;
  std::optional<StiffnessBump> bump;  // nullopt: truth is the Laplace field itself

  void validate() const {
    require(semi_axis_x > 0.0 && semi_axis_y > 0.0 && length > 0.0, ErrorKind::configuration,
            "phantom: semi-axes and length must be > 0");
    require(surface_angles >= 3 && slice_pitch > 0.0, ErrorKind::configuration, "phantom: bad surface sampling");
    if (bump) {
      require(std::isfinite(bump->amplitude) && bump->width > 0.0 && bump->center.allFinite(), ErrorKind::configuration,
              "phantom: bump needs finite amplitude and positive width");
      const Vec3& c = bump->center;
      const double q = c.x() * c.x() / (semi_axis_x * semi_axis_x) + c.y() * c.y() / (semi_axis_y * semi_axis_y);
      require(q < 1.0 && c.z() > 0.0 && c.z() < length, ErrorKind::configuration,
              "phantom: bump center lies outside the body");
    }
  }
};

struct Phantom {
  PhantomSpec spec;
  SurfaceModel surface;
  CylindricalGrid grid;
  SurfaceShell shell;
  PotentialField laplace;  // plain Laplace solution with spec.boundary
  PotentialField truth;

  FieldModel model(const PotentialField& field) const {
    FieldModel m;
    m.surface = surface;
    m.grid = grid;
    m.boundary = spec.boundary;
    m.field = field;
    return m;
  }
};

inline SurfaceModel phantom_surface(const PhantomSpec& spec) {
  spec.validate();
  const int steps = std::max(2, static_cast<int>(std::lround(spec.length / spec.slice_pitch)));
  std::vector<double> z(static_cast<std::size_t>(steps) + 1);
  for (int j = 0; j <= steps; ++j) z[static_cast<std::size_t>(j)] = spec.length * j / steps;
  std::vector<double> radii;
  radii.reserve(z.size() * static_cast<std::size_t>(spec.surface_angles));
  for (std::size_t j = 0; j < z.size(); ++j) {
    for (int k = 0; k < spec.surface_angles; ++k) {
      radii.push_back(ellipse_radius(spec.semi_axis_x, spec.semi_axis_y, kTwoPi * k / spec.surface_angles));
    }
  }
  return SurfaceModel(BodyAxis{}, std::move(z), spec.surface_angles, std::move(radii));
}

inline Phantom make_phantom(const PhantomSpec& spec, const GridResolution& res, const SolverOptions& opts = {}) {
  spec.validate();
  spec.boundary.require_opposite_signs();
  Phantom ph;
  ph.spec = spec;
  ph.surface = phantom_surface(spec);
  ph.grid = build_grid(ph.surface, res);
  ph.shell = surface_boundary_voxels(ph.surface, ph.grid);
  ph.laplace = solve_laplace(assemble_laplace(ph.grid, ph.shell, spec.boundary), opts);
  ph.truth = ph.laplace;
  if (spec.bump) {
    const auto& g = ph.grid;
    for (int iz = 0; iz < g.nz; ++iz) {
      for (int it = 0; it < g.ntheta; ++it) {
        const int surface_ir = ph.shell.at(g, it, iz);
        for (int ir = 0; ir < surface_ir; ++ir) {
          const Vec3 x = from_cylindrical({g.r_center(ir), g.theta_center(it), g.z_center(iz)}, ph.surface.axis());
          const Index v = g.flat(ir, it, iz);
          const double base = ph.laplace.values(v);
          // Interior values stay positive even for a negative bump.
          ph.truth.values(v) = std::max(base + (*spec.bump)(x), 0.5 * base);
        }
      }
    }
  }
  return ph;
}

enum class TrajectoryKind { press, sweep };

inline std::string to_string(TrajectoryKind k) { return k == TrajectoryKind::press ? "press" : "sweep"; }

struct TrajectoryParams {
  TrajectoryKind kind = TrajectoryKind::press;
  double theta = 0.0;         // contact angle about the body axis
  double z_start = 0.1;       // contact z (press) or sweep start
  double sweep_length = 0.1;  // sweep only
  double max_depth = 0.015;   // press peak depth, or constant sweep depth
  double standoff = 0.005;    // press starts and ends this far above the surface
  double duration = 4.0;      // seconds
  double rate = kScanRateHz;
  double tip_offset = 0.03;   // distance from the probe's center of mass to its contact face
  double jitter = 0.0005;     // positional noise (m, per axis)
  std::uint64_t seed = 1;
};

struct Trajectory {
  TrajectoryKind kind = TrajectoryKind::press;
  std::vector<double> times;
  std::vector<ProbePose> poses;
  std::vector<ProbePose> nominal;  // before jitter
  std::vector<double> depths;      // nominal penetration of the contact face (negative = above)

  std::size_t size() const { return poses.size(); }
};

namespace detail {

/// Outward surface normal at (theta, z), from finite differences of the radius grid.
inline Vec3 surface_normal(const SurfaceModel& s, double theta, double z) {
  const double h_theta = 1e-4;
  const double h_z = 1e-4;
  const double r = s.radius_at(theta, z);
  const double dr_dtheta = (s.radius_at(theta + h_theta, z) - s.radius_at(theta - h_theta, z)) / (2.0 * h_theta);
  const double zlo = std::max(z - h_z, s.z_front());
  const double zhi = std::min(z + h_z, s.z_back());
  const double dr_dz = zhi > zlo ? (s.radius_at(theta, zhi) - s.radius_at(theta, zlo)) / (zhi - zlo) : 0.0;
  const BodyAxis& a = s.axis();
  const Vec3 e_r = std::cos(theta) * a.x_direction + std::sin(theta) * a.y_direction();
  const Vec3 e_t = -std::sin(theta) * a.x_direction + std::cos(theta) * a.y_direction();
  return (e_r - (dr_dtheta / r) * e_t - dr_dz * a.z_direction).normalized();
}

/// Probe pose with its contact face `depth` below the surface point along -normal.
inline ProbePose contact_pose(const Vec3& surface_point, const Vec3& normal, const Vec3& body_z, double depth,
                              double tip_offset) {
  const Vec3 zl = normal;
  Vec3 xl = body_z - body_z.dot(zl) * zl;
  xl.normalize();
  const Vec3 yl = zl.cross(xl);
  ProbePose p;
  p.rotation.col(0) = xl;
  p.rotation.col(1) = yl;
  p.rotation.col(2) = zl;
  p.translation = surface_point + (tip_offset - depth) * normal;
  return p;
}

}  // namespace detail

/// Press: descent along a fixed surface normal to max_depth and back.
/// Sweep: constant depth while translating along the body axis.
inline Trajectory make_trajectory(const TrajectoryParams& params, const SurfaceModel& surface,
                                  const CylindricalGrid& grid) {
  require(params.rate > 0.0 && params.duration > 0.0, ErrorKind::configuration,
          "trajectory: rate and duration must be > 0");
  require(params.max_depth >= 0.0 && params.standoff >= 0.0 && params.jitter >= 0.0, ErrorKind::configuration,
          "trajectory: depth, standoff and jitter must be >= 0");
  const int n = static_cast<int>(std::lround(params.duration * params.rate));
  require(n >= 2, ErrorKind::configuration, "trajectory: needs at least two samples");
  const double z_end = params.kind == TrajectoryKind::sweep ? params.z_start + params.sweep_length : params.z_start;
  require(surface.covers_z(params.z_start) && surface.covers_z(z_end), ErrorKind::configuration,
          "trajectory: z range leaves the surface model");

  const BodyAxis& axis = surface.axis();
  const double theta = wrap_angle(params.theta);
  // The contact face must stay clear of the inner grid ring.
  const double floor_r = grid.r0 + 2.0 * grid.dr;
  auto check_depth = [&](double z) {
    require(surface.radius_at(theta, z) - params.max_depth > floor_r, ErrorKind::configuration,
            "trajectory: depth exceeds the grid radial span");
  };

  Trajectory traj;
  traj.kind = params.kind;
  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  Vec3 press_point = Vec3::Zero();
  Vec3 press_normal = Vec3::Zero();
  if (params.kind == TrajectoryKind::press) {
    check_depth(params.z_start);
    press_point = from_cylindrical({surface.radius_at(theta, params.z_start), theta, params.z_start}, axis);
    press_normal = detail::surface_normal(surface, theta, params.z_start);
  }

  for (int i = 0; i < n; ++i) {
    const double s = static_cast<double>(i) / (n - 1);
    ProbePose nominal;
    double depth = params.max_depth;
    if (params.kind == TrajectoryKind::press) {
      depth = -params.standoff + (params.max_depth + params.standoff) * (1.0 - std::abs(2.0 * s - 1.0));
      nominal = detail::contact_pose(press_point, press_normal, axis.z_direction, depth, params.tip_offset);
    } else {
      const double z = params.z_start + s * params.sweep_length;
      check_depth(z);
      const Vec3 point = from_cylindrical({surface.radius_at(theta, z), theta, z}, axis);
      nominal = detail::contact_pose(point, detail::surface_normal(surface, theta, z), axis.z_direction, depth,
                                     params.tip_offset);
    }
    ProbePose jittered = nominal;
    if (params.jitter > 0.0) {
      const Vec3 j(noise(rng), noise(rng), noise(rng));
      jittered.translation += params.jitter * j;
    }
    traj.times.push_back(i / params.rate);
    traj.nominal.push_back(nominal);
    traj.poses.push_back(jittered);
    traj.depths.push_back(depth);
  }
  return traj;
}

struct SyntheticScan {
  std::vector<ScanRecord> records;
  std::string provenance;
};

/// Renders every pose against the true field and adds i.i.d. Gaussian noise
/// per axis (force_sigma in N, torque_sigma in N*m).
inline SyntheticScan simulate_measurements(const PointShell& shell, const Trajectory& traj, const CylindricalGrid& grid,
                                           const PotentialField& truth, const SurfaceModel& surface,
                                           double force_sigma, double torque_sigma, std::uint64_t seed) {
  require(force_sigma >= 0.0 && torque_sigma >= 0.0, ErrorKind::configuration, "noise sigmas must be >= 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  SyntheticScan scan;
  scan.records.reserve(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const RenderResult r = render_step(shell, traj.poses[i], grid, truth, surface);
    ScanRecord rec;
    rec.time = traj.times[i];
    rec.pose = traj.poses[i];
    rec.force = r.force;
    rec.torque = r.torque;
    for (int a = 0; a < 3; ++a) rec.force(a) += force_sigma * noise(rng);
    for (int a = 0; a < 3; ++a) rec.torque(a) += torque_sigma * noise(rng);
    scan.records.push_back(rec);
  }
  std::ostringstream os;
  os << "synthetic " << to_string(traj.kind) << " samples=" << traj.size() << " force_sigma=" << force_sigma
     << " torque_sigma=" << torque_sigma << " seed=" << seed;
  scan.provenance = os.str();
  return scan;
}

/// Points on the analytic phantom surface, as a depth camera would see the
/// whole torso, with optional isotropic Gaussian noise (sigma in m).
inline RawPointCloud sample_phantom_cloud(const PhantomSpec& spec, int num_angles, int num_rings, double sigma,
                                          std::uint64_t seed) {
  spec.validate();
  require(num_angles >= 3 && num_rings >= 2 && sigma >= 0.0, ErrorKind::configuration, "bad phantom cloud sampling");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  RawPointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(num_angles) * num_rings);
  for (int j = 0; j < num_rings; ++j) {
    const double z = spec.length * j / (num_rings - 1);
    for (int k = 0; k < num_angles; ++k) {
      const double th = kTwoPi * k / num_angles;
      const double r = ellipse_radius(spec.semi_axis_x, spec.semi_axis_y, th);
      Vec3 p(r * std::cos(th), r * std::sin(th), z);
      if (sigma > 0.0) {
        for (int a = 0; a < 3; ++a) p(a) += sigma * noise(rng);
      }
      cloud.points.push_back(p);
    }
  }
  return cloud;
}

}  // namespace mmt
