#pragma once

// Shared fixtures and independent oracles for the unit and acceptance suites.
// Oracles here deliberately avoid the library's own helpers for the quantity
// under test.

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "mmt/mmt.hpp"

namespace mmt::fixtures {

inline GridResolution coarse_resolution() { return {0.01, kTwoPi / 48, 0.01, 2, 0.2}; }

inline PhantomSpec bump_phantom_spec(double a = 0.15, double b = 0.10) {
  PhantomSpec s;
  s.semi_axis_x = a;
  s.semi_axis_y = b;
  s.length = 0.2;
  s.slice_pitch = 0.01;
  s.surface_angles = 96;
  StiffnessBump bump;
  bump.center = Vec3(a - 0.02, 0.0, 0.1);
  bump.width = 0.02;
  bump.amplitude = 0.8;
  s.bump = bump;
  return s;
}

/// Random rotation from a normalized Gaussian quaternion.
inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Annulus grid whose inner and outer voxel centers sit exactly on r_in and r_out.
inline CylindricalGrid annulus_grid(int nr, double r_in, double r_out, int ntheta, int nz, double dz) {
  CylindricalGrid g;
  g.dr = (r_out - r_in) / (nr - 1);
  g.r0 = r_in - 0.5 * g.dr;
  g.nr = nr;
  g.ntheta = ntheta;
  g.dtheta = kTwoPi / ntheta;
  g.nz = nz;
  g.dz = dz;
  g.z0 = 0.0;
  return g;
}

struct NaiveWrench {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
  std::map<long long, std::pair<Vec3, Vec3>> per_voxel;  // voxel -> (mean normal, mean moment)
};

/// Per-point reference renderer: transforms each point by hand, converts to
/// cylindrical coordinates with atan2, gates against a bilinear surface
/// lookup written out here, and averages per voxel with an ordered map.
inline NaiveWrench naive_render(const PointShell& shell, const RigidPose& pose, const CylindricalGrid& g,
                                const Eigen::VectorXd& p, const SurfaceModel& s) {
  const BodyAxis& ax = s.axis();
  const Vec3 ey = ax.z_direction.cross(ax.x_direction);
  auto surface_r = [&](double th, double z) {
    const int N = s.num_angles();
    const double step = 2.0 * std::numbers::pi / N;
    const double u = th / step;
    const int k0 = static_cast<int>(std::floor(u)) % N;
    const int k1 = (k0 + 1) % N;
    const double a = u - std::floor(u);
    const auto& zs = s.slice_z();
    int j0 = 0;
    double b = 0.0;
    if (zs.size() > 1) {
      if (z <= zs.front()) {
        j0 = 0;
        b = 0.0;
      } else if (z >= zs.back()) {
        j0 = static_cast<int>(zs.size()) - 2;
        b = 1.0;
      } else {
        while (zs[j0 + 1] <= z) ++j0;
        b = (z - zs[j0]) / (zs[j0 + 1] - zs[j0]);
      }
    }
    const int j1 = zs.size() > 1 ? j0 + 1 : j0;
    const double r0 = (1 - a) * s.radius(j0, k0) + a * s.radius(j0, k1);
    const double r1 = (1 - a) * s.radius(j1, k0) + a * s.radius(j1, k1);
    return (1 - b) * r0 + b * r1;
  };
  std::map<long long, std::vector<std::size_t>> groups;
  for (std::size_t m = 0; m < shell.size(); ++m) {
    const Vec3 w = pose.rotation * shell.points()[m] + pose.translation;
    const Vec3 d = w - ax.origin;
    const double z = d.dot(ax.z_direction);
    const double x = d.dot(ax.x_direction);
    const double y = d.dot(ey);
    const double r = std::hypot(x, y);
    double th = std::atan2(y, x);
    if (th < 0) th += 2.0 * std::numbers::pi;
    if (th >= 2.0 * std::numbers::pi) th = 0.0;
    if (z < s.slice_z().front() || z > s.slice_z().back()) continue;
    if (!(r < surface_r(th, z))) continue;
    const long long ir = static_cast<long long>(std::floor((r - g.r0) / g.dr));
    const long long iz = static_cast<long long>(std::floor((z - g.z0) / g.dz));
    long long it = static_cast<long long>(std::floor(th / g.dtheta));
    if (it >= g.ntheta) it = g.ntheta - 1;
    const long long v = ir + g.nr * (it + g.ntheta * iz);
    groups[v].push_back(m);
  }
  NaiveWrench out;
  for (const auto& [v, ms] : groups) {
    Vec3 n = Vec3::Zero(), mo = Vec3::Zero();
    for (std::size_t m : ms) {
      const Vec3 rr = pose.rotation * shell.points()[m];
      const Vec3 nn = pose.rotation * shell.normals()[m];
      n += nn;
      mo += rr.cross(nn);
    }
    n /= static_cast<double>(ms.size());
    mo /= static_cast<double>(ms.size());
    out.per_voxel[v] = {n, mo};
    out.force += n * p(v);
    out.torque += mo * p(v);
  }
  return out;
}

/// Kind of the mmt::Error thrown by f, or nullopt when it returns normally.
template <class F>
std::optional<ErrorKind> error_kind(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

/// Straight cylinder of radius R over [0, length] with the default axis.
inline SurfaceModel cylinder_surface(double R, double length, int num_angles = 36, int num_slices = 5) {
  std::vector<double> z(static_cast<std::size_t>(num_slices));
  for (int j = 0; j < num_slices; ++j) z[static_cast<std::size_t>(j)] = length * j / (num_slices - 1);
  return SurfaceModel(BodyAxis{}, z, num_angles,
                      std::vector<double>(static_cast<std::size_t>(num_slices * num_angles), R));
}

inline double rel_diff(const Vec3& a, const Vec3& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

}  // namespace mmt::fixtures
