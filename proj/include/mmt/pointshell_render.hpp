#pragma once

// Voxmap-pointshell rendering against the cylindrical potential field.
//
// Each probe point inside the patient surface is binned into its voxel. Per
// voxel the point normals (and moment vectors) are averaged, and the wrench
// is the field-weighted sum of those averages. Because the averages do not
// depend on the field, each step also yields the 3xV observation rows N_t and
// W_t with f_t = N_t p and tau_t = W_t p.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmt/error.hpp"
#include "mmt/geometry.hpp"
#include "mmt/surface_extraction.hpp"
#include "mmt/voxel_field.hpp"

namespace mmt {

/// Probe as local-frame points with inward unit normals; the local origin is
/// the center of mass and moments are r x n.
class PointShell {
 public:
  PointShell() = default;
  PointShell(std::vector<Vec3> points, std::vector<Vec3> normals)
      : points_(std::move(points)), normals_(std::move(normals)) {
    require(points_.size() == normals_.size(), ErrorKind::dimension, "pointshell: points/normals size mismatch");
    require(points_.size() >= 4, ErrorKind::configuration, "pointshell needs at least 4 points");
    moments_.reserve(points_.size());
    for (std::size_t m = 0; m < points_.size(); ++m) {
      require(points_[m].allFinite() && normals_[m].allFinite(), ErrorKind::input, "pointshell: non-finite entry");
      require(std::abs(normals_[m].norm() - 1.0) <= 1e-9, ErrorKind::input, "pointshell normals must be unit length");
      moments_.push_back(points_[m].cross(normals_[m]));
    }
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Vec3>& points() const { return points_; }
  const std::vector<Vec3>& normals() const { return normals_; }
  const std::vector<Vec3>& moments() const { return moments_; }

 private:
  std::vector<Vec3> points_;
  std::vector<Vec3> normals_;
  std::vector<Vec3> moments_;
};

/// Parametric probe. A rounded box is the Minkowski sum of a box with
/// half extents (half_extents - radius) and a sphere of `radius`. The probe
/// tip (contact face) is the -z face in the local frame.
struct ProbeGeometry {
  enum class Shape { sphere, box, rounded_box };
  Shape shape = Shape::rounded_box;
  Vec3 half_extents{0.025, 0.01, 0.03};
  double radius = 0.005;
  int target_points = 2000;

  /// Distance from the center of mass to the contact face (local -z).
  double contact_offset() const { return shape == Shape::sphere ? radius : half_extents.z(); }
};

namespace detail {

inline int at_least_one(double x) { return std::max(1, static_cast<int>(std::lround(x))); }

inline void sample_rounded_box(const Vec3& h, double rho, int target, std::vector<Vec3>& pts, std::vector<Vec3>& nrm) {
  const Vec3 core = h.array() - rho;
  require((core.array() >= 0.0).all(), ErrorKind::configuration, "probe corner radius exceeds half extents");
  const double pi = std::numbers::pi;
  double area = 0.0;
  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    area += 2.0 * 4.0 * core(b) * core(c);     // two faces
    area += 4.0 * (pi / 2.0) * rho * 2.0 * core(a);  // four edges along a
  }
  area += 4.0 * pi * rho * rho;  // eight corner octants
  require(area > 0.0, ErrorKind::configuration, "probe geometry has zero surface area");
  const double spacing = std::sqrt(area / target);

  auto emit = [&](const Vec3& p, const Vec3& outward) {
    pts.push_back(p);
    nrm.push_back(-outward);
  };

  for (int a = 0; a < 3; ++a) {
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    if (core(b) > 0.0 && core(c) > 0.0) {
      const int nb = at_least_one(2.0 * core(b) / spacing);
      const int nc = at_least_one(2.0 * core(c) / spacing);
      for (double s : {-1.0, 1.0}) {
        for (int i = 0; i < nb; ++i) {
          for (int j = 0; j < nc; ++j) {
            Vec3 p = Vec3::Zero();
            p(a) = s * h(a);
            p(b) = -core(b) + (i + 0.5) * 2.0 * core(b) / nb;
            p(c) = -core(c) + (j + 0.5) * 2.0 * core(c) / nc;
            emit(p, s * Vec3::Unit(a));
          }
        }
      }
    }
    if (rho > 0.0 && core(a) > 0.0) {
      const int nl = at_least_one(2.0 * core(a) / spacing);
      const int narc = at_least_one(0.5 * pi * rho / spacing);
      for (double sb : {-1.0, 1.0}) {
        for (double sc : {-1.0, 1.0}) {
          for (int i = 0; i < nl; ++i) {
            for (int j = 0; j < narc; ++j) {
              const double phi = (j + 0.5) * (0.5 * pi) / narc;
              Vec3 d = Vec3::Zero();
              d(b) = sb * std::cos(phi);
              d(c) = sc * std::sin(phi);
              Vec3 base = Vec3::Zero();
              base(a) = -core(a) + (i + 0.5) * 2.0 * core(a) / nl;
              base(b) = sb * core(b);
              base(c) = sc * core(c);
              emit(base + rho * d, d);
            }
          }
        }
      }
    }
  }
  if (rho > 0.0) {
    const int n = at_least_one(std::sqrt(0.5 * pi * rho * rho) / spacing);
    for (double sx : {-1.0, 1.0}) {
      for (double sy : {-1.0, 1.0}) {
        for (double sz : {-1.0, 1.0}) {
          for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
              const double u = (i + 0.5) / n;  // cos of polar angle, equal-area
              const double beta = (j + 0.5) * (0.5 * pi) / n;
              const double sin_a = std::sqrt(1.0 - u * u);
              const Vec3 d(sx * sin_a * std::cos(beta), sy * sin_a * std::sin(beta), sz * u);
              const Vec3 base(sx * core(0), sy * core(1), sz * core(2));
              emit(base + rho * d, d);
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Samples roughly target_points surface points (exactly that many for a sphere).
inline PointShell build_probe_pointshell(const ProbeGeometry& spec) {
  require(spec.target_points >= 4, ErrorKind::configuration, "probe pointshell needs at least 4 points");
  std::vector<Vec3> pts;
  std::vector<Vec3> nrm;
  switch (spec.shape) {
    case ProbeGeometry::Shape::sphere: {
      require(spec.radius > 0.0, ErrorKind::configuration, "sphere probe radius must be > 0");
      const int M = spec.target_points;
      const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
      for (int i = 0; i < M; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / M;
        const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        const Vec3 d(rxy * std::cos(phi), rxy * std::sin(phi), z);
        pts.push_back(spec.radius * d);
        nrm.push_back(-d);
      }
      break;
    }
    case ProbeGeometry::Shape::box:
      require((spec.half_extents.array() > 0.0).all(), ErrorKind::configuration, "box half extents must be > 0");
      detail::sample_rounded_box(spec.half_extents, 0.0, spec.target_points, pts, nrm);
      break;
    case ProbeGeometry::Shape::rounded_box:
      require((spec.half_extents.array() > 0.0).all() && spec.radius >= 0.0, ErrorKind::configuration,
              "rounded box needs positive half extents and non-negative corner radius");
      detail::sample_rounded_box(spec.half_extents, spec.radius, spec.target_points, pts, nrm);
      break;
  }
  return PointShell(std::move(pts), std::move(nrm));
}

/// Averaged normal and moment of the probe points binned into one voxel.
struct VoxelContribution {
  Index voxel = 0;
  int count = 0;
  Vec3 mean_normal = Vec3::Zero();
  Vec3 mean_moment = Vec3::Zero();
};

struct RenderResult {
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
  std::vector<VoxelContribution> contributions;  // ascending voxel index
  Index voxel_count = 0;                          // V of the grid rendered against
  std::size_t voxel_queries = 0;
  std::size_t kept_points = 0;

  bool in_contact() const { return !contributions.empty(); }

  /// N_t (3 x V): column v holds the averaged normal of voxel v.
  SparseRowMatrix normal_rows() const { return rows(&VoxelContribution::mean_normal); }
  /// W_t (3 x V): column v holds the averaged moment of voxel v.
  SparseRowMatrix moment_rows() const { return rows(&VoxelContribution::mean_moment); }

 private:
  SparseRowMatrix rows(Vec3 VoxelContribution::*member) const {
    std::vector<Triplet> t;
    t.reserve(contributions.size() * 3);
    for (const auto& c : contributions) {
      for (int i = 0; i < 3; ++i) t.emplace_back(i, c.voxel, (c.*member)(i));
    }
    SparseRowMatrix m(3, voxel_count);
    m.setFromTriplets(t.begin(), t.end());
    return m;
  }
};

/// Renders one timestep. Points outside the surface (radially beyond the
/// interpolated surface radius, or beyond its axial extent) are ignored.
inline RenderResult render_step(const PointShell& shell, const ProbePose& pose, const CylindricalGrid& grid,
                                const PotentialField& field, const SurfaceModel& surface) {
  require(pose.is_finite(), ErrorKind::input, "render_step: non-finite pose");
  pose.validate();
  require(field.size() == grid.size(), ErrorKind::dimension, "render_step: field size does not match grid");

  RenderResult out;
  out.voxel_count = grid.size();
  const BodyAxis& axis = surface.axis();

  std::vector<std::pair<Index, std::size_t>> hits;
  hits.reserve(shell.size());
  for (std::size_t m = 0; m < shell.size(); ++m) {
    const Vec3 world = pose.apply(shell.points()[m]);
    const CylindricalPoint c = to_cylindrical(world, axis);
    const auto voxel = voxel_of(c, grid);
    ++out.voxel_queries;
    if (!surface.covers_z(c.z) || !(c.r < surface.radius_at(c.theta, c.z))) continue;
    if (!voxel) {
      fail(ErrorKind::coverage, "render_step: probe point " + std::to_string(m) +
                                    " is inside the surface but outside the voxel grid (r = " + std::to_string(c.r) +
                                    ", z = " + std::to_string(c.z) + ")");
    }
    hits.emplace_back(grid.flat(*voxel), m);
  }
  out.kept_points = hits.size();
  std::sort(hits.begin(), hits.end());

  for (std::size_t i = 0; i < hits.size();) {
    std::size_t j = i;
    Vec3 n = Vec3::Zero();
    Vec3 w = Vec3::Zero();
    while (j < hits.size() && hits[j].first == hits[i].first) {
      n += pose.rotation * shell.normals()[hits[j].second];
      w += pose.rotation * shell.moments()[hits[j].second];
      ++j;
    }
    const double count = static_cast<double>(j - i);
    VoxelContribution c{hits[i].first, static_cast<int>(j - i), n / count, w / count};
    const double p = field(c.voxel);
    out.force += c.mean_normal * p;
    out.torque += c.mean_moment * p;
    out.contributions.push_back(c);
    i = j;
  }
  return out;
}

/// One logged sample: timestamp, probe pose, measured wrench.
struct ScanRecord {
  double time = 0.0;
  ProbePose pose;
  Vec3 force = Vec3::Zero();
  Vec3 torque = Vec3::Zero();
};

/// Row-stacked observations across T timesteps. The stored force/torque are
/// the measured values, not the model's prediction.
class MeasurementBatch {
 public:
  struct Step {
    std::vector<VoxelContribution> contributions;
    Vec3 force = Vec3::Zero();
    Vec3 torque = Vec3::Zero();
  };

  MeasurementBatch() = default;
  explicit MeasurementBatch(Index voxel_count) : voxels_(voxel_count) {}

  Index voxels() const { return voxels_; }
  std::size_t timesteps() const { return steps_.size(); }
  Index rows() const { return 3 * static_cast<Index>(steps_.size()); }
  const std::vector<Step>& steps() const { return steps_; }

  void append(const RenderResult& result, const Vec3& measured_force, const Vec3& measured_torque) {
    require(result.voxel_count == voxels_, ErrorKind::dimension,
            "append_measurement: result has " + std::to_string(result.voxel_count) + " columns, batch has " +
                std::to_string(voxels_));
    require(measured_force.allFinite() && measured_torque.allFinite(), ErrorKind::input,
            "append_measurement: non-finite measured wrench");
    steps_.push_back({result.contributions, measured_force, measured_torque});
  }

  void append(const MeasurementBatch& other) {
    require(other.voxels_ == voxels_, ErrorKind::dimension, "batch column mismatch");
    steps_.insert(steps_.end(), other.steps_.begin(), other.steps_.end());
  }

  SparseRowMatrix N() const { return stacked(&VoxelContribution::mean_normal); }
  SparseRowMatrix W() const { return stacked(&VoxelContribution::mean_moment); }

  Eigen::VectorXd f() const {
    Eigen::VectorXd v(rows());
    for (std::size_t t = 0; t < steps_.size(); ++t) v.segment<3>(3 * static_cast<Index>(t)) = steps_[t].force;
    return v;
  }
  Eigen::VectorXd tau() const {
    Eigen::VectorXd v(rows());
    for (std::size_t t = 0; t < steps_.size(); ++t) v.segment<3>(3 * static_cast<Index>(t)) = steps_[t].torque;
    return v;
  }

 private:
  SparseRowMatrix stacked(Vec3 VoxelContribution::*member) const {
    std::vector<Triplet> trips;
    for (std::size_t t = 0; t < steps_.size(); ++t) {
      for (const auto& c : steps_[t].contributions) {
        for (int i = 0; i < 3; ++i) trips.emplace_back(3 * static_cast<Index>(t) + i, c.voxel, (c.*member)(i));
      }
    }
    SparseRowMatrix m(rows(), voxels_);
    m.setFromTriplets(trips.begin(), trips.end());
    return m;
  }

  Index voxels_ = 0;
  std::vector<Step> steps_;
};

inline MeasurementBatch append_measurement(MeasurementBatch batch, const RenderResult& result,
                                           const Vec3& measured_force, const Vec3& measured_torque) {
  batch.append(result, measured_force, measured_torque);
  return batch;
}

/// Replays a scan log: renders each pose for its observation rows and pairs
/// them with the logged wrench.
inline MeasurementBatch batch_from_scan(std::span<const ScanRecord> scan, const PointShell& shell,
                                        const CylindricalGrid& grid, const PotentialField& field,
                                        const SurfaceModel& surface) {
  MeasurementBatch batch(grid.size());
  for (const auto& rec : scan) {
    batch.append(render_step(shell, rec.pose, grid, field, surface), rec.force, rec.torque);
  }
  return batch;
}

}  // namespace mmt
