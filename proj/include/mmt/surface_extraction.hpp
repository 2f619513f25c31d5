#pragma once

// Structured cylindrical surface extraction from stitched point clouds.
//
// Each axial slice is swept in angle by a scalar Kalman filter. The
// measurement at each angle blends the candidate radii near that ray,
// weighting each candidate by its closeness to the prediction and by an
// inverse-rank term that suppresses points far from the axis (e.g. the bed).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mmt/error.hpp"
#include "mmt/geometry.hpp"

namespace mmt {

struct RawPointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Union of all clouds, each mapped into the world frame by its pose.
inline RawPointCloud merge_scans(std::span<const RawPointCloud> clouds, std::span<const ScanPose> poses) {
  require(clouds.size() == poses.size(), ErrorKind::configuration,
          "merge_scans: " + std::to_string(clouds.size()) + " clouds but " +
              std::to_string(poses.size()) + " poses");
  require(!clouds.empty(), ErrorKind::empty_input, "merge_scans: no scans given");
  RawPointCloud merged;
  std::size_t total = 0;
  for (const auto& c : clouds) total += c.size();
  merged.points.reserve(total);
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    poses[i].validate();
    for (const auto& p : clouds[i].points) {
      require(p.allFinite(), ErrorKind::input, "merge_scans: non-finite point in scan " + std::to_string(i));
      merged.points.push_back(poses[i].apply(p));
    }
  }
  return merged;
}

/// Which probe body-frame directions define the patient axis when the probe
/// rests on the sternum.
struct AxisConvention {
  Vec3 contact_normal = -Vec3::UnitZ();  // into the patient
  Vec3 longitudinal = Vec3::UnitX();     // along the patient's head-foot axis
};

/// Body axis from a tracked probe pose. The origin sits depth_offset below the
/// probe along its contact normal; theta = 0 points from the axis back toward
/// the probe.
inline BodyAxis axis_from_probe_pose(const ScanPose& pose, double depth_offset,
                                     const AxisConvention& convention = {}) {
  pose.validate();
  require(std::isfinite(depth_offset), ErrorKind::input, "depth_offset must be finite");
  const Vec3 z = pose.rotation * convention.longitudinal;
  const Vec3 n = pose.rotation * convention.contact_normal;
  require(z.norm() > 1e-12, ErrorKind::degenerate_pose, "longitudinal axis maps to zero length");
  require(n.norm() > 1e-12, ErrorKind::degenerate_pose, "contact normal maps to zero length");
  BodyAxis axis;
  axis.z_direction = z.normalized();
  axis.origin = pose.translation + depth_offset * n.normalized();
  Vec3 x = -n.normalized();
  x -= x.dot(axis.z_direction) * axis.z_direction;
  require(x.norm() > 1e-9, ErrorKind::degenerate_pose, "contact normal is parallel to the longitudinal axis");
  axis.x_direction = x.normalized();
  return axis;
}

struct ExtractionConfig {
  double z_min = 0.0;
  double z_max = 0.2;
  int num_slices = 40;
  int num_angles = 180;
  double candidate_threshold = 0.002;
  double process_noise = 1e-6;      // q, m^2 per angular step
  double initial_variance = 1e-4;   // P(0|0), m^2

  void validate() const {
    require(std::isfinite(z_min) && std::isfinite(z_max) && z_min < z_max, ErrorKind::configuration,
            "extraction: z_min must be < z_max");
    require(num_slices >= 1, ErrorKind::configuration, "extraction: num_slices must be >= 1");
    require(num_angles >= 3, ErrorKind::configuration, "extraction: num_angles must be >= 3");
    require(candidate_threshold > 0.0, ErrorKind::configuration, "extraction: candidate_threshold must be > 0");
    require(process_noise >= 0.0 && initial_variance > 0.0, ErrorKind::configuration,
            "extraction: variances must be non-negative (initial > 0)");
  }

  double slice_pitch() const { return (z_max - z_min) / num_slices; }
  double angle(int k) const { return kTwoPi * k / num_angles; }
};

/// Structured patient surface: radii[j * num_angles + k] is the radius of
/// slice j along ray k (theta_k = 2*pi*k/num_angles).
class SurfaceModel {
 public:
  SurfaceModel() = default;
  SurfaceModel(BodyAxis axis, std::vector<double> slice_z, int num_angles, std::vector<double> radii)
      : axis_(axis), slice_z_(std::move(slice_z)), num_angles_(num_angles), radii_(std::move(radii)) {
    validate();
  }

  const BodyAxis& axis() const { return axis_; }
  const std::vector<double>& slice_z() const { return slice_z_; }
  const std::vector<double>& radii() const { return radii_; }
  int num_slices() const { return static_cast<int>(slice_z_.size()); }
  int num_angles() const { return num_angles_; }
  double angle(int k) const { return kTwoPi * k / num_angles_; }
  double radius(int slice, int k) const { return radii_[static_cast<std::size_t>(slice) * num_angles_ + k]; }

  double z_front() const { return slice_z_.front(); }
  double z_back() const { return slice_z_.back(); }
  bool covers_z(double z) const { return z >= z_front() && z <= z_back(); }

  double min_radius() const { return *std::min_element(radii_.begin(), radii_.end()); }
  double max_radius() const { return *std::max_element(radii_.begin(), radii_.end()); }

  /// Bilinear in (theta, z); periodic in theta, clamped in z.
  double radius_at(double theta, double z) const {
    const double u = wrap_angle(theta) / (kTwoPi / num_angles_);
    int k0 = static_cast<int>(std::floor(u));
    const double a = u - k0;
    k0 %= num_angles_;
    const int k1 = (k0 + 1) % num_angles_;

    int j0 = 0;
    double b = 0.0;
    if (slice_z_.size() > 1) {
      if (z <= slice_z_.front()) {
        j0 = 0;
      } else if (z >= slice_z_.back()) {
        j0 = num_slices() - 2;
        b = 1.0;
      } else {
        auto it = std::upper_bound(slice_z_.begin(), slice_z_.end(), z);
        j0 = static_cast<int>(it - slice_z_.begin()) - 1;
        b = (z - slice_z_[j0]) / (slice_z_[j0 + 1] - slice_z_[j0]);
      }
    }
    const int j1 = slice_z_.size() > 1 ? j0 + 1 : 0;
    const double lo = (1.0 - a) * radius(j0, k0) + a * radius(j0, k1);
    const double hi = (1.0 - a) * radius(j1, k0) + a * radius(j1, k1);
    return (1.0 - b) * lo + b * hi;
  }

  void validate() const {
    axis_.validate();
    require(!slice_z_.empty(), ErrorKind::input, "surface model has no slices");
    require(num_angles_ >= 3, ErrorKind::input, "surface model needs at least 3 angles");
    require(radii_.size() == slice_z_.size() * static_cast<std::size_t>(num_angles_), ErrorKind::dimension,
            "surface model radii grid has wrong size");
    require(std::is_sorted(slice_z_.begin(), slice_z_.end()) &&
                std::adjacent_find(slice_z_.begin(), slice_z_.end()) == slice_z_.end(),
            ErrorKind::input, "surface slice z values must be strictly increasing");
    for (double r : radii_) {
      require(std::isfinite(r) && r > 0.0, ErrorKind::input, "surface radii must be finite and > 0");
    }
  }

 private:
  BodyAxis axis_;
  std::vector<double> slice_z_;
  int num_angles_ = 0;
  std::vector<double> radii_;
};

struct CandidateSet {
  std::vector<double> radii;
  double r_min = 0.0;
  double r_max = 0.0;
  double variance = 0.0;  // S(k)

  bool empty() const { return radii.empty(); }

  static CandidateSet from_radii(std::vector<double> radii) {
    CandidateSet c;
    c.radii = std::move(radii);
    if (c.radii.empty()) return c;
    auto [lo, hi] = std::minmax_element(c.radii.begin(), c.radii.end());
    c.r_min = *lo;
    c.r_max = *hi;
    double mean = 0.0;
    for (double r : c.radii) mean += r;
    mean /= static_cast<double>(c.radii.size());
    double var = 0.0;
    for (double r : c.radii) var += (r - mean) * (r - mean);
    c.variance = var / static_cast<double>(c.radii.size());
    return c;
  }
};

/// Distance from a transverse-plane point to the ray leaving the axis at angle theta_k.
inline double distance_to_ray(const CylindricalPoint& p, double theta_k) {
  const double delta = p.theta - theta_k;
  const double along = p.r * std::cos(delta);
  if (along < 0.0) return p.r;
  return std::abs(p.r * std::sin(delta));
}

inline CandidateSet collect_candidates(std::span<const CylindricalPoint> slice_points, int k,
                                       const ExtractionConfig& config) {
  const double theta_k = config.angle(k);
  std::vector<double> radii;
  for (const auto& p : slice_points) {
    if (distance_to_ray(p, theta_k) <= config.candidate_threshold) radii.push_back(p.r);
  }
  return CandidateSet::from_radii(std::move(radii));
}

/// Inverse-rank weight (1 - (r - r_min) / (r_max - r_min))^2.
inline double rank_weight(double r, double r_min, double r_max) {
  require(r >= r_min && r <= r_max, ErrorKind::domain, "rank_weight: radius outside [r_min, r_max]");
  if (r_max == r_min) return 1.0;
  const double u = 1.0 - (r - r_min) / (r_max - r_min);
  return u * u;
}

inline constexpr double kVarianceFloor = 1e-8;

struct WeightedMeasurement {
  double y = 0.0;
  std::vector<double> weights;  // beta_i, sums to 1
  bool used_fallback = false;   // every score underflowed; uniform weights used
};

/// Blends candidate radii given explicit rank weights. Each candidate is
/// scored by a Gaussian of its own distance to the prediction.
inline WeightedMeasurement blend_candidates(std::span<const double> radii, std::span<const double> rank_weights,
                                            double prediction, double variance) {
  require(!radii.empty(), ErrorKind::empty_input, "blend_candidates: no candidates");
  require(radii.size() == rank_weights.size(), ErrorKind::dimension, "blend_candidates: size mismatch");
  const double s = std::max(variance, kVarianceFloor);
  const double norm = 1.0 / std::sqrt(kTwoPi * s);
  WeightedMeasurement out;
  out.weights.resize(radii.size());
  double total = 0.0;
  for (std::size_t i = 0; i < radii.size(); ++i) {
    const double e = radii[i] - prediction;
    out.weights[i] = norm * std::exp(-e * e / (2.0 * s)) * rank_weights[i];
    total += out.weights[i];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    out.used_fallback = true;
    std::fill(out.weights.begin(), out.weights.end(), 1.0 / static_cast<double>(radii.size()));
  } else {
    for (double& w : out.weights) w /= total;
  }
  for (std::size_t i = 0; i < radii.size(); ++i) out.y += radii[i] * out.weights[i];
  return out;
}

inline WeightedMeasurement weighted_measurement(const CandidateSet& candidates, double prediction) {
  require(!candidates.empty(), ErrorKind::empty_input, "weighted_measurement: empty candidate set");
  std::vector<double> d(candidates.radii.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    d[i] = rank_weight(candidates.radii[i], candidates.r_min, candidates.r_max);
  }
  auto m = blend_candidates(candidates.radii, d, prediction, candidates.variance);
  // Rounding can push the convex blend a hair outside the candidate range.
  m.y = std::clamp(m.y, candidates.r_min, candidates.r_max);
  return m;
}

inline double kalman_update(double prediction, double gain, double measurement) {
  require(gain >= 0.0 && gain <= 1.0, ErrorKind::domain, "kalman_update: gain outside [0, 1]");
  return prediction + gain * (measurement - prediction);
}

struct ExtractionDiagnostics {
  std::vector<int> candidate_counts;  // num_slices x num_angles, row-major
  int fallback_count = 0;
  int empty_cells = 0;
};

struct ExtractionResult {
  SurfaceModel surface;
  ExtractionDiagnostics diagnostics;
};

namespace detail {

inline double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
  return m;
}

}  // namespace detail

inline ExtractionResult extract_surface(const RawPointCloud& cloud, const BodyAxis& axis,
                                        const ExtractionConfig& config) {
  require(!cloud.empty(), ErrorKind::empty_input, "extract_surface: empty point cloud");
  config.validate();
  axis.validate();

  const int S = config.num_slices;
  const int N = config.num_angles;
  const double pitch = config.slice_pitch();

  std::vector<std::vector<CylindricalPoint>> slices(static_cast<std::size_t>(S));
  for (const auto& p : cloud.points) {
    require(p.allFinite(), ErrorKind::input, "extract_surface: non-finite point");
    const CylindricalPoint c = to_cylindrical(p, axis);
    if (c.z < config.z_min || c.z > config.z_max) continue;
    int j = static_cast<int>(std::floor((c.z - config.z_min) / pitch));
    j = std::clamp(j, 0, S - 1);
    slices[static_cast<std::size_t>(j)].push_back(c);
  }

  ExtractionDiagnostics diag;
  diag.candidate_counts.assign(static_cast<std::size_t>(S) * N, 0);
  std::vector<double> slice_z(static_cast<std::size_t>(S));
  std::vector<double> radii(static_cast<std::size_t>(S) * N, 0.0);

  for (int j = 0; j < S; ++j) {
    slice_z[j] = config.z_min + (j + 0.5) * pitch;
    std::vector<CandidateSet> cells(static_cast<std::size_t>(N));
    std::vector<double> pooled;
    for (int k = 0; k < N; ++k) {
      cells[k] = collect_candidates(slices[j], k, config);
      diag.candidate_counts[static_cast<std::size_t>(j) * N + k] = static_cast<int>(cells[k].radii.size());
      pooled.insert(pooled.end(), cells[k].radii.begin(), cells[k].radii.end());
    }
    require(!pooled.empty(), ErrorKind::extraction,
            "extract_surface: slice " + std::to_string(j) + " (z = " + std::to_string(slice_z[j]) +
                ") has no candidate points at any angle");

    double estimate = detail::median(std::move(pooled));
    double covariance = config.initial_variance;
    // Two laps; the second lap starts with an informed prediction at k = 0.
    for (int lap = 0; lap < 2; ++lap) {
      for (int k = 0; k < N; ++k) {
        covariance += config.process_noise;
        const CandidateSet& cell = cells[k];
        if (!cell.empty()) {
          const auto m = weighted_measurement(cell, estimate);
          if (lap == 1 && m.used_fallback) ++diag.fallback_count;
          const double s = std::max(cell.variance, kVarianceFloor);
          const double gain = covariance / (covariance + s);
          estimate = kalman_update(estimate, gain, m.y);
          estimate = std::clamp(estimate, cell.r_min, cell.r_max);
          covariance *= (1.0 - gain);
        } else if (lap == 1) {
          ++diag.empty_cells;
        }
        if (lap == 1) radii[static_cast<std::size_t>(j) * N + k] = estimate;
      }
    }
  }

  return {SurfaceModel(axis, std::move(slice_z), N, std::move(radii)), std::move(diag)};
}

/// Defaults: 5 mm slices over the cloud's axial extent, 180 angles, and a
/// candidate threshold of half the arc spacing at the median radius.
inline ExtractionConfig default_extraction_config(const RawPointCloud& cloud, const BodyAxis& axis,
                                                  double slice_pitch = 0.005, int num_angles = 180) {
  require(!cloud.empty(), ErrorKind::empty_input, "default_extraction_config: empty point cloud");
  require(slice_pitch > 0.0, ErrorKind::configuration, "slice pitch must be > 0");
  double zlo = std::numeric_limits<double>::infinity();
  double zhi = -zlo;
  std::vector<double> r;
  r.reserve(cloud.size());
  for (const auto& p : cloud.points) {
    const auto c = to_cylindrical(p, axis);
    zlo = std::min(zlo, c.z);
    zhi = std::max(zhi, c.z);
    r.push_back(c.r);
  }
  ExtractionConfig cfg;
  cfg.num_angles = num_angles;
  cfg.z_min = zlo;
  cfg.z_max = zhi > zlo ? zhi : zlo + slice_pitch;
  cfg.num_slices = std::max(1, static_cast<int>(std::lround((cfg.z_max - cfg.z_min) / slice_pitch)));
  const double med = detail::median(std::move(r));
  cfg.candidate_threshold = 0.5 * kTwoPi * med / num_angles;
  if (!(cfg.candidate_threshold > 0.0)) cfg.candidate_threshold = 1e-3;
  return cfg;
}

}  // namespace mmt
