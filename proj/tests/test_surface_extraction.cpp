#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <random>

#include "support.hpp"

using namespace mmt;

namespace {

/// Ring-sampled elliptic cylinder along world z; angles_per_ring points per ring every dz.
RawPointCloud elliptic_cylinder(double a, double b, double length, int angles_per_ring, double dz,
                                double theta_lo = 0.0, double theta_hi = kTwoPi) {
  RawPointCloud c;
  const int rings = static_cast<int>(std::lround(length / dz)) + 1;
  for (int j = 0; j < rings; ++j) {
    for (int k = 0; k < angles_per_ring; ++k) {
      const double th = kTwoPi * k / angles_per_ring;
      if (th < theta_lo || th > theta_hi) continue;
      const double r = ellipse_radius(a, b, th);
      c.points.emplace_back(r * std::cos(th), r * std::sin(th), j * dz);
    }
  }
  return c;
}

/// Algebraic (Kasa) circle fit in the xy plane.
double fit_circle_radius(const RawPointCloud& c) {
  Eigen::MatrixXd A(static_cast<Eigen::Index>(c.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& p = c.points[i];
    A.row(static_cast<Eigen::Index>(i)) << p.x(), p.y(), 1.0;
    y(static_cast<Eigen::Index>(i)) = p.x() * p.x() + p.y() * p.y();
  }
  const Eigen::Vector3d s = A.colPivHouseholderQr().solve(y);
  const double cx = s(0) / 2, cy = s(1) / 2;
  return std::sqrt(s(2) + cx * cx + cy * cy);
}

ExtractionConfig config_for(const RawPointCloud& c, const BodyAxis& ax) { return default_extraction_config(c, ax); }

}  // namespace

// --- merge_scans ----------------------------------------------------------

TEST(MergeScans, IdentityPoseKeepsCloud) {
  RawPointCloud c;
  c.points = {Vec3(1, 2, 3), Vec3(-1, 0, 0.5)};
  const std::vector<RawPointCloud> clouds{c};
  const std::vector<ScanPose> poses{ScanPose{}};
  const auto m = merge_scans(clouds, poses);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.points[0], c.points[0]);
  EXPECT_EQ(m.points[1], c.points[1]);
}

TEST(MergeScans, TranslatedCopyIsOffset) {
  RawPointCloud c;
  c.points = {Vec3(0.1, 0.2, 0.3)};
  ScanPose shifted;
  shifted.translation = Vec3(1, -2, 0.5);
  const std::vector<RawPointCloud> clouds{c, c};
  const std::vector<ScanPose> poses{ScanPose{}, shifted};
  const auto m = merge_scans(clouds, poses);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m.points[1] - m.points[0], shifted.translation);
}

TEST(MergeScans, Errors) {
  const std::vector<RawPointCloud> one{RawPointCloud{{Vec3::Zero()}}};
  const std::vector<ScanPose> two{ScanPose{}, ScanPose{}};
  try {
    merge_scans(one, two);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::configuration);
  }
  try {
    merge_scans(std::span<const RawPointCloud>{}, std::span<const ScanPose>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_input);
  }
}

TEST(MergeScans, PartialCylinderScansRecoverRadius) {
  const double R = 0.12;
  std::mt19937_64 rng(21);
  std::vector<RawPointCloud> clouds;
  std::vector<ScanPose> poses;
  for (int s = 0; s < 3; ++s) {
    const double lo = s * kTwoPi / 3 - 0.3;
    RawPointCloud world = elliptic_cylinder(R, R, 0.2, 720, 0.004, std::max(0.0, lo), lo + kTwoPi / 3 + 0.6);
    ScanPose cam{fixtures::random_rotation(rng), Vec3(0.3 * s, -0.1, 0.5)};
    // Express the partial scan in the camera frame.
    RawPointCloud local;
    for (const auto& p : world.points) local.points.push_back(cam.rotation.transpose() * (p - cam.translation));
    clouds.push_back(local);
    poses.push_back(cam);
  }
  const auto merged = merge_scans(clouds, poses);
  EXPECT_NEAR(fit_circle_radius(merged), R, 1e-6);
}

// --- axis_from_probe_pose -------------------------------------------------

TEST(AxisFromProbePose, IdentityAndDepthOffset) {
  ScanPose p;
  p.translation = Vec3(0.1, 0.2, 0.9);
  const BodyAxis a = axis_from_probe_pose(p, 0.0);
  EXPECT_EQ(a.origin, p.translation);
  EXPECT_EQ(a.z_direction, AxisConvention{}.longitudinal);
  const BodyAxis b = axis_from_probe_pose(p, 0.1);
  EXPECT_NEAR((b.origin - (p.translation + 0.1 * AxisConvention{}.contact_normal)).norm(), 0.0, 1e-15);
  EXPECT_NO_THROW(b.validate());
  // theta = 0 points back toward the probe.
  EXPECT_NEAR(to_cylindrical(p.translation, b).theta, 0.0, 1e-12);
}

TEST(AxisFromProbePose, RotatedPoseRotatesAxis) {
  const std::array<Vec3, 2> axes{Vec3::UnitX(), Vec3::UnitY()};
  for (const Vec3& about : axes) {
    ScanPose p;
    p.rotation = rotation_about(about, std::numbers::pi / 2);
    const BodyAxis a = axis_from_probe_pose(p, 0.05);
    EXPECT_NEAR((a.z_direction - p.rotation * AxisConvention{}.longitudinal).norm(), 0.0, 1e-15);
    EXPECT_NEAR(a.z_direction.norm(), 1.0, 1e-15);
  }
}

TEST(AxisFromProbePose, DegenerateDirections) {
  AxisConvention bad;
  bad.longitudinal = Vec3::Zero();
  try {
    axis_from_probe_pose(ScanPose{}, 0.0, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_pose);
  }
  AxisConvention parallel;
  parallel.longitudinal = Vec3::UnitZ();
  EXPECT_THROW(axis_from_probe_pose(ScanPose{}, 0.0, parallel), Error);
}

// --- collect_candidates ---------------------------------------------------

TEST(CollectCandidates, ThresholdDefinition) {
  ExtractionConfig cfg;
  cfg.num_angles = 4;
  cfg.candidate_threshold = 0.01;
  const std::vector<CylindricalPoint> on_ray{{0.2, 0.0, 0.0}};
  const auto c = collect_candidates(on_ray, 0, cfg);
  ASSERT_EQ(c.radii.size(), 1u);
  EXPECT_EQ(c.variance, 0.0);
  EXPECT_EQ(c.r_min, 0.2);
  EXPECT_EQ(c.r_max, 0.2);
  // Perpendicular offset of 2 x threshold.
  const double r = std::hypot(0.2, 0.02);
  const std::vector<CylindricalPoint> off{{r, std::atan2(0.02, 0.2), 0.0}};
  EXPECT_TRUE(collect_candidates(off, 0, cfg).empty());
}

TEST(CollectCandidates, RingMatchesExhaustiveFilter) {
  const int n = 360;
  const double R = 0.1;
  std::vector<CylindricalPoint> ring;
  std::vector<Vec3> xyz;
  for (int i = 0; i < n; ++i) {
    const double th = kTwoPi * i / n;
    ring.push_back({R, th, 0.0});
    xyz.emplace_back(R * std::cos(th), R * std::sin(th), 0.0);
  }
  ExtractionConfig cfg;
  cfg.num_angles = 72;
  cfg.candidate_threshold = 1.8e-3;  // between 1 and 2 neighbour offsets
  for (int k = 0; k < cfg.num_angles; ++k) {
    const double th = cfg.angle(k);
    const Vec3 dir(std::cos(th), std::sin(th), 0.0);
    std::vector<double> expect;
    for (const auto& p : xyz) {
      const double along = p.dot(dir);
      const double dist = along >= 0.0 ? (p - along * dir).norm() : p.norm();
      if (dist <= cfg.candidate_threshold) expect.push_back(p.norm());
    }
    const auto got = collect_candidates(ring, k, cfg);
    EXPECT_EQ(got.radii.size(), 3u);
    ASSERT_EQ(got.radii.size(), expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(got.radii[i], expect[i], 1e-15);
  }
}

// --- rank_weight ----------------------------------------------------------

TEST(RankWeight, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(rank_weight(0.1, 0.1, 0.2), 1.0);
  EXPECT_DOUBLE_EQ(rank_weight(0.2, 0.1, 0.2), 0.0);
  EXPECT_NEAR(rank_weight(0.15, 0.1, 0.2), 0.25, 1e-15);
  EXPECT_DOUBLE_EQ(rank_weight(0.3, 0.3, 0.3), 1.0);
  try {
    rank_weight(0.25, 0.1, 0.2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::domain);
  }
}

TEST(RankWeight, MonotoneAndBounded) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double lo = U(rng), hi = lo + U(rng);
    double prev = 2.0;
    for (int s = 0; s <= 20; ++s) {
      const double r = std::min(hi, lo + (hi - lo) * s / 20.0);
      const double w = rank_weight(r, lo, hi);
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
      EXPECT_LE(w, prev);
      prev = w;
    }
  }
}

// --- weighted_measurement -------------------------------------------------

TEST(WeightedMeasurement, SingleCandidate) {
  const auto c = CandidateSet::from_radii({0.137});
  const auto m = weighted_measurement(c, 0.1);
  EXPECT_DOUBLE_EQ(m.y, 0.137);
  ASSERT_EQ(m.weights.size(), 1u);
  EXPECT_DOUBLE_EQ(m.weights[0], 1.0);
}

TEST(WeightedMeasurement, SymmetricPairGivesMean) {
  const std::vector<double> r{0.09, 0.11};
  const std::vector<double> d{0.5, 0.5};
  const auto m = blend_candidates(r, d, 0.10, 1e-4);
  EXPECT_NEAR(m.y, 0.10, 1e-15);
}

TEST(WeightedMeasurement, HandEvaluatedThreeCandidates) {
  const std::vector<double> r{0.10, 0.11, 0.20};
  const double pred = 0.10, S = 1e-4;
  // Rank weights (1 - (r - 0.10)/0.10)^2 and Gaussian scores around the prediction.
  const double D[3] = {1.0, 0.81, 0.0};
  double p[3], sum = 0.0, y = 0.0;
  for (int i = 0; i < 3; ++i) {
    p[i] = std::exp(-(r[i] - pred) * (r[i] - pred) / (2 * S)) / std::sqrt(2 * std::numbers::pi * S) * D[i];
    sum += p[i];
  }
  for (int i = 0; i < 3; ++i) y += r[i] * p[i] / sum;
  std::vector<double> dw;
  for (double ri : r) dw.push_back(rank_weight(ri, 0.10, 0.20));
  const auto m = blend_candidates(r, dw, pred, S);
  EXPECT_NEAR(m.y, y, 1e-9);
  EXPECT_NEAR(m.y, (0.10 + 0.11 * 0.81 * std::exp(-0.5)) / (1 + 0.81 * std::exp(-0.5)), 1e-12);
}

TEST(WeightedMeasurement, WeightsSumToOneAndStayInRange) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(0.05, 0.3);
  std::uniform_int_distribution<int> n(1, 12);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(n(rng)));
    for (double& x : r) x = U(rng);
    const auto c = CandidateSet::from_radii(r);
    const auto m = weighted_measurement(c, U(rng));
    double s = 0.0;
    for (double w : m.weights) s += w;
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_GE(m.y, c.r_min);
    EXPECT_LE(m.y, c.r_max);
  }
}

TEST(WeightedMeasurement, UnderflowFallsBackToUniform) {
  const std::vector<double> r{0.5, 0.6};
  const std::vector<double> d{1.0, 0.0};
  const auto m = blend_candidates(r, d, 0.0, 0.0);
  EXPECT_TRUE(m.used_fallback);
  EXPECT_DOUBLE_EQ(m.weights[0], 0.5);
  EXPECT_NEAR(m.y, 0.55, 1e-15);
}

// --- kalman_update --------------------------------------------------------

TEST(KalmanUpdate, Cases) {
  EXPECT_DOUBLE_EQ(kalman_update(0.1, 0.3, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(kalman_update(0.1, 1.0, 0.17), 0.17);
  EXPECT_NEAR(kalman_update(0.10, 0.5, 0.12), 0.11, 1e-15);
  EXPECT_THROW(kalman_update(0.1, 1.5, 0.2), Error);
  EXPECT_THROW(kalman_update(0.1, -0.1, 0.2), Error);
}

TEST(KalmanUpdate, OutputBetweenPredictionAndMeasurement) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1.0, 1.0), W(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double a = U(rng), z = U(rng), w = W(rng);
    const double x = kalman_update(a, w, z);
    EXPECT_GE(x, std::min(a, z) - 1e-15);
    EXPECT_LE(x, std::max(a, z) + 1e-15);
  }
}

// --- extract_surface ------------------------------------------------------

TEST(ExtractSurface, NoiselessCylinder) {
  const double R = 0.1;
  const auto cloud = elliptic_cylinder(R, R, 0.2, 720, 0.002);
  const BodyAxis ax;
  const auto res = extract_surface(cloud, ax, config_for(cloud, ax));
  double worst = 0.0;
  for (double r : res.surface.radii()) worst = std::max(worst, std::abs(r - R));
  EXPECT_LT(worst, 1e-6);
  EXPECT_EQ(res.diagnostics.empty_cells, 0);
}

TEST(ExtractSurface, RotationallySymmetricInputGivesConstantRings) {
  // Radius varies with z only.
  RawPointCloud c;
  for (int j = 0; j <= 100; ++j) {
    const double z = 0.002 * j;
    const double R = 0.1 + 0.1 * z;
    for (int k = 0; k < 720; ++k) {
      const double th = kTwoPi * k / 720;
      c.points.emplace_back(R * std::cos(th), R * std::sin(th), z);
    }
  }
  const BodyAxis ax;
  const auto res = extract_surface(c, ax, config_for(c, ax));
  const auto& s = res.surface;
  for (int j = 0; j < s.num_slices(); ++j) {
    double lo = 1e9, hi = -1e9;
    for (int k = 0; k < s.num_angles(); ++k) {
      lo = std::min(lo, s.radius(j, k));
      hi = std::max(hi, s.radius(j, k));
    }
    EXPECT_LT(hi - lo, 1e-6) << "slice " << j;
  }
}

TEST(ExtractSurface, EllipticCylinderWithinTwoPercentRms) {
  const double a = 0.15, b = 0.10;
  const auto cloud = elliptic_cylinder(a, b, 0.2, 1440, 0.002);
  const BodyAxis ax;
  const auto res = extract_surface(cloud, ax, config_for(cloud, ax));
  const auto& s = res.surface;
  double se = 0.0;
  for (int j = 0; j < s.num_slices(); ++j) {
    for (int k = 0; k < s.num_angles(); ++k) {
      const double truth = ellipse_radius(a, b, s.angle(k));
      se += std::pow((s.radius(j, k) - truth) / truth, 2);
    }
  }
  EXPECT_LT(std::sqrt(se / (s.num_slices() * s.num_angles())), 0.02);
}

TEST(ExtractSurface, BedPlaneOutliersAreRejected) {
  const double R = 0.12;
  RawPointCloud cloud = elliptic_cylinder(R, R, 0.2, 720, 0.002);
  // A flat bed just below the torso, wider than it.
  for (int j = 0; j <= 100; ++j) {
    for (int i = -150; i <= 150; ++i) cloud.points.emplace_back(0.002 * i, -R - 0.01, 0.002 * j);
  }
  const BodyAxis ax;
  const auto res = extract_surface(cloud, ax, config_for(cloud, ax));
  double worst = 0.0;
  for (double r : res.surface.radii()) worst = std::max(worst, std::abs(r - R) / R);
  EXPECT_LT(worst, 0.02);
}

TEST(ExtractSurface, RigidTransformInvariance) {
  // Random sampling keeps points off slice and threshold boundaries, where
  // last-bit rounding after the transform could flip membership.
  std::mt19937_64 srng(31);
  std::uniform_real_distribution<double> uth(0.0, kTwoPi), uz(0.0, 0.2);
  RawPointCloud cloud;
  for (int i = 0; i < 150000; ++i) {
    const double th = uth(srng), z = uz(srng);
    const double r = ellipse_radius(0.15, 0.10, th);
    cloud.points.emplace_back(r * std::cos(th), r * std::sin(th), z);
  }
  const BodyAxis ax;
  // Bounds from the cloud would put its extreme point exactly on z_min.
  auto cfg = config_for(cloud, ax);
  cfg.z_min = -0.001;
  cfg.z_max = 0.201;
  const auto base = extract_surface(cloud, ax, cfg);
  std::mt19937_64 rng(8);
  const RigidPose T{fixtures::random_rotation(rng), Vec3(0.4, -1.2, 0.7)};
  RawPointCloud moved;
  for (const auto& p : cloud.points) moved.points.push_back(T.apply(p));
  const auto other = extract_surface(moved, ax.transformed(T), cfg);
  ASSERT_EQ(base.surface.radii().size(), other.surface.radii().size());
  double worst = 0.0;
  for (std::size_t i = 0; i < base.surface.radii().size(); ++i) {
    worst = std::max(worst, std::abs(base.surface.radii()[i] - other.surface.radii()[i]));
  }
  EXPECT_LT(worst, 1e-9);
}

TEST(ExtractSurface, EstimatesStayInsideCandidateRange) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> noise(0.0, 0.002);
  RawPointCloud cloud = elliptic_cylinder(0.14, 0.11, 0.2, 720, 0.002);
  for (auto& p : cloud.points) p += Vec3(noise(rng), noise(rng), 0.0);
  const BodyAxis ax;
  const auto cfg = config_for(cloud, ax);
  const auto res = extract_surface(cloud, ax, cfg);
  // Rebuild the slice candidate sets and check the clamp invariant.
  const auto cyl = to_cylindrical(std::span<const Vec3>(cloud.points), ax);
  for (int j = 0; j < cfg.num_slices; ++j) {
    std::vector<CylindricalPoint> slice;
    for (const auto& c : cyl) {
      int jj = static_cast<int>(std::floor((c.z - cfg.z_min) / cfg.slice_pitch()));
      jj = std::clamp(jj, 0, cfg.num_slices - 1);
      if (jj == j && c.z >= cfg.z_min && c.z <= cfg.z_max) slice.push_back(c);
    }
    for (int k = 0; k < cfg.num_angles; ++k) {
      const auto cs = collect_candidates(slice, k, cfg);
      EXPECT_EQ(static_cast<int>(cs.radii.size()),
                res.diagnostics.candidate_counts[static_cast<std::size_t>(j) * cfg.num_angles + k]);
      if (cs.empty()) continue;
      const double r = res.surface.radius(j, k);
      EXPECT_GE(r, cs.r_min);
      EXPECT_LE(r, cs.r_max);
    }
  }
}

TEST(ExtractSurface, EmptySliceNamesTheSlice) {
  RawPointCloud cloud = elliptic_cylinder(0.1, 0.1, 0.04, 360, 0.002);
  ExtractionConfig cfg;
  cfg.z_min = 0.0;
  cfg.z_max = 0.1;
  cfg.num_slices = 4;
  cfg.candidate_threshold = 0.002;
  try {
    extract_surface(cloud, BodyAxis{}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::extraction);
    EXPECT_NE(std::string(e.what()).find("slice 2"), std::string::npos);
  }
  try {
    extract_surface(RawPointCloud{}, BodyAxis{}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_input);
  }
}

TEST(ExtractSurface, OcclusionCoastsOnPrediction) {
  // Missing wedge: cells without candidates hold the running estimate.
  const auto cloud = elliptic_cylinder(0.1, 0.1, 0.2, 720, 0.002, 0.0, 5.0);
  const BodyAxis ax;
  const auto res = extract_surface(cloud, ax, config_for(cloud, ax));
  EXPECT_GT(res.diagnostics.empty_cells, 0);
  for (double r : res.surface.radii()) EXPECT_NEAR(r, 0.1, 1e-6);
}

TEST(SurfaceModel, BilinearLookupIsPeriodicAndClamped) {
  std::vector<double> z{0.0, 1.0};
  std::vector<double> radii{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  const SurfaceModel s(BodyAxis{}, z, 4, radii);
  EXPECT_DOUBLE_EQ(s.radius_at(0.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(s.radius_at(kTwoPi / 8, 0.0), 1.5);
  EXPECT_DOUBLE_EQ(s.radius_at(kTwoPi * 7 / 8, 0.0), 2.5);  // between k = 3 and k = 0
  EXPECT_DOUBLE_EQ(s.radius_at(0.0, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(s.radius_at(0.0, 2.0), 5.0);
  EXPECT_DOUBLE_EQ(s.radius_at(0.0, -1.0), 1.0);
  EXPECT_THROW(SurfaceModel(BodyAxis{}, z, 4, std::vector<double>(8, -1.0)), Error);
}
