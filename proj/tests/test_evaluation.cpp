#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <memory>
#include <random>

#include "support.hpp"

using namespace mmt;
using fixtures::error_kind;

namespace {

const PointShell& probe() {
  static const PointShell s = build_probe_pointshell(ProbeGeometry{});
  return s;
}

struct Scenario {
  Phantom ph;
  LaplaceSystem sys;
  SyntheticScan scan;
  PotentialField fitted;
};

const Scenario& press_scenario() {
  static const Scenario s = [] {
    Scenario out{make_phantom(fixtures::bump_phantom_spec(), fixtures::coarse_resolution()), {}, {}, {}};
    out.sys = assemble_laplace(out.ph.grid, out.ph.shell, out.ph.spec.boundary);
    TrajectoryParams tp;
    tp.kind = TrajectoryKind::press;
    tp.z_start = 0.1;
    tp.max_depth = 0.02;
    tp.tip_offset = ProbeGeometry{}.contact_offset();
    tp.seed = 11;
    const auto traj = make_trajectory(tp, out.ph.surface, out.ph.grid);
    out.scan = simulate_measurements(probe(), traj, out.ph.grid, out.ph.truth, out.ph.surface, 0.0, 0.0, 11);
    const auto batch = batch_from_scan(out.scan.records, probe(), out.ph.grid, out.ph.laplace, out.ph.surface);
    out.fitted = fit_field(out.sys, batch, kDefaultLambda);
    return out;
  }();
  return s;
}

// Scalar re-implementation used as the oracle for the replay mean.
double scalar_norm(const Vec3& v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

}  // namespace

// --- metrics -------------------------------------------------------------------

TEST(Metrics, MagnitudeErrorExamples) {
  EXPECT_EQ(magnitude_error(Vec3(1, 2, 3), Vec3(1, 2, 3)), 0.0);
  EXPECT_DOUBLE_EQ(magnitude_error(Vec3(0, 0, 3), Vec3(0, 4, 0)), 1.0);
  EXPECT_DOUBLE_EQ(magnitude_error(Vec3(0, 4, 0), Vec3(0, 0, 3)), 1.0);
}

TEST(Metrics, AngleErrorExamples) {
  EXPECT_NEAR(*angle_error(Vec3(1, 2, 3), Vec3(2, 4, 6)), 0.0, 1e-6);
  EXPECT_NEAR(*angle_error(Vec3(1, 0, 0), Vec3(0, 1, 0)), 90.0, 1e-12);
  EXPECT_NEAR(*angle_error(Vec3(0, 0, 2), Vec3(0, 0, -5)), 180.0, 1e-12);
  EXPECT_FALSE(angle_error(Vec3(1e-7, 0, 0), Vec3(1, 0, 0)).has_value());
  EXPECT_FALSE(angle_error(Vec3(1, 0, 0), Vec3::Zero()).has_value());
}

TEST(Metrics, AngleIsScaleInvariantAndBounded) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> scale(1e-3, 1e3);
  for (int i = 0; i < 500; ++i) {
    const Vec3 a(n(rng), n(rng), n(rng));
    const Vec3 b(n(rng), n(rng), n(rng));
    const double base = *angle_error(a, b);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 180.0);
    EXPECT_NEAR(*angle_error(scale(rng) * a, b), base, 1e-9);
    EXPECT_GE(magnitude_error(a, b), 0.0);
  }
}

TEST(Summaries, ExcludedSamplesAndMedians) {
  const auto r = summarize_errors({Vec3(0, 0, 1), Vec3::Zero(), Vec3(0, 0, 3), Vec3(1, 0, 0)},
                                  {Vec3(0, 0, 2), Vec3(0, 0, 1), Vec3(0, 0, 3), Vec3(0, 1, 0)});
  ASSERT_EQ(r.samples(), 4u);
  EXPECT_EQ(r.excluded_angle_samples, 1u);
  EXPECT_EQ(r.angle_samples, 3u);
  EXPECT_FALSE(r.angle_errors[1].has_value());
  EXPECT_DOUBLE_EQ(r.mean_magnitude, 0.5);    // 1, 1, 0, 0
  EXPECT_DOUBLE_EQ(r.median_magnitude, 0.5);
  EXPECT_DOUBLE_EQ(r.mean_angle, 30.0);       // 0, 0, 90
  EXPECT_DOUBLE_EQ(r.median_angle, 0.0);
  EXPECT_EQ(error_kind([] { summarize_errors({Vec3::Zero()}, {}); }), ErrorKind::dimension);
}

TEST(Summaries, PairedAnglesUseCommonSamples) {
  // first has an angle at 0 and 2; second at 0, 1 and 2. Sample 1 must not count.
  const auto a = summarize_errors({Vec3(0, 0, 1), Vec3::Zero(), Vec3(1, 0, 0)},
                                  {Vec3(0, 0, 1), Vec3(0, 0, 1), Vec3(0, 1, 0)});
  const auto b = summarize_errors({Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0)},
                                  {Vec3(0, 0, 1), Vec3(0, 0, 1), Vec3(0, 1, 0)});
  EXPECT_DOUBLE_EQ(b.mean_angle, 30.0);  // 0, 90, 0
  const auto p = paired_angles(a, b);
  EXPECT_EQ(p.samples, 2u);
  EXPECT_DOUBLE_EQ(p.first_mean, 45.0);  // 0, 90
  EXPECT_DOUBLE_EQ(p.second_mean, 0.0);
  EXPECT_DOUBLE_EQ(p.first_median, 45.0);
  const auto self = paired_angles(b, b);
  EXPECT_EQ(self.samples, b.angle_samples);
  EXPECT_DOUBLE_EQ(self.first_mean, b.mean_angle);
  const auto shorter = summarize_errors({Vec3(0, 0, 1)}, {Vec3(0, 0, 1)});
  EXPECT_EQ(error_kind([&] { paired_angles(a, shorter); }), ErrorKind::dimension);
}

// --- evaluate ------------------------------------------------------------------

TEST(Evaluate, BatchMeanMatchesScalarOracle) {
  const auto& s = press_scenario();
  const auto rep = evaluate(s.ph.laplace, s.scan.records, probe(), s.ph.grid, s.ph.surface);
  ASSERT_EQ(rep.samples(), s.scan.records.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < s.scan.records.size(); ++i) {
    const Vec3 f = render_step(probe(), s.scan.records[i].pose, s.ph.grid, s.ph.laplace, s.ph.surface).force;
    sum += std::abs(scalar_norm(f) - scalar_norm(s.scan.records[i].force));
  }
  EXPECT_NEAR(rep.mean_magnitude, sum / static_cast<double>(s.scan.records.size()), 1e-12);
}

TEST(Evaluate, RepeatedRunsAreBitIdentical) {
  const auto& s = press_scenario();
  const auto a = evaluate(s.fitted, s.scan.records, probe(), s.ph.grid, s.ph.surface);
  const auto b = evaluate(s.fitted, s.scan.records, probe(), s.ph.grid, s.ph.surface);
  EXPECT_EQ(std::memcmp(&a.mean_magnitude, &b.mean_magnitude, sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(&a.mean_angle, &b.mean_angle, sizeof(double)), 0);
  EXPECT_EQ(a.magnitude_errors, b.magnitude_errors);
  EXPECT_EQ(report_key_values(a), report_key_values(b));
}

TEST(Evaluate, TrainingErrorBoundedByFitResidual) {
  const auto& s = press_scenario();
  const auto rep = evaluate(s.fitted, s.scan.records, probe(), s.ph.grid, s.ph.surface);
  const auto batch = batch_from_scan(s.scan.records, probe(), s.ph.grid, s.ph.laplace, s.ph.surface);
  const Eigen::VectorXd r = batch.N() * s.fitted.values - batch.f();
  // | |a| - |b| | <= |a - b| for every sample.
  double bound = 0.0;
  for (Index t = 0; t < r.size() / 3; ++t) bound += r.segment<3>(3 * t).norm();
  bound /= static_cast<double>(r.size() / 3);
  EXPECT_LE(rep.mean_magnitude, bound + 1e-12);
}

TEST(Evaluate, LargeLambdaReproducesNoiselessTrainingScan) {
  const auto& s = press_scenario();
  const auto batch = batch_from_scan(s.scan.records, probe(), s.ph.grid, s.ph.laplace, s.ph.surface);
  const auto field = fit_field(s.sys, batch, 1e8);
  const auto rep = evaluate(field, s.scan.records, probe(), s.ph.grid, s.ph.surface);
  EXPECT_LE(rep.mean_magnitude, 1e-6);
  EXPECT_LE(rep.mean_angle, 1e-4);
}

TEST(Evaluate, AugmentedBeatsPlainOnBumpPhantom) {
  const auto& s = press_scenario();
  const auto plain = evaluate(s.ph.laplace, s.scan.records, probe(), s.ph.grid, s.ph.surface);
  const auto aug = evaluate(s.fitted, s.scan.records, probe(), s.ph.grid, s.ph.surface);
  EXPECT_LT(aug.mean_magnitude, plain.mean_magnitude);
  EXPECT_LT(aug.mean_angle, plain.mean_angle);
}

TEST(Evaluate, EmptyScanAndCoverageErrors) {
  const auto& s = press_scenario();
  EXPECT_EQ(error_kind([&] { evaluate(s.ph.laplace, {}, probe(), s.ph.grid, s.ph.surface); }),
            ErrorKind::empty_input);
  std::vector<ScanRecord> far(3);
  for (auto& r : far) r.pose.translation = Vec3(0.3, 0.0, 0.1);
  // Deep inside the body, next to the axis where the grid has no voxels.
  far[2].pose.translation = Vec3(0.0, 0.0, 0.1);
  try {
    evaluate(s.ph.laplace, far, probe(), s.ph.grid, s.ph.surface);
    ADD_FAILURE() << "expected a coverage error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::coverage);
    EXPECT_NE(std::string(e.what()).find("sample 2"), std::string::npos) << e.what();
  }
}

// --- tables --------------------------------------------------------------------

TEST(Tables, FourTableLayout) {
  ExperimentOutcome o;
  o.name = "phantom-x";
  auto rep = [](double m) { return summarize_errors({Vec3(0, 0, 1 + m)}, {Vec3(0, 0, 1)}); };
  o.press = {rep(1), rep(2), rep(3), rep(4), {}};
  o.sweep = {rep(5), rep(6), rep(7), rep(8), {}};
  const std::vector<ExperimentOutcome> outcomes{o, o};
  const auto t = tabulate(outcomes);
  const auto all = t.all();
  ASSERT_EQ(all.size(), 4u);
  EXPECT_EQ(t.laplace_training.rows.size(), 2u);
  EXPECT_DOUBLE_EQ(t.laplace_training.rows[0][0], 1.0);
  EXPECT_DOUBLE_EQ(t.laplace_training.rows[0][1], 5.0);
  EXPECT_DOUBLE_EQ(t.augmented_training.rows[0][0], 2.0);
  EXPECT_DOUBLE_EQ(t.laplace_heldout.rows[0][1], 7.0);
  EXPECT_DOUBLE_EQ(t.augmented_heldout.rows[1][1], 8.0);
  EXPECT_NE(t.laplace_training.title.find("training"), std::string::npos);
  EXPECT_NE(t.augmented_heldout.title.find("held-out"), std::string::npos);
  const auto text = format_table(t.augmented_training);
  EXPECT_NE(text.find("phantom-x"), std::string::npos);
  EXPECT_NE(text.find("Press"), std::string::npos);
  EXPECT_NE(text.find("Sweep"), std::string::npos);
}

// --- heatmaps ------------------------------------------------------------------

TEST(Heatmap, ConstantFieldGivesConstantImage) {
  const auto& s = press_scenario();
  const PotentialField c{Eigen::VectorXd::Constant(s.ph.grid.size(), 0.7)};
  const auto h = export_heatmap(c, s.ph.grid, 3);
  EXPECT_EQ(h.rows, s.ph.grid.nr);
  EXPECT_EQ(h.cols, s.ph.grid.ntheta);
  EXPECT_EQ(h.values.size(), static_cast<std::size_t>(s.ph.grid.nr * s.ph.grid.ntheta));
  for (double v : h.values) EXPECT_EQ(v, 0.7);
  for (auto px : h.intensities()) EXPECT_EQ(px, h.intensities().front());
}

TEST(Heatmap, LighterMeansLargerMagnitude) {
  Heatmap h;
  h.rows = 1;
  h.cols = 3;
  h.values = {-2.0, 0.5, 1.0};
  const auto px = h.intensities();
  EXPECT_EQ(px[0], 255);
  EXPECT_EQ(px[1], 0);
  EXPECT_GT(px[2], px[1]);
}

TEST(Heatmap, SliceIndexOutOfRangeIsInputError) {
  const auto& s = press_scenario();
  EXPECT_EQ(error_kind([&] { export_heatmap(s.ph.laplace, s.ph.grid, -1); }), ErrorKind::input);
  EXPECT_EQ(error_kind([&] { export_heatmap(s.ph.laplace, s.ph.grid, s.ph.grid.nz); }), ErrorKind::input);
}

TEST(Heatmap, AugmentationDifferenceConcentratesNearPress) {
  const auto& s = press_scenario();
  const auto& g = s.ph.grid;
  const int iz = static_cast<int>((0.1 - g.z0) / g.dz);
  const auto h = export_heatmap(s.fitted, g, iz, &s.ph.laplace);
  // The press sits at theta = 0; sum |difference| by angular distance from it.
  double near = 0.0, total = 0.0;
  for (int ir = 0; ir < h.rows; ++ir) {
    for (int it = 0; it < h.cols; ++it) {
      const double th = g.theta_center(it);
      const double dist = std::min(th, kTwoPi - th);
      total += std::abs(h.at(ir, it));
      if (dist <= kTwoPi / 8) near += std::abs(h.at(ir, it));
    }
  }
  ASSERT_GT(total, 0.0);
  // A quarter of the angular range holds most of the change.
  EXPECT_GT(near / total, 0.75) << near / total;
}
