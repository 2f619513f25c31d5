#pragma once

// Replay-based force accuracy metrics, the four-table error layout, heatmap
// export and the synthetic phantom experiment that fills those tables.

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mmt/error.hpp"
#include "mmt/impedance_solver.hpp"
#include "mmt/metrics.hpp"
#include "mmt/pointshell_render.hpp"
#include "mmt/scan_sim.hpp"
#include "mmt/voxel_field.hpp"

namespace mmt {

struct ErrorReport {
  std::vector<double> magnitude_errors;               // N, per sample
  std::vector<std::optional<double>> angle_errors;    // degrees; nullopt = excluded (sub-floor force)
  std::vector<Vec3> rendered;                         // model force per sample
  std::vector<Vec3> measured;

  double mean_magnitude = 0.0;
  double median_magnitude = 0.0;
  double mean_angle = 0.0;
  double median_angle = 0.0;
  std::size_t angle_samples = 0;
  std::size_t excluded_angle_samples = 0;

  std::size_t samples() const { return magnitude_errors.size(); }
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  // Fixed index order so the result does not depend on how samples were produced.
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace detail

inline ErrorReport summarize_errors(std::vector<Vec3> rendered, std::vector<Vec3> measured) {
  require(rendered.size() == measured.size(), ErrorKind::dimension, "summarize_errors: size mismatch");
  ErrorReport rep;
  std::vector<double> angles;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    rep.magnitude_errors.push_back(magnitude_error(rendered[i], measured[i]));
    const auto a = angle_error(rendered[i], measured[i]);
    rep.angle_errors.push_back(a);
    if (a) {
      angles.push_back(*a);
    } else {
      ++rep.excluded_angle_samples;
    }
  }
  rep.angle_samples = angles.size();
  rep.mean_magnitude = detail::mean_of(rep.magnitude_errors);
  rep.median_magnitude = detail::median_of(rep.magnitude_errors);
  rep.mean_angle = detail::mean_of(angles);
  rep.median_angle = detail::median_of(angles);
  rep.rendered = std::move(rendered);
  rep.measured = std::move(measured);
  return rep;
}

/// Replays the scan's poses against the field and compares rendered forces
/// with the logged ones.
inline ErrorReport evaluate(const PotentialField& field, std::span<const ScanRecord> scan, const PointShell& shell,
                            const CylindricalGrid& grid, const SurfaceModel& surface) {
  require(!scan.empty(), ErrorKind::empty_input, "evaluate: scan log is empty");
  require(field.size() == grid.size(), ErrorKind::dimension, "evaluate: field size does not match grid");
  std::vector<Vec3> rendered(scan.size());
  std::vector<Vec3> measured(scan.size());
  for (std::size_t i = 0; i < scan.size(); ++i) {
    try {
      rendered[i] = render_step(shell, scan[i].pose, grid, field, surface).force;
    } catch (const Error& e) {
      throw Error(e.kind(), "sample " + std::to_string(i) + ": " + e.what());
    }
    measured[i] = scan[i].force;
  }
  return summarize_errors(std::move(rendered), std::move(measured));
}

inline ErrorReport evaluate(const FieldModel& model, std::span<const ScanRecord> scan, const PointShell& shell) {
  return evaluate(model.field, scan, shell, model.grid, model.surface);
}

/// Angle statistics of two reports over the samples where both have an angle.
/// A model that renders zero force at a sample has no angle there, so comparing
/// per-report means would compare different sample sets.
struct PairedAngles {
  double first_mean = 0.0;
  double second_mean = 0.0;
  double first_median = 0.0;
  double second_median = 0.0;
  std::size_t samples = 0;
};

inline PairedAngles paired_angles(const ErrorReport& first, const ErrorReport& second) {
  require(first.samples() == second.samples(), ErrorKind::dimension, "paired_angles: reports differ in length");
  std::vector<double> a, b;
  for (std::size_t i = 0; i < first.samples(); ++i) {
    if (first.angle_errors[i] && second.angle_errors[i]) {
      a.push_back(*first.angle_errors[i]);
      b.push_back(*second.angle_errors[i]);
    }
  }
  return {detail::mean_of(a), detail::mean_of(b), detail::median_of(a), detail::median_of(b), a.size()};
}

/// Flat key = value text with the documented report keys.
inline std::string report_key_values(const ErrorReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "samples = " << r.samples() << "\n";
  os << "mean_magnitude_error_N = " << r.mean_magnitude << "\n";
  os << "median_magnitude_error_N = " << r.median_magnitude << "\n";
  os << "mean_angle_error_deg = " << r.mean_angle << "\n";
  os << "median_angle_error_deg = " << r.median_angle << "\n";
  os << "angle_samples = " << r.angle_samples << "\n";
  os << "angle_excluded_samples = " << r.excluded_angle_samples << "\n";
  return os.str();
}

/// One of the four error tables: rows are samples (phantoms), columns are
/// press/sweep magnitude error then press/sweep angle error.
struct ErrorTable {
  std::string title;
  std::vector<std::string> row_names;
  std::vector<std::array<double, 4>> rows;
};

struct ErrorTables {
  ErrorTable laplace_training{"Laplace-only model, training trajectory", {}, {}};
  ErrorTable augmented_training{"Force-augmented model, training trajectory", {}, {}};
  ErrorTable laplace_heldout{"Laplace-only model, held-out trajectory", {}, {}};
  ErrorTable augmented_heldout{"Force-augmented model, held-out trajectory", {}, {}};

  std::array<const ErrorTable*, 4> all() const {
    return {&laplace_training, &augmented_training, &laplace_heldout, &augmented_heldout};
  }
};

inline std::string format_table(const ErrorTable& t) {
  std::ostringstream os;
  os << t.title << "\n";
  os << std::left << std::setw(12) << "" << std::right << std::setw(22) << "Magnitude error (N)" << std::setw(24)
     << "Angle error (deg)" << "\n";
  os << std::left << std::setw(12) << "Sample" << std::right << std::setw(11) << "Press" << std::setw(11) << "Sweep"
     << std::setw(12) << "Press" << std::setw(12) << "Sweep" << "\n";
  os << std::fixed;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    os << std::left << std::setw(12) << t.row_names[i] << std::right << std::setprecision(3) << std::setw(11)
       << t.rows[i][0] << std::setw(11) << t.rows[i][1] << std::setprecision(2) << std::setw(12) << t.rows[i][2]
       << std::setw(12) << t.rows[i][3] << "\n";
  }
  return os.str();
}

/// Single-report aligned summary used by the CLI.
inline std::string format_report(const ErrorReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(26) << "samples" << std::right << std::setw(14) << r.samples() << "\n";
  os << std::left << std::setw(26) << "mean magnitude error (N)" << std::right << std::setw(14) << r.mean_magnitude
     << "\n";
  os << std::left << std::setw(26) << "median magnitude error (N)" << std::right << std::setw(14)
     << r.median_magnitude << "\n";
  os << std::left << std::setw(26) << "mean angle error (deg)" << std::right << std::setw(14) << r.mean_angle << "\n";
  os << std::left << std::setw(26) << "median angle error (deg)" << std::right << std::setw(14) << r.median_angle
     << "\n";
  os << std::left << std::setw(26) << "angle samples excluded" << std::right << std::setw(14)
     << r.excluded_angle_samples << "\n";
  return os.str();
}

/// Transverse slice as an nr x ntheta matrix. `values` is signed; the image
/// intensity is |value| with lighter meaning larger.
struct Heatmap {
  int rows = 0;  // nr
  int cols = 0;  // ntheta
  std::vector<double> values;

  double at(int ir, int it) const { return values[static_cast<std::size_t>(ir) * cols + it]; }

  /// 8-bit intensities scaled from min |v| (black) to max |v| (white).
  std::vector<std::uint8_t> intensities() const {
    std::vector<std::uint8_t> out(values.size(), 0);
    if (values.empty()) return out;
    double lo = std::abs(values[0]), hi = lo;
    for (double v : values) {
      lo = std::min(lo, std::abs(v));
      hi = std::max(hi, std::abs(v));
    }
    if (hi <= lo) return out;
    for (std::size_t i = 0; i < values.size(); ++i) {
      out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (std::abs(values[i]) - lo) / (hi - lo)));
    }
    return out;
  }
};

/// Slice iz of the field; with a baseline, the slice of (field - baseline).
inline Heatmap export_heatmap(const PotentialField& field, const CylindricalGrid& grid, int iz,
                              const PotentialField* baseline = nullptr) {
  require(iz >= 0 && iz < grid.nz, ErrorKind::input,
          "heatmap: slice index " + std::to_string(iz) + " outside [0, " + std::to_string(grid.nz) + ")");
  require(field.size() == grid.size() && (!baseline || baseline->size() == grid.size()), ErrorKind::dimension,
          "heatmap: field size does not match grid");
  Heatmap h;
  h.rows = grid.nr;
  h.cols = grid.ntheta;
  h.values.resize(static_cast<std::size_t>(h.rows) * h.cols);
  for (int ir = 0; ir < grid.nr; ++ir) {
    for (int it = 0; it < grid.ntheta; ++it) {
      const Index v = grid.flat(ir, it, iz);
      h.values[static_cast<std::size_t>(ir) * h.cols + it] = field(v) - (baseline ? (*baseline)(v) : 0.0);
    }
  }
  return h;
}

/// Binary PGM (P5).
inline void write_pgm(const Heatmap& h, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path + " for writing");
  out << "P5\n" << h.cols << " " << h.rows << "\n255\n";
  const auto px = h.intensities();
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path);
}

/// Whitespace-separated signed values, one radial row per line.
inline void write_matrix(const Heatmap& h, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path + " for writing");
  out << "# rows = radial index, cols = angular index\n" << std::setprecision(17);
  for (int ir = 0; ir < h.rows; ++ir) {
    for (int it = 0; it < h.cols; ++it) out << (it ? " " : "") << h.at(ir, it);
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Phantom experiment

struct PhantomCase {
  std::string name;
  PhantomSpec phantom;
  TrajectoryParams press;
  TrajectoryParams sweep;
};

struct ExperimentOptions {
  GridResolution resolution{0.01, kTwoPi / 48, 0.01, 2, 0.2};
  ProbeGeometry probe;
  double lambda = kDefaultLambda;
  double force_sigma = 0.1;
  double torque_sigma = 0.005;
  std::uint64_t seed = 7;
  // Held-out runs repeat each trajectory with these offsets and a new seed.
  double heldout_z_shift = 0.005;
  double heldout_theta_shift = 0.02;
  double heldout_depth_scale = 0.9;
};

struct TrajectoryOutcome {
  ErrorReport laplace_training;
  ErrorReport augmented_training;
  ErrorReport laplace_heldout;
  ErrorReport augmented_heldout;
  PairedAngles training_angles;  // first = Laplace-only, second = augmented
  PairedAngles heldout_angles;
  PotentialField fitted;
};

struct ExperimentOutcome {
  std::string name;
  TrajectoryOutcome press;
  TrajectoryOutcome sweep;
};

/// Three seeded bump phantoms covering a circle and two ellipses.
inline std::vector<PhantomCase> default_phantom_suite() {
  auto make = [](std::string name, double a, double b, double bump_theta, double bump_z, double amplitude) {
    PhantomCase c;
    c.name = std::move(name);
    c.phantom.semi_axis_x = a;
    c.phantom.semi_axis_y = b;
    c.phantom.length = 0.2;
    const double r = ellipse_radius(a, b, bump_theta);
    StiffnessBump bump;
    bump.center = Vec3((r - 0.02) * std::cos(bump_theta), (r - 0.02) * std::sin(bump_theta), bump_z);
    bump.width = 0.02;
    bump.amplitude = amplitude;
    c.phantom.bump = bump;
    c.press.kind = TrajectoryKind::press;
    c.press.theta = bump_theta;
    c.press.z_start = bump_z;
    c.press.max_depth = 0.02;
    c.press.duration = 4.0;
    c.sweep.kind = TrajectoryKind::sweep;
    c.sweep.theta = bump_theta;
    c.sweep.z_start = bump_z - 0.05;
    c.sweep.sweep_length = 0.1;
    c.sweep.max_depth = 0.015;
    c.sweep.duration = 6.0;
    return c;
  };
  return {make("phantom-1", 0.12, 0.12, 0.0, 0.10, 0.8),
          make("phantom-2", 0.15, 0.10, 0.3, 0.08, 1.0),
          make("phantom-3", 0.17, 0.12, 5.9, 0.12, 0.6)};
}

inline TrajectoryOutcome run_trajectory_experiment(const Phantom& ph, const LaplaceSystem& sys,
                                                   std::shared_ptr<const LaplaceFactorization> fac,
                                                   const PointShell& shell, TrajectoryParams params,
                                                   const ExperimentOptions& opt, std::uint64_t seed) {
  params.seed = seed;
  const Trajectory train = make_trajectory(params, ph.surface, ph.grid);
  TrajectoryParams held = params;
  held.seed = seed + 1000;
  held.z_start += opt.heldout_z_shift;
  held.theta += opt.heldout_theta_shift;
  held.max_depth *= opt.heldout_depth_scale;
  const Trajectory test = make_trajectory(held, ph.surface, ph.grid);

  const auto train_scan = simulate_measurements(shell, train, ph.grid, ph.truth, ph.surface, opt.force_sigma,
                                                opt.torque_sigma, seed + 1);
  const auto test_scan = simulate_measurements(shell, test, ph.grid, ph.truth, ph.surface, opt.force_sigma,
                                               opt.torque_sigma, seed + 2);
  const MeasurementBatch batch = batch_from_scan(train_scan.records, shell, ph.grid, ph.laplace, ph.surface);
  const BatchFitter fitter(std::move(fac), sys, batch);

  TrajectoryOutcome out;
  out.fitted = PotentialField{fitter.solve(opt.lambda)};
  const PotentialField laplace{fitter.laplace_solution()};
  out.laplace_training = evaluate(laplace, train_scan.records, shell, ph.grid, ph.surface);
  out.augmented_training = evaluate(out.fitted, train_scan.records, shell, ph.grid, ph.surface);
  out.laplace_heldout = evaluate(laplace, test_scan.records, shell, ph.grid, ph.surface);
  out.augmented_heldout = evaluate(out.fitted, test_scan.records, shell, ph.grid, ph.surface);
  out.training_angles = paired_angles(out.laplace_training, out.augmented_training);
  out.heldout_angles = paired_angles(out.laplace_heldout, out.augmented_heldout);
  return out;
}

inline ExperimentOutcome run_phantom_experiment(const PhantomCase& c, const ExperimentOptions& opt) {
  const Phantom ph = make_phantom(c.phantom, opt.resolution);
  const LaplaceSystem sys = assemble_laplace(ph.grid, ph.shell, c.phantom.boundary);
  auto fac = std::make_shared<const LaplaceFactorization>(sys);
  const PointShell shell = build_probe_pointshell(opt.probe);
  TrajectoryParams press = c.press;
  TrajectoryParams sweep = c.sweep;
  press.tip_offset = sweep.tip_offset = opt.probe.contact_offset();
  ExperimentOutcome out;
  out.name = c.name;
  out.press = run_trajectory_experiment(ph, sys, fac, shell, press, opt, opt.seed);
  out.sweep = run_trajectory_experiment(ph, sys, fac, shell, sweep, opt, opt.seed + 17);
  return out;
}

inline ErrorTables tabulate(std::span<const ExperimentOutcome> outcomes) {
  ErrorTables t;
  // Angle columns use the paired sample set of the two models being compared.
  auto row = [](const ErrorReport& press, const ErrorReport& sweep, double press_angle, double sweep_angle) {
    return std::array<double, 4>{press.mean_magnitude, sweep.mean_magnitude, press_angle, sweep_angle};
  };
  for (const auto& o : outcomes) {
    for (ErrorTable* table : {&t.laplace_training, &t.augmented_training, &t.laplace_heldout, &t.augmented_heldout}) {
      table->row_names.push_back(o.name);
    }
    const auto& p = o.press;
    const auto& s = o.sweep;
    t.laplace_training.rows.push_back(
        row(p.laplace_training, s.laplace_training, p.training_angles.first_mean, s.training_angles.first_mean));
    t.augmented_training.rows.push_back(
        row(p.augmented_training, s.augmented_training, p.training_angles.second_mean, s.training_angles.second_mean));
    t.laplace_heldout.rows.push_back(
        row(p.laplace_heldout, s.laplace_heldout, p.heldout_angles.first_mean, s.heldout_angles.first_mean));
    t.augmented_heldout.rows.push_back(
        row(p.augmented_heldout, s.augmented_heldout, p.heldout_angles.second_mean, s.heldout_angles.second_mean));
  }
  return t;
}

}  // namespace mmt
