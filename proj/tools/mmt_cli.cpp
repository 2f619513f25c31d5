// mmt: command-line front end for surface extraction, field building,
// force-augmented fitting, rendering, evaluation, simulation and heatmaps.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mmt/mmt.hpp"

namespace fs = std::filesystem;
using namespace mmt;

namespace {

constexpr int kUsageExit = 2;
constexpr int kFailureExit = 1;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
  bool print_config = false;
};

class Log {
 public:
  explicit Log(int level) : level_(level), start_(std::chrono::steady_clock::now()) {}
  template <class... Args>
  void info(const Args&... args) const {
    if (level_ < 1) return;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::fprintf(stderr, "[%8.3f] ", s);
    (std::cerr << ... << args) << '\n';
  }

 private:
  int level_;
  std::chrono::steady_clock::time_point start_;
};

std::string pick(const std::string& flag, const std::string& configured, const char* what) {
  const std::string& v = flag.empty() ? configured : flag;
  require(!v.empty(), ErrorKind::configuration, std::string("no ") + what + " given (flag or config paths)");
  return v;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open " + path + " for writing");
  out << text;
  require(static_cast<bool>(out), ErrorKind::io, "failed writing " + path);
}

TrajectoryParams trajectory_for(const RunConfig& cfg) {
  TrajectoryParams t = cfg.trajectory;
  t.seed = cfg.seed;
  t.tip_offset = cfg.probe.contact_offset();
  return t;
}

// --- extract-surface ------------------------------------------------------

struct ExtractArgs {
  std::string manifest;
  std::string output;
};

int run_extract(const RunConfig& cfg, const ExtractArgs& a, const Log& log) {
  const auto manifest = io::read_manifest(pick(a.manifest, cfg.paths.manifest, "manifest"));
  const RawPointCloud cloud = io::load_manifest_cloud(manifest);
  log.info("merged ", manifest.files.size(), " cloud(s): ", cloud.points.size(), " points");
  const ExtractionConfig ecfg =
      manifest.extraction.value_or(default_extraction_config(cloud, manifest.axis, cfg.extraction_slice_pitch,
                                                             cfg.extraction_angles));
  const ExtractionResult res = extract_surface(cloud, manifest.axis, ecfg);
  log.info("surface: ", res.surface.num_slices(), " slices x ", res.surface.num_angles(), " angles, ",
           res.diagnostics.empty_cells, " empty cells, ", res.diagnostics.fallback_count, " fallback weights");
  io::write_surface(res.surface, a.output);
  return 0;
}

// --- build-field ----------------------------------------------------------

struct BuildArgs {
  std::string surface;
  std::string output;
};

int run_build(const RunConfig& cfg, const BuildArgs& a, const Log& log) {
  const SurfaceModel surface = io::read_surface(pick(a.surface, cfg.paths.surface, "surface"));
  const FieldModel model = build_field_model(surface, cfg.grid, cfg.boundary, cfg.solver);
  log.info("grid ", model.grid.nr, " x ", model.grid.ntheta, " x ", model.grid.nz, " = ", model.grid.size(),
           " voxels");
  io::write_model(model, a.output);
  return 0;
}

// --- fit ------------------------------------------------------------------

struct FitArgs {
  std::string model;
  std::string scan;
  std::string output;
  std::optional<double> lambda;
};

int run_fit(const RunConfig& cfg, const FitArgs& a, const Log& log) {
  const std::string scan_path = pick(a.scan, cfg.paths.scan, "scan log");
  FieldModel model = io::read_model(pick(a.model, cfg.paths.model, "model"));
  const auto scan = io::read_scan_log(scan_path);
  require(!scan.empty(), ErrorKind::empty_input, "scan log " + scan_path + " has no samples");
  const double lambda = a.lambda.value_or(cfg.lambda);
  require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::configuration, "lambda must be >= 0");

  const LaplaceSystem sys = model.laplace_system();
  auto fac = std::make_shared<const LaplaceFactorization>(sys, cfg.solver);
  const PointShell shell = build_probe_pointshell(cfg.probe);
  // Observation rows depend only on geometry, so any field of the right size works here.
  const MeasurementBatch batch = batch_from_scan(scan, shell, model.grid, model.field, model.surface);
  const BatchFitter fitter(fac, sys, batch);
  log.info("fit: T = ", batch.timesteps(), ", touched voxels = ", fitter.touched_voxels().size(),
           ", lambda = ", lambda);
  model.field = PotentialField{fitter.solve(lambda)};
  model.fitted = true;
  model.lambda = lambda;
  model.measurement_count = batch.timesteps();
  model.training_digest = io::file_digest(scan_path);
  io::write_model(model, a.output);
  return 0;
}

// --- render ---------------------------------------------------------------

struct RenderArgs {
  std::string model;
  std::string poses;
  std::string output;
};

int run_render(const RunConfig& cfg, const RenderArgs& a, const Log& log) {
  const FieldModel model = io::read_model(pick(a.model, cfg.paths.model, "model"));
  const auto poses = io::read_scan_log(pick(a.poses, cfg.paths.poses, "pose log"), true);
  const PointShell shell = build_probe_pointshell(cfg.probe);
  std::ofstream file;
  if (!a.output.empty()) {
    file.open(a.output);
    require(static_cast<bool>(file), ErrorKind::io, "cannot open " + a.output + " for writing");
  }
  std::ostream& out = a.output.empty() ? std::cout : file;
  char buf[256];
  for (std::size_t i = 0; i < poses.size(); ++i) {
    RenderResult r;
    try {
      r = render_step(shell, poses[i].pose, model.grid, model.field, model.surface);
    } catch (const Error& e) {
      throw Error(e.kind(), "pose " + std::to_string(i) + ": " + e.what());
    }
    std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", poses[i].time, r.force.x(),
                  r.force.y(), r.force.z(), r.torque.x(), r.torque.y(), r.torque.z());
    out << buf;
  }
  log.info("rendered ", poses.size(), " poses");
  return 0;
}

// --- evaluate -------------------------------------------------------------

struct EvaluateArgs {
  std::string model;
  std::string scan;
  std::string report;
};

int run_evaluate(const RunConfig& cfg, const EvaluateArgs& a, const Log& log) {
  const std::string scan_path = pick(a.scan, cfg.paths.scan, "scan log");
  const FieldModel model = io::read_model(pick(a.model, cfg.paths.model, "model"));
  const auto scan = io::read_scan_log(scan_path);
  require(!scan.empty(), ErrorKind::empty_input, "scan log " + scan_path + " has no samples");
  const PointShell shell = build_probe_pointshell(cfg.probe);
  const ErrorReport rep = evaluate(model, scan, shell);
  std::cout << (model.fitted ? "Force-augmented model" : "Laplace-only model") << " on " << scan_path << "\n"
            << format_report(rep);
  if (!a.report.empty()) write_text(a.report, report_key_values(rep));
  log.info("evaluated ", rep.samples(), " samples");
  return 0;
}

// --- simulate -------------------------------------------------------------

struct SimulateArgs {
  std::string output;
  std::string truth;
  std::string model;
  std::string surface;
  std::string cloud;
  std::string kind;
};

int run_simulate(const RunConfig& cfg, const SimulateArgs& a, const Log& log) {
  const Phantom ph = make_phantom(cfg.phantom, cfg.grid, cfg.solver);
  log.info("phantom grid ", ph.grid.nr, " x ", ph.grid.ntheta, " x ", ph.grid.nz, " = ", ph.grid.size(), " voxels");
  TrajectoryParams params = trajectory_for(cfg);
  if (!a.kind.empty()) {
    require(a.kind == "press" || a.kind == "sweep", ErrorKind::configuration, "--kind must be press or sweep");
    params.kind = a.kind == "press" ? TrajectoryKind::press : TrajectoryKind::sweep;
  }
  const Trajectory traj = make_trajectory(params, ph.surface, ph.grid);
  const PointShell shell = build_probe_pointshell(cfg.probe);
  const SyntheticScan scan =
      simulate_measurements(shell, traj, ph.grid, ph.truth, ph.surface, cfg.force_sigma, cfg.torque_sigma, cfg.seed);
  io::write_scan_log(scan.records, a.output, scan.provenance);
  if (!a.truth.empty()) io::write_model(ph.model(ph.truth), a.truth);
  if (!a.model.empty()) io::write_model(ph.model(ph.laplace), a.model);
  if (!a.surface.empty()) io::write_surface(ph.surface, a.surface);
  if (!a.cloud.empty()) {
    const int rings = std::max(2, static_cast<int>(std::lround(cfg.phantom.length / 0.002)) + 1);
    io::write_xyz(sample_phantom_cloud(cfg.phantom, 720, rings, 0.0, cfg.seed), a.cloud);
  }
  log.info("simulated ", scan.records.size(), " ", to_string(traj.kind), " samples");
  return 0;
}

// --- heatmap --------------------------------------------------------------

struct HeatmapArgs {
  std::string model;
  std::string baseline;
  std::string output;
  std::string matrix;
  int slice = -1;
};

int run_heatmap(const RunConfig& cfg, const HeatmapArgs& a, const Log& log) {
  const FieldModel model = io::read_model(pick(a.model, cfg.paths.model, "model"));
  std::optional<FieldModel> base;
  if (!a.baseline.empty()) {
    base = io::read_model(a.baseline);
    require(base->grid.size() == model.grid.size() && base->grid.nr == model.grid.nr &&
                base->grid.ntheta == model.grid.ntheta,
            ErrorKind::dimension, "baseline model grid differs from model grid");
  }
  const int iz = a.slice >= 0 ? a.slice : model.grid.nz / 2;
  const Heatmap h = export_heatmap(model.field, model.grid, iz, base ? &base->field : nullptr);
  write_pgm(h, a.output);
  if (!a.matrix.empty()) write_matrix(h, a.matrix);
  log.info("heatmap slice ", iz, ": ", h.rows, " x ", h.cols);
  return 0;
}

// --- experiment -----------------------------------------------------------

struct ExperimentArgs {
  std::string output;
};

int run_experiment(const RunConfig& cfg, const ExperimentArgs& a, const Log& log) {
  ExperimentOptions opt;
  opt.resolution = cfg.grid;
  opt.probe = cfg.probe;
  opt.lambda = cfg.lambda;
  opt.force_sigma = cfg.force_sigma;
  opt.torque_sigma = cfg.torque_sigma;
  opt.seed = cfg.seed;
  std::vector<ExperimentOutcome> outcomes;
  for (const auto& c : default_phantom_suite()) {
    log.info("running ", c.name);
    outcomes.push_back(run_phantom_experiment(c, opt));
  }
  const ErrorTables tables = tabulate(outcomes);
  std::string text;
  for (const ErrorTable* t : tables.all()) text += format_table(*t) + "\n";
  std::cout << text;
  if (!a.output.empty()) write_text(a.output, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-mediated teleoperation: patient surface, potential field and force-augmented impedance model"};
  app.set_version_flag("--version", "mmt 1.0.0");
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Random seed (overrides config)");
  app.add_flag("-v,--verbose", g.verbosity, "Verbose progress on stderr (repeatable)");
  app.add_flag("--print-config", g.print_config, "Print the effective configuration as JSON and exit");
  app.require_subcommand(0, 1);

  ExtractArgs ex;
  auto* c_ex = app.add_subcommand("extract-surface", "Point-cloud manifest -> surface file");
  c_ex->add_option("--manifest", ex.manifest, "Scan-set manifest (JSON)");
  c_ex->add_option("-o,--output", ex.output, "Surface file to write")->required();

  BuildArgs bu;
  auto* c_bu = app.add_subcommand("build-field", "Surface -> Laplace model archive");
  c_bu->add_option("--surface", bu.surface, "Surface file");
  c_bu->add_option("-o,--output", bu.output, "Model archive to write")->required();

  FitArgs fi;
  auto* c_fi = app.add_subcommand("fit", "Model + scan log -> force-augmented model archive");
  c_fi->add_option("--model", fi.model, "Laplace model archive");
  c_fi->add_option("--scan", fi.scan, "Scan log");
  c_fi->add_option("--lambda", fi.lambda, "Regularization weight (overrides config)");
  c_fi->add_option("-o,--output", fi.output, "Fitted archive to write")->required();

  RenderArgs re;
  auto* c_re = app.add_subcommand("render", "Model + poses -> wrench stream (t fx fy fz mx my mz)");
  c_re->add_option("--model", re.model, "Model archive");
  c_re->add_option("--poses", re.poses, "Pose log (scan log, wrench columns optional)");
  c_re->add_option("-o,--output", re.output, "Output file (default stdout)");

  EvaluateArgs ev;
  auto* c_ev = app.add_subcommand("evaluate", "Model + scan log -> error report");
  c_ev->add_option("--model", ev.model, "Model archive");
  c_ev->add_option("--scan", ev.scan, "Scan log");
  c_ev->add_option("--report", ev.report, "Key-value report file to write");

  SimulateArgs si;
  auto* c_si = app.add_subcommand("simulate", "Phantom + trajectory config -> synthetic scan and ground truth");
  c_si->add_option("-o,--output", si.output, "Scan log to write")->required();
  c_si->add_option("--truth", si.truth, "Ground-truth model archive to write");
  c_si->add_option("--model", si.model, "Plain Laplace model archive of the phantom to write");
  c_si->add_option("--surface", si.surface, "Phantom surface file to write");
  c_si->add_option("--cloud", si.cloud, "Phantom surface point cloud (xyz) to write");
  c_si->add_option("--kind", si.kind, "Trajectory kind: press or sweep (overrides config)");

  HeatmapArgs he;
  auto* c_he = app.add_subcommand("heatmap", "Model + slice -> PGM image of |p|");
  c_he->add_option("--model", he.model, "Model archive");
  c_he->add_option("--baseline", he.baseline, "Subtract this model's field first");
  c_he->add_option("--slice", he.slice, "Axial slice index (default: middle)");
  c_he->add_option("-o,--output", he.output, "PGM image to write")->required();
  c_he->add_option("--matrix", he.matrix, "Signed value matrix (text) to write");

  ExperimentArgs xp;
  auto* c_xp = app.add_subcommand("experiment", "Run the phantom suite and print the four error tables");
  c_xp->add_option("-o,--output", xp.output, "Also write the tables to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageExit;
  }

  try {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
    if (g.seed) cfg.seed = *g.seed;
    if (g.print_config) {
      std::cout << to_json(cfg).dump(2) << "\n";
      return 0;
    }
    const Log log(g.verbosity);
    if (c_ex->parsed()) return run_extract(cfg, ex, log);
    if (c_bu->parsed()) return run_build(cfg, bu, log);
    if (c_fi->parsed()) return run_fit(cfg, fi, log);
    if (c_re->parsed()) return run_render(cfg, re, log);
    if (c_ev->parsed()) return run_evaluate(cfg, ev, log);
    if (c_si->parsed()) return run_simulate(cfg, si, log);
    if (c_he->parsed()) return run_heatmap(cfg, he, log);
    if (c_xp->parsed()) return run_experiment(cfg, xp, log);
    std::cerr << app.help() << "error: usage: a subcommand is required\n";
    return kUsageExit;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return kFailureExit;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return kFailureExit;
  }
}
