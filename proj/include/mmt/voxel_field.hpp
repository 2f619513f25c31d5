#pragma once

// Cylindrical voxel grid and the finite-difference Laplace model of the
// patient interior.
//
// Dirichlet conditions: inner ring (positive), outer ring (negative), one
// zero-valued surface voxel per (theta, z) column, and both z caps fixed to
// the solution of the polar (2D) problem with the same radial conditions.
//
// Every interior row, multiplied by its voxel-center radius, becomes the
// conservative form (r_{i+1/2}(p_{i+1} - p_i) - r_{i-1/2}(p_i - p_{i-1}))/dr^2
// + ..., which is symmetric. Eliminating the Dirichlet unknowns therefore
// leaves an SPD system; L^{-1} and L^{-T} are both applied through a single
// sparse Cholesky factorization of it (CHOLMOD supernodal).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/CholmodSupport>
#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCore>

#include "mmt/error.hpp"
#include "mmt/geometry.hpp"
#include "mmt/surface_extraction.hpp"

namespace mmt {

using Index = Eigen::Index;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, Index>;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, Index>;
using Triplet = Eigen::Triplet<double, Index>;

struct VoxelIndex {
  int ir = 0;
  int itheta = 0;
  int iz = 0;

  friend bool operator==(const VoxelIndex&, const VoxelIndex&) = default;
};

/// Voxel (ir, itheta, iz) spans [r0 + ir*dr, r0 + (ir+1)*dr) and likewise in
/// theta and z; flat index ir + nr*(itheta + ntheta*iz).
struct CylindricalGrid {
  double r0 = 0.02;
  double dr = 0.005;
  int nr = 3;
  double dtheta = kTwoPi / 90;
  int ntheta = 90;
  double z0 = 0.0;
  double dz = 0.005;
  int nz = 3;

  Index size() const { return static_cast<Index>(nr) * ntheta * nz; }
  Index columns() const { return static_cast<Index>(ntheta) * nz; }

  double r_center(int ir) const { return r0 + (ir + 0.5) * dr; }
  double theta_center(int it) const { return (it + 0.5) * dtheta; }
  double z_center(int iz) const { return z0 + (iz + 0.5) * dz; }
  double r_outer() const { return r0 + nr * dr; }
  double z_end() const { return z0 + nz * dz; }

  Index flat(int ir, int it, int iz) const {
    return ir + static_cast<Index>(nr) * (it + static_cast<Index>(ntheta) * iz);
  }
  Index flat(const VoxelIndex& v) const { return flat(v.ir, v.itheta, v.iz); }
  Index column(int it, int iz) const { return it + static_cast<Index>(ntheta) * iz; }

  VoxelIndex unflatten(Index v) const {
    VoxelIndex out;
    out.ir = static_cast<int>(v % nr);
    const Index rest = v / nr;
    out.itheta = static_cast<int>(rest % ntheta);
    out.iz = static_cast<int>(rest / ntheta);
    return out;
  }

  void validate() const {
    require(std::isfinite(r0) && r0 > 0.0, ErrorKind::configuration, "grid: r0 must be > 0");
    require(dr > 0.0 && dtheta > 0.0 && dz > 0.0, ErrorKind::configuration, "grid: steps must be > 0");
    require(nr >= 3 && ntheta >= 3 && nz >= 3, ErrorKind::configuration, "grid: nr, ntheta, nz must be >= 3");
    require(std::abs(ntheta * dtheta - kTwoPi) <= 1e-9, ErrorKind::configuration,
            "grid: ntheta * dtheta must equal 2*pi");
  }
};

/// Flat lookup: floor division in r and z, theta wrapped. nullopt outside the span.
inline std::optional<VoxelIndex> voxel_of(const CylindricalPoint& p, const CylindricalGrid& g) {
  const double fr = std::floor((p.r - g.r0) / g.dr);
  const double fz = std::floor((p.z - g.z0) / g.dz);
  if (!(fr >= 0.0 && fr < g.nr && fz >= 0.0 && fz < g.nz)) return std::nullopt;
  int it = static_cast<int>(std::floor(wrap_angle(p.theta) / g.dtheta));
  if (it >= g.ntheta) it = g.ntheta - 1;
  return VoxelIndex{static_cast<int>(fr), it, static_cast<int>(fz)};
}

struct GridResolution {
  double dr = 0.005;
  double dtheta = kTwoPi / 90;
  double dz = 0.005;
  int margin_voxels = 2;     // radial voxels kept beyond the largest surface radius
  double inner_fraction = 0.2;  // r0 as a fraction of the smallest surface radius
};

inline CylindricalGrid build_grid(const SurfaceModel& surface, const GridResolution& res) {
  require(res.dr > 0.0 && res.dtheta > 0.0 && res.dz > 0.0, ErrorKind::configuration,
          "build_grid: resolution must be positive");
  require(res.margin_voxels >= 1, ErrorKind::configuration, "build_grid: need at least one margin voxel");
  require(res.inner_fraction > 0.0 && res.inner_fraction < 1.0, ErrorKind::configuration,
          "build_grid: inner_fraction must lie in (0, 1)");
  const double rmin = surface.min_radius();
  const double rmax = surface.max_radius();

  CylindricalGrid g;
  g.r0 = res.inner_fraction * rmin;
  g.dr = res.dr;
  require(g.r0 + 1.5 * g.dr < rmin, ErrorKind::configuration,
          "build_grid: radial step too coarse for the smallest surface radius");
  g.nr = static_cast<int>(std::ceil((rmax - g.r0) / g.dr)) + res.margin_voxels;

  g.ntheta = static_cast<int>(std::lround(kTwoPi / res.dtheta));
  require(g.ntheta >= 3, ErrorKind::configuration, "build_grid: angular step too coarse");
  g.dtheta = kTwoPi / g.ntheta;

  const double extent = surface.z_back() - surface.z_front();
  const int steps = static_cast<int>(std::lround(extent / res.dz));
  require(steps >= 2, ErrorKind::configuration, "build_grid: axial step too coarse for the surface length");
  g.nz = steps + 1;
  g.dz = extent / steps;  // cap voxel centers land on the surface ends
  g.z0 = surface.z_front() - 0.5 * g.dz;
  g.validate();
  return g;
}

/// One zero-potential voxel per (theta, z) column, by radial index.
struct SurfaceShell {
  std::vector<int> radial_index;  // size ntheta*nz, or empty for "no surface condition"

  bool empty() const { return radial_index.empty(); }
  int at(const CylindricalGrid& g, int it, int iz) const {
    return radial_index[static_cast<std::size_t>(g.column(it, iz))];
  }
};

/// Index of the voxel center nearest to radius r; exact ties go to the smaller index.
inline int nearest_radial_index(double r, const CylindricalGrid& g) {
  const double t = (r - g.r0) / g.dr - 0.5;
  return static_cast<int>(std::ceil(t - 0.5));
}

inline SurfaceShell surface_boundary_voxels(const SurfaceModel& surface, const CylindricalGrid& g) {
  g.validate();
  SurfaceShell shell;
  shell.radial_index.resize(static_cast<std::size_t>(g.columns()));
  for (int iz = 0; iz < g.nz; ++iz) {
    for (int it = 0; it < g.ntheta; ++it) {
      const double r = surface.radius_at(g.theta_center(it), g.z_center(iz));
      require(r > g.r0 && r < g.r_outer(), ErrorKind::configuration,
              "surface radius " + std::to_string(r) + " lies outside the grid radial span");
      const int ir = nearest_radial_index(r, g);
      require(ir >= 1 && ir <= g.nr - 2, ErrorKind::configuration,
              "surface voxel collides with the inner or outer ring; refine dr or widen the margin");
      shell.radial_index[static_cast<std::size_t>(g.column(it, iz))] = ir;
    }
  }
  return shell;
}

struct BoundarySpec {
  double inner_value = 1.0;
  double outer_value = -1.0;
  static constexpr double surface_value = 0.0;

  /// The sign-structured model needs opposite signs; the raw solvers accept any finite values.
  void require_opposite_signs() const {
    require(std::isfinite(inner_value) && std::isfinite(outer_value), ErrorKind::configuration,
            "boundary values must be finite");
    require(inner_value * outer_value < 0.0, ErrorKind::configuration,
            "inner and outer boundary values must have opposite signs");
  }
};

enum class RowScaling {
  unit_diagonal,  // interior rows divided by minus their center coefficient
  raw,            // plain finite-difference coefficients (1/m^2)
  cell_volume,    // every row integrated over its voxel, r dr dtheta dz (units of m)
};

struct LaplaceSystem {
  CylindricalGrid grid;
  SparseRowMatrix L;
  Eigen::VectorXd b;
  std::vector<std::uint8_t> dirichlet;  // 1 where the row is a fixed row d * p_v = d * value
  Eigen::VectorXd symmetrizer;          // diag(symmetrizer) * L restricted to free rows/cols is symmetric
  RowScaling scaling = RowScaling::cell_volume;

  Index size() const { return L.rows(); }
};

namespace detail {

/// Assembles the stencil over g (2D polar when with_z is false: index ir + nr*it).
/// fixed[v] holds the Dirichlet value or NaN for a free voxel.
inline LaplaceSystem assemble_stencil(const CylindricalGrid& g, bool with_z, const std::vector<double>& fixed,
                                      RowScaling scaling) {
  const int nz = with_z ? g.nz : 1;
  const Index V = static_cast<Index>(g.nr) * g.ntheta * nz;
  LaplaceSystem sys;
  sys.grid = g;
  sys.scaling = scaling;
  sys.b = Eigen::VectorXd::Zero(V);
  sys.dirichlet.assign(static_cast<std::size_t>(V), 0);
  sys.symmetrizer = Eigen::VectorXd::Ones(V);

  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(V) * (with_z ? 7 : 5));
  const double inv_dr2 = 1.0 / (g.dr * g.dr);
  const double inv_dz2 = with_z ? 1.0 / (g.dz * g.dz) : 0.0;
  const double inv_dt2 = 1.0 / (g.dtheta * g.dtheta);

  for (int iz = 0; iz < nz; ++iz) {
    for (int it = 0; it < g.ntheta; ++it) {
      for (int ir = 0; ir < g.nr; ++ir) {
        const Index v = g.flat(ir, it, iz);
        const double rc = g.r_center(ir);
        const double c_t = inv_dt2 / (rc * rc);
        const double center = -(2.0 * inv_dr2 + 2.0 * c_t + 2.0 * inv_dz2);
        const double volume = rc * g.dr * g.dtheta * (with_z ? g.dz : 1.0);
        const double fv = fixed[static_cast<std::size_t>(v)];
        if (!std::isnan(fv)) {
          // Fixed rows carry the weight an interior row would have at this voxel.
          const double d = scaling == RowScaling::cell_volume ? -center * volume : 1.0;
          trips.emplace_back(v, v, d);
          sys.b(v) = d * fv;
          sys.dirichlet[static_cast<std::size_t>(v)] = 1;
          continue;
        }
        require(ir > 0 && ir < g.nr - 1 && (!with_z || (iz > 0 && iz < nz - 1)), ErrorKind::configuration,
                "free voxel on the grid edge; edges must carry Dirichlet values");
        const double c_rp = inv_dr2 + 1.0 / (2.0 * rc * g.dr);
        const double c_rm = inv_dr2 - 1.0 / (2.0 * rc * g.dr);
        const double s = scaling == RowScaling::unit_diagonal ? -1.0 / center
                         : scaling == RowScaling::cell_volume ? volume
                                                              : 1.0;
        const int itp = (it + 1) % g.ntheta;
        const int itm = (it + g.ntheta - 1) % g.ntheta;
        trips.emplace_back(v, v, s * center);
        trips.emplace_back(v, g.flat(ir + 1, it, iz), s * c_rp);
        trips.emplace_back(v, g.flat(ir - 1, it, iz), s * c_rm);
        trips.emplace_back(v, g.flat(ir, itp, iz), s * c_t);
        trips.emplace_back(v, g.flat(ir, itm, iz), s * c_t);
        if (with_z) {
          trips.emplace_back(v, g.flat(ir, it, iz + 1), s * inv_dz2);
          trips.emplace_back(v, g.flat(ir, it, iz - 1), s * inv_dz2);
        }
        sys.symmetrizer(v) = rc / s;
      }
    }
  }
  sys.L.resize(V, V);
  sys.L.setFromTriplets(trips.begin(), trips.end());
  return sys;
}

}  // namespace detail

enum class SolveMethod { automatic, direct, iterative };

struct SolverOptions {
  SolveMethod method = SolveMethod::automatic;
  double tolerance = 1e-8;           // relative residual
  int max_iterations = 5000;         // iterative path only
  Index direct_limit = 400000;       // automatic: direct below this many free unknowns
};

/// Applies L^{-1}, L^{-T} and (L^T L)^{-1} for a Dirichlet-structured system.
class LaplaceFactorization {
 public:
  explicit LaplaceFactorization(const LaplaceSystem& sys, const SolverOptions& opts = {})
      : V_(sys.size()), options_(opts) {
    local_.assign(static_cast<std::size_t>(V_), -1);
    fixed_diag_ = Eigen::VectorXd::Ones(V_);
    for (Index v = 0; v < V_; ++v) {
      if (!sys.dirichlet[static_cast<std::size_t>(v)]) {
        local_[static_cast<std::size_t>(v)] = static_cast<Index>(free_.size());
        free_.push_back(v);
      } else {
        fixed_diag_(v) = sys.L.coeff(v, v);
        require(fixed_diag_(v) != 0.0, ErrorKind::solver, "fixed row with a zero diagonal");
      }
    }
    const Index n = static_cast<Index>(free_.size());
    weight_.resize(n);
    std::vector<Triplet> a_trips;
    std::vector<Triplet> c_trips;
    for (Index i = 0; i < n; ++i) {
      const Index v = free_[static_cast<std::size_t>(i)];
      const double w = sys.symmetrizer(v);
      weight_(i) = w;
      for (SparseRowMatrix::InnerIterator it(sys.L, v); it; ++it) {
        const Index lc = local_[static_cast<std::size_t>(it.col())];
        if (lc >= 0) {
          a_trips.emplace_back(i, lc, -w * it.value());
        } else {
          c_trips.emplace_back(i, it.col(), it.value());
        }
      }
    }
    A_.resize(n, n);
    A_.setFromTriplets(a_trips.begin(), a_trips.end());
    coupling_.resize(n, V_);
    coupling_.setFromTriplets(c_trips.begin(), c_trips.end());

    if (n > 0) {
      const SparseMatrix asym = A_ - SparseMatrix(A_.transpose());
      const double scale = std::max(1.0, A_.coeffs().cwiseAbs().maxCoeff());
      const double skew = asym.nonZeros() ? asym.coeffs().cwiseAbs().maxCoeff() : 0.0;
      require(skew <= 1e-10 * scale, ErrorKind::solver,
              "Laplace system is not symmetrizable; unexpected stencil structure");
    }

    iterative_ = opts.method == SolveMethod::iterative ||
                 (opts.method == SolveMethod::automatic && n > opts.direct_limit);
    if (n == 0) return;
    if (iterative_) {
      cg_ = std::make_unique<Cg>();
      cg_->setTolerance(std::min(opts.tolerance * 1e-2, 1e-10));
      cg_->setMaxIterations(opts.max_iterations);
      cg_->compute(A_);
      require(cg_->info() == Eigen::Success, ErrorKind::solver, "incomplete Cholesky preconditioner failed");
    } else {
      llt_ = std::make_unique<Llt>(A_);
      require(llt_->info() == Eigen::Success, ErrorKind::solver,
              "reduced Laplace system is not positive definite (Cholesky factorization failed)");
    }
  }

  Index size() const { return V_; }
  Index free_count() const { return static_cast<Index>(free_.size()); }
  bool iterative() const { return iterative_; }

  /// X = L^{-1} Y, column by column.
  Eigen::MatrixXd solve_many(const Eigen::MatrixXd& Y) const {
    require(Y.rows() == V_, ErrorKind::dimension, "LaplaceFactorization::solve: size mismatch");
    Eigen::MatrixXd X = fixed_diag_.cwiseInverse().asDiagonal() * Y;
    for (Index v : free_) X.row(v).setZero();
    const Eigen::MatrixXd fixed_part = coupling_ * X;
    Eigen::MatrixXd rhs(free_count(), Y.cols());
    for (Index i = 0; i < free_count(); ++i) {
      rhs.row(i) = weight_(i) * (Y.row(free_[static_cast<std::size_t>(i)]) - fixed_part.row(i));
    }
    const Eigen::MatrixXd xi = -inner_solve(rhs);
    for (Index i = 0; i < free_count(); ++i) X.row(free_[static_cast<std::size_t>(i)]) = xi.row(i);
    return X;
  }
  Eigen::VectorXd solve(const Eigen::VectorXd& y) const { return solve_many(y).col(0); }

  /// X = L^{-T} Y
  Eigen::MatrixXd solve_transpose_many(const Eigen::MatrixXd& Y) const {
    require(Y.rows() == V_, ErrorKind::dimension, "LaplaceFactorization::solve_transpose: size mismatch");
    Eigen::MatrixXd yi(free_count(), Y.cols());
    for (Index i = 0; i < free_count(); ++i) yi.row(i) = Y.row(free_[static_cast<std::size_t>(i)]);
    const Eigen::MatrixXd xi = -(weight_.asDiagonal() * inner_solve(yi));
    Eigen::MatrixXd X = fixed_diag_.cwiseInverse().asDiagonal() * (Y - coupling_.transpose() * xi);
    for (Index i = 0; i < free_count(); ++i) X.row(free_[static_cast<std::size_t>(i)]) = xi.row(i);
    return X;
  }
  Eigen::VectorXd solve_transpose(const Eigen::VectorXd& y) const { return solve_transpose_many(y).col(0); }

  /// X = (L^T L)^{-1} Y
  Eigen::MatrixXd solve_normal_many(const Eigen::MatrixXd& Y) const { return solve_many(solve_transpose_many(Y)); }
  Eigen::VectorXd solve_normal(const Eigen::VectorXd& y) const { return solve(solve_transpose(y)); }

  int last_iterations() const { return last_iterations_; }

 private:
  using Llt = Eigen::CholmodSupernodalLLT<SparseMatrix, Eigen::Lower>;
  using Cg = Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper,
                                      Eigen::IncompleteCholesky<double, Eigen::Lower, Eigen::AMDOrdering<Index>>>;

  Eigen::MatrixXd inner_solve(const Eigen::MatrixXd& rhs) const {
    if (free_count() == 0) return rhs;
    if (!iterative_) return llt_->solve(rhs);
    Eigen::MatrixXd x(rhs.rows(), rhs.cols());
    for (Index c = 0; c < rhs.cols(); ++c) {
      x.col(c) = cg_->solve(rhs.col(c));
      last_iterations_ = static_cast<int>(cg_->iterations());
      if (cg_->info() != Eigen::Success) {
        fail(ErrorKind::solver, "conjugate gradient did not converge in " + std::to_string(cg_->iterations()) +
                                    " iterations (relative residual " + std::to_string(cg_->error()) + ")");
      }
    }
    return x;
  }

  Index V_ = 0;
  SolverOptions options_;
  std::vector<Index> free_;
  std::vector<Index> local_;
  Eigen::VectorXd fixed_diag_;  // diagonal of the fixed rows, 1 on free rows
  Eigen::VectorXd weight_;
  SparseMatrix A_;
  SparseRowMatrix coupling_;
  bool iterative_ = false;
  std::unique_ptr<Llt> llt_;
  std::unique_ptr<Cg> cg_;
  mutable int last_iterations_ = 0;
};

struct PotentialField {
  Eigen::VectorXd values;

  Index size() const { return values.size(); }
  double operator()(Index v) const { return values(v); }
};

/// Normwise backward error ||Lp - b|| / (||L|| ||p|| + ||b||), infinity norms.
/// Invariant under row scaling of the whole system.
inline double relative_residual(const SparseRowMatrix& L, const Eigen::VectorXd& p, const Eigen::VectorXd& b) {
  double norm_l = 0.0;
  for (Index r = 0; r < L.outerSize(); ++r) {
    double row = 0.0;
    for (SparseRowMatrix::InnerIterator it(L, r); it; ++it) row += std::abs(it.value());
    norm_l = std::max(norm_l, row);
  }
  const double scale = norm_l * p.cwiseAbs().maxCoeff() + b.cwiseAbs().maxCoeff();
  return (L * p - b).cwiseAbs().maxCoeff() / std::max(scale, std::numeric_limits<double>::min());
}

inline PotentialField solve_laplace(const LaplaceSystem& sys, const SolverOptions& opts = {}) {
  const LaplaceFactorization fac(sys, opts);
  PotentialField field{fac.solve(sys.b)};
  const double res = relative_residual(sys.L, field.values, sys.b);
  require(field.values.allFinite() && res <= opts.tolerance, ErrorKind::solver,
          "Laplace solve residual " + std::to_string(res) + " exceeds tolerance " + std::to_string(opts.tolerance));
  return field;
}

/// 2D polar solve on the (r, theta) sub-grid. surface_ir, when non-empty,
/// holds one zero-valued radial index per angular bin.
inline Eigen::VectorXd solve_polar_slice(const CylindricalGrid& g, const BoundarySpec& boundary,
                                         std::span<const int> surface_ir = {}) {
  g.validate();
  require(std::isfinite(boundary.inner_value) && std::isfinite(boundary.outer_value), ErrorKind::configuration,
          "boundary values must be finite");
  require(surface_ir.empty() || surface_ir.size() == static_cast<std::size_t>(g.ntheta), ErrorKind::dimension,
          "solve_polar_slice: need one surface index per angular bin");
  const Index n = static_cast<Index>(g.nr) * g.ntheta;
  std::vector<double> fixed(static_cast<std::size_t>(n), std::numeric_limits<double>::quiet_NaN());
  for (int it = 0; it < g.ntheta; ++it) {
    fixed[static_cast<std::size_t>(g.flat(0, it, 0))] = boundary.inner_value;
    fixed[static_cast<std::size_t>(g.flat(g.nr - 1, it, 0))] = boundary.outer_value;
    if (!surface_ir.empty()) fixed[static_cast<std::size_t>(g.flat(surface_ir[it], it, 0))] = BoundarySpec::surface_value;
  }
  const LaplaceSystem sys = detail::assemble_stencil(g, false, fixed, RowScaling::raw);
  return solve_laplace(sys, {SolveMethod::direct, 1e-10}).values;
}

inline LaplaceSystem assemble_laplace(const CylindricalGrid& g, const SurfaceShell& shell, const BoundarySpec& boundary,
                                      RowScaling scaling = RowScaling::cell_volume) {
  g.validate();
  require(shell.empty() || shell.radial_index.size() == static_cast<std::size_t>(g.columns()), ErrorKind::dimension,
          "assemble_laplace: surface shell does not match the grid");
  const Index V = g.size();
  std::vector<double> fixed(static_cast<std::size_t>(V), std::numeric_limits<double>::quiet_NaN());

  auto cap = [&](int iz) {
    std::vector<int> ir_cap;
    if (!shell.empty()) {
      ir_cap.resize(static_cast<std::size_t>(g.ntheta));
      for (int it = 0; it < g.ntheta; ++it) ir_cap[it] = shell.at(g, it, iz);
    }
    const Eigen::VectorXd polar = solve_polar_slice(g, boundary, ir_cap);
    for (int it = 0; it < g.ntheta; ++it) {
      for (int ir = 0; ir < g.nr; ++ir) fixed[static_cast<std::size_t>(g.flat(ir, it, iz))] = polar(g.flat(ir, it, 0));
    }
  };
  cap(0);
  cap(g.nz - 1);

  for (int iz = 1; iz < g.nz - 1; ++iz) {
    for (int it = 0; it < g.ntheta; ++it) {
      fixed[static_cast<std::size_t>(g.flat(0, it, iz))] = boundary.inner_value;
      fixed[static_cast<std::size_t>(g.flat(g.nr - 1, it, iz))] = boundary.outer_value;
      if (!shell.empty()) fixed[static_cast<std::size_t>(g.flat(shell.at(g, it, iz), it, iz))] = BoundarySpec::surface_value;
    }
  }
  return detail::assemble_stencil(g, true, fixed, scaling);
}

inline bool is_inside(const PotentialField& field, Index voxel) { return field.values(voxel) > 0.0; }

/// Everything needed to render against and refit a patient model.
struct FieldModel {
  SurfaceModel surface;
  CylindricalGrid grid;
  BoundarySpec boundary;
  RowScaling scaling = RowScaling::cell_volume;
  PotentialField field;

  // Fit metadata; lambda and measurement count are zero for a plain Laplace model.
  bool fitted = false;
  double lambda = 0.0;
  std::uint64_t measurement_count = 0;
  std::string training_digest;

  SurfaceShell shell() const { return surface_boundary_voxels(surface, grid); }
  LaplaceSystem laplace_system() const { return assemble_laplace(grid, shell(), boundary, scaling); }
};

inline FieldModel build_field_model(const SurfaceModel& surface, const GridResolution& res,
                                    const BoundarySpec& boundary, const SolverOptions& opts = {}) {
  boundary.require_opposite_signs();
  FieldModel m;
  m.surface = surface;
  m.grid = build_grid(surface, res);
  m.boundary = boundary;
  m.field = solve_laplace(m.laplace_system(), opts);
  return m;
}

}  // namespace mmt
