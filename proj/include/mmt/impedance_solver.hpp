#pragma once

// Measurement-augmented potential field:
//
//   min_p |L p - b|^2 + lambda |N p - f|^2 + lambda |W p - tau|^2
//
// whose normal equations are Q p = d with Q = L^T L + lambda (N^T N + W^T W)
// and d = L^T b + lambda (N^T f + W^T tau).
//
// Three routes to the minimizer:
//  * solve_augmented: sparse LDL^T of the explicit Q (works for any L).
//  * BatchFitter: low-rank correction of the Laplace solution restricted to
//    the voxels touched by the probe, reusing the Laplace factorization.
//  * SolverState: recursive matrix-inversion-lemma updates, one rank <= 6
//    block per timestep.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "mmt/error.hpp"
#include "mmt/metrics.hpp"
#include "mmt/pointshell_render.hpp"
#include "mmt/voxel_field.hpp"

namespace mmt {

/// Pipeline default regularization weight.
inline constexpr double kDefaultLambda = 1e-4;

struct AugmentedSystem {
  SparseMatrix Q;
  Eigen::VectorXd d;
  double lambda = 0.0;

  Index size() const { return Q.rows(); }
};

inline AugmentedSystem assemble_augmented(const SparseRowMatrix& L, const Eigen::VectorXd& b, const SparseRowMatrix& N,
                                          const SparseRowMatrix& W, const Eigen::VectorXd& f,
                                          const Eigen::VectorXd& tau, double lambda) {
  require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::configuration, "lambda must be finite and >= 0");
  const Index V = L.cols();
  require(L.rows() == b.size(), ErrorKind::dimension, "assemble_augmented: L rows != b size");
  require(N.cols() == V && W.cols() == V, ErrorKind::dimension, "assemble_augmented: measurement rows need V columns");
  require(N.rows() == f.size() && W.rows() == tau.size(), ErrorKind::dimension,
          "assemble_augmented: measurement row count mismatch");

  const SparseMatrix Lc(L);
  const SparseMatrix Nc(N);
  const SparseMatrix Wc(W);
  AugmentedSystem sys;
  sys.lambda = lambda;
  sys.Q = SparseMatrix(Lc.transpose()) * Lc;
  sys.d = Lc.transpose() * b;
  if (lambda > 0.0 && N.rows() > 0) {
    sys.Q += lambda * (SparseMatrix(Nc.transpose()) * Nc);
    sys.d += lambda * (Nc.transpose() * f);
  }
  if (lambda > 0.0 && W.rows() > 0) {
    sys.Q += lambda * (SparseMatrix(Wc.transpose()) * Wc);
    sys.d += lambda * (Wc.transpose() * tau);
  }
  sys.Q.makeCompressed();
  return sys;
}

inline AugmentedSystem assemble_augmented(const SparseRowMatrix& L, const Eigen::VectorXd& b,
                                          const MeasurementBatch& batch, double lambda) {
  require(batch.voxels() == L.cols(), ErrorKind::dimension,
          "assemble_augmented: batch has " + std::to_string(batch.voxels()) + " columns, L has " +
              std::to_string(L.cols()));
  return assemble_augmented(L, b, batch.N(), batch.W(), batch.f(), batch.tau(), lambda);
}

struct DefinitenessCheck {
  bool positive_definite = false;
  double smallest_pivot = 0.0;
};

/// Symmetric LDL^T factorization; positive definite iff every pivot is > 0.
inline DefinitenessCheck check_positive_definite(const SparseMatrix& Q) {
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(Q);
  if (ldlt.info() != Eigen::Success) return {false, std::numeric_limits<double>::quiet_NaN()};
  const double pivot = ldlt.vectorD().size() ? ldlt.vectorD().minCoeff() : 0.0;
  return {pivot > 0.0, pivot};
}

/// Direct solve of Q p = d with a few steps of iterative refinement.
inline PotentialField solve_augmented(const AugmentedSystem& sys, double tolerance = 1e-8) {
  require(sys.Q.rows() == sys.Q.cols() && sys.Q.rows() == sys.d.size(), ErrorKind::dimension,
          "solve_augmented: Q and d sizes disagree");
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(sys.Q);
  const double pivot = ldlt.info() == Eigen::Success && ldlt.vectorD().size() ? ldlt.vectorD().minCoeff()
                                                                               : std::numeric_limits<double>::quiet_NaN();
  if (!(pivot > 0.0)) {
    fail(ErrorKind::model, "augmented system is not positive definite (smallest pivot " + std::to_string(pivot) + ")");
  }
  Eigen::VectorXd p = ldlt.solve(sys.d);
  const double dn = sys.d.norm();
  for (int step = 0; step < 3; ++step) {
    const Eigen::VectorXd r = sys.d - sys.Q * p;
    if (r.norm() <= 1e-3 * tolerance * std::max(dn, std::numeric_limits<double>::min())) break;
    p += ldlt.solve(r);
  }
  const double rel = dn > 0.0 ? (sys.Q * p - sys.d).norm() / dn : (sys.Q * p).norm();
  require(p.allFinite() && rel <= tolerance, ErrorKind::solver,
          "augmented solve residual " + std::to_string(rel) + " exceeds tolerance");
  return {p};
}

/// Action of the inverse of an SPD matrix.
class SpdInverse {
 public:
  virtual ~SpdInverse() = default;
  virtual Index size() const = 0;
  virtual Eigen::VectorXd apply(const Eigen::VectorXd& x) const = 0;
};

/// (L^T L)^{-1} via the Laplace factorization.
class NormalEquationInverse final : public SpdInverse {
 public:
  explicit NormalEquationInverse(std::shared_ptr<const LaplaceFactorization> fac) : fac_(std::move(fac)) {}
  Index size() const override { return fac_->size(); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return fac_->solve_normal(x); }

 private:
  std::shared_ptr<const LaplaceFactorization> fac_;
};

/// Q^{-1} via a sparse LDL^T of an explicit Q.
class FactorizedInverse final : public SpdInverse {
 public:
  explicit FactorizedInverse(const SparseMatrix& Q) : n_(Q.rows()), ldlt_(Q) {
    const double pivot = ldlt_.info() == Eigen::Success && n_ ? ldlt_.vectorD().minCoeff() : 0.0;
    require(pivot > 0.0, ErrorKind::model,
            "system matrix is not positive definite (smallest pivot " + std::to_string(pivot) + ")");
  }
  Index size() const override { return n_; }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const override { return ldlt_.solve(x); }

 private:
  Index n_;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
};

namespace detail {

/// Observation rows of one timestep, restricted to the voxels they touch.
struct LocalRows {
  std::vector<Index> voxels;  // columns
  Eigen::MatrixXd rows;       // k x voxels.size(), all-zero rows dropped
  Eigen::VectorXd values;     // k measured values
};

inline LocalRows local_rows(std::span<const VoxelContribution> contributions, const Vec3& f, const Vec3& tau) {
  LocalRows out;
  const Index m = static_cast<Index>(contributions.size());
  Eigen::MatrixXd full(6, m);
  out.voxels.reserve(contributions.size());
  for (Index j = 0; j < m; ++j) {
    const auto& c = contributions[static_cast<std::size_t>(j)];
    out.voxels.push_back(c.voxel);
    full.block<3, 1>(0, j) = c.mean_normal;
    full.block<3, 1>(3, j) = c.mean_moment;
  }
  Eigen::Matrix<double, 6, 1> y;
  y << f, tau;
  std::vector<Index> keep;
  for (Index i = 0; i < 6; ++i) {
    if (m > 0 && full.row(i).cwiseAbs().maxCoeff() > 0.0) keep.push_back(i);
  }
  out.rows.resize(static_cast<Index>(keep.size()), m);
  out.values.resize(static_cast<Index>(keep.size()));
  for (std::size_t r = 0; r < keep.size(); ++r) {
    out.rows.row(static_cast<Index>(r)) = full.row(keep[r]);
    out.values(static_cast<Index>(r)) = y(keep[r]);
  }
  return out;
}

}  // namespace detail

/// Recursive solver state: p and d for the measurements absorbed so far, and
/// the inverse of Q kept as a base inverse plus low-rank corrections
/// Q_k^{-1} = Q_0^{-1} - sum_j Z_j S_j^{-1} Z_j^T.
class SolverState {
 public:
  /// Base Q_0 = L^T L; starts at the Laplace solution.
  static SolverState from_laplace(std::shared_ptr<const LaplaceFactorization> fac, const LaplaceSystem& sys) {
    SolverState s;
    s.base_ = std::make_shared<NormalEquationInverse>(fac);
    s.p_ = fac->solve(sys.b);
    s.d_ = sys.L.transpose() * sys.b;
    return s;
  }

  /// Base Q_0 = the system's Q; starts at its solution.
  static SolverState from_augmented(const AugmentedSystem& sys) {
    SolverState s;
    s.base_ = std::make_shared<FactorizedInverse>(sys.Q);
    s.p_ = s.base_->apply(sys.d);
    s.d_ = sys.d;
    return s;
  }

  const Eigen::VectorXd& solution() const { return p_; }
  const Eigen::VectorXd& rhs() const { return d_; }
  std::size_t measurement_count() const { return count_; }
  std::size_t rank_one_updates() const { return rank_one_updates_; }
  Index size() const { return p_.size(); }

  /// Current Q^{-1} x.
  Eigen::VectorXd apply_inverse(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = base_->apply(x);
    for (const auto& c : corrections_) {
      const Eigen::VectorXd zx = c.Z.transpose() * x;
      y -= c.Z * c.S.solve(zx);
    }
    return y;
  }

  /// Absorbs one timestep of observation rows with its measured wrench.
  void update(std::span<const VoxelContribution> contributions, const Vec3& force, const Vec3& torque, double lambda) {
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::configuration, "lambda must be finite and >= 0");
    for (const auto& c : contributions) {
      require(c.voxel >= 0 && c.voxel < size(), ErrorKind::dimension, "recursive_update: voxel index out of range");
    }
    ++count_;
    const detail::LocalRows local = detail::local_rows(contributions, force, torque);
    const Index k = local.rows.rows();
    if (k == 0 || lambda == 0.0) return;

    const Index V = size();
    Eigen::MatrixXd Z(V, k);
    for (Index i = 0; i < k; ++i) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(V);
      for (std::size_t j = 0; j < local.voxels.size(); ++j) e(local.voxels[j]) = local.rows(i, static_cast<Index>(j));
      d_ += lambda * local.values(i) * e;
      Z.col(i) = apply_inverse(e);
    }
    // C Z and C p restricted to the touched voxels.
    Eigen::MatrixXd CZ = Eigen::MatrixXd::Zero(k, k);
    Eigen::VectorXd Cp = Eigen::VectorXd::Zero(k);
    for (std::size_t j = 0; j < local.voxels.size(); ++j) {
      CZ += local.rows.col(static_cast<Index>(j)) * Z.row(local.voxels[j]);
      Cp += local.rows.col(static_cast<Index>(j)) * p_(local.voxels[j]);
    }
    Eigen::MatrixXd S = Eigen::MatrixXd::Identity(k, k) / lambda + 0.5 * (CZ + CZ.transpose());
    Eigen::LLT<Eigen::MatrixXd> llt(S);
    require(llt.info() == Eigen::Success, ErrorKind::model,
            "recursive update lost positive definiteness (numerical breakdown)");
    p_ += Z * llt.solve(local.values - Cp);
    corrections_.push_back({std::move(Z), std::move(llt)});
    rank_one_updates_ += static_cast<std::size_t>(k);
  }

  void update(const RenderResult& result, const Vec3& force, const Vec3& torque, double lambda) {
    require(result.voxel_count == size(), ErrorKind::dimension, "recursive_update: result column count mismatch");
    update(result.contributions, force, torque, lambda);
  }

 private:
  struct Correction {
    Eigen::MatrixXd Z;
    Eigen::LLT<Eigen::MatrixXd> S;
  };

  std::shared_ptr<const SpdInverse> base_;
  std::vector<Correction> corrections_;
  Eigen::VectorXd p_;
  Eigen::VectorXd d_;
  std::size_t count_ = 0;
  std::size_t rank_one_updates_ = 0;
};

inline SolverState recursive_update(SolverState state, const RenderResult& result, const Vec3& force,
                                    const Vec3& torque, double lambda) {
  state.update(result, force, torque, lambda);
  return state;
}

/// Batch fit against a fixed training batch for any lambda. Only the voxels
/// touched by the probe (U) enter the correction:
///   Q = Q0 + E M E^T,  M = lambda C_U^T C_U,  G = E^T Q0^{-1} E,
///   p = p0 + Q0^{-1} E (g - M (I + G M)^{-1} (E^T p0 + G g)),  g = lambda C_U^T y,
/// with M (I + G M)^{-1} evaluated as R^T (I + R G R^T)^{-1} R where R^T R = C_U^T C_U.
class BatchFitter {
 public:
  BatchFitter(std::shared_ptr<const LaplaceFactorization> fac, const LaplaceSystem& sys, const MeasurementBatch& batch)
      : fac_(std::move(fac)) {
    require(batch.voxels() == sys.size() && fac_->size() == sys.size(), ErrorKind::dimension,
            "BatchFitter: batch/system column mismatch");
    p0_ = fac_->solve(sys.b);

    std::unordered_map<Index, Index> local;
    for (const auto& step : batch.steps()) {
      for (const auto& c : step.contributions) {
        if (local.emplace(c.voxel, static_cast<Index>(voxels_.size())).second) voxels_.push_back(c.voxel);
      }
    }
    const Index u = static_cast<Index>(voxels_.size());
    std::vector<Eigen::RowVectorXd> rows;
    std::vector<double> values;
    for (const auto& step : batch.steps()) {
      const auto lr = detail::local_rows(step.contributions, step.force, step.torque);
      for (Index i = 0; i < lr.rows.rows(); ++i) {
        Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(u);
        for (std::size_t j = 0; j < lr.voxels.size(); ++j) row(local.at(lr.voxels[j])) = lr.rows(i, static_cast<Index>(j));
        rows.push_back(std::move(row));
        values.push_back(lr.values(i));
      }
    }
    Eigen::MatrixXd C(static_cast<Index>(rows.size()), u);
    for (std::size_t i = 0; i < rows.size(); ++i) C.row(static_cast<Index>(i)) = rows[i];
    const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Index>(values.size()));
    // Compress to u rows; the discarded part of y is orthogonal to range(C).
    if (C.rows() > u) {
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(C);
      R_ = qr.matrixQR().topRows(u).triangularView<Eigen::Upper>();
      y_ = (qr.householderQ().adjoint() * y).head(u);
    } else {
      R_ = C;
      y_ = y;
    }

    // Blocked multi-column solves; the block width bounds the V x width scratch.
    constexpr Index kBlock = 64;
    G_.resize(u, u);
    for (Index j0 = 0; j0 < u; j0 += kBlock) {
      const Index w = std::min(kBlock, u - j0);
      Eigen::MatrixXd E = Eigen::MatrixXd::Zero(sys.size(), w);
      for (Index j = 0; j < w; ++j) E(voxels_[static_cast<std::size_t>(j0 + j)], j) = 1.0;
      const Eigen::MatrixXd cols = fac_->solve_normal_many(E);
      for (Index i = 0; i < u; ++i) G_.block(i, j0, 1, w) = cols.row(voxels_[static_cast<std::size_t>(i)]);
    }
    G_ = 0.5 * (G_ + G_.transpose()).eval();
  }

  const Eigen::VectorXd& laplace_solution() const { return p0_; }
  const std::vector<Index>& touched_voxels() const { return voxels_; }

  Eigen::VectorXd solve(double lambda) const {
    require(std::isfinite(lambda) && lambda >= 0.0, ErrorKind::configuration, "lambda must be finite and >= 0");
    if (lambda == 0.0 || voxels_.empty()) return p0_;
    const Index u = static_cast<Index>(voxels_.size());
    Eigen::VectorXd ep0(u);
    for (Index i = 0; i < u; ++i) ep0(i) = p0_(voxels_[static_cast<std::size_t>(i)]);
    // z = lambda (y - R p) is the scaled residual; it stays bounded as lambda grows,
    // so nothing of size lambda is ever subtracted.
    Eigen::MatrixXd K = R_ * G_ * R_.transpose();
    K = 0.5 * (K + K.transpose()).eval();
    K.diagonal().array() += 1.0 / lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    require(llt.info() == Eigen::Success, ErrorKind::model, "batch fit capacitance matrix is not positive definite");
    const Eigen::VectorXd z = llt.solve(y_ - R_ * ep0);
    const Eigen::VectorXd h = R_.transpose() * z;
    Eigen::VectorXd eh = Eigen::VectorXd::Zero(p0_.size());
    for (Index i = 0; i < u; ++i) eh(voxels_[static_cast<std::size_t>(i)]) = h(i);
    return p0_ + fac_->solve_normal(eh);
  }

 private:
  std::shared_ptr<const LaplaceFactorization> fac_;
  Eigen::VectorXd p0_;
  std::vector<Index> voxels_;
  Eigen::MatrixXd R_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd G_;
};

inline PotentialField fit_field(const LaplaceSystem& sys, const MeasurementBatch& batch, double lambda) {
  auto fac = std::make_shared<const LaplaceFactorization>(sys);
  return {BatchFitter(fac, sys, batch).solve(lambda)};
}

/// Mean | |N_t p| - |f_t| | over the batch's timesteps.
inline double mean_magnitude_error(const MeasurementBatch& batch, const Eigen::VectorXd& p) {
  require(batch.timesteps() > 0, ErrorKind::empty_input, "mean_magnitude_error: empty batch");
  double total = 0.0;
  for (const auto& step : batch.steps()) {
    Vec3 f = Vec3::Zero();
    for (const auto& c : step.contributions) f += c.mean_normal * p(c.voxel);
    total += magnitude_error(f, step.force);
  }
  return total / static_cast<double>(batch.timesteps());
}

struct LambdaSearch {
  double best_lambda = 0.0;
  std::vector<double> lambdas;
  std::vector<double> validation_errors;
};

/// Picks the lambda with the lowest validation mean magnitude error (first wins ties).
inline LambdaSearch grid_search_lambda(std::span<const double> candidates, const LaplaceSystem& sys,
                                       const MeasurementBatch& training, const MeasurementBatch& validation) {
  require(!candidates.empty(), ErrorKind::configuration, "grid_search_lambda: no candidate lambdas");
  auto fac = std::make_shared<const LaplaceFactorization>(sys);
  const BatchFitter fitter(fac, sys, training);
  LambdaSearch out;
  double best = std::numeric_limits<double>::infinity();
  for (double lambda : candidates) {
    const double err = mean_magnitude_error(validation, fitter.solve(lambda));
    out.lambdas.push_back(lambda);
    out.validation_errors.push_back(err);
    if (err < best) {
      best = err;
      out.best_lambda = lambda;
    }
  }
  return out;
}

}  // namespace mmt
