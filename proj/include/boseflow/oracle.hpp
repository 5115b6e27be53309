#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "fock.hpp"

namespace boseflow {

inline constexpr Eigen::Index dense_fallback_dimension = 2000;

struct EigenResult {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;  // columns, unit norm
  std::vector<double> residuals;
  int iterations = 0;
  bool iterative = false;
};

struct OracleOptions {
  double tol = 1e-10;
  int max_restarts = 200;
  int krylov = 80;
  std::uint64_t seed = 12345;
  bool force_iterative = false;
};

// largest-magnitude component made positive
inline void fix_phase(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index k = 0;
  v.cwiseAbs().maxCoeff(&k);
  if (v[k] < 0) v = -v;
}

inline double residual(const SparseOp& A, double lambda, const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (n == 0) throw std::invalid_argument("residual of zero vector");
  return (A * v - lambda * v).norm() / n;
}

inline double overlap(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0 || nv == 0) throw std::invalid_argument("overlap of zero vector");
  return std::abs(u.dot(v)) / (nu * nv);
}

namespace detail {

inline EigenResult dense_lowest(const SparseOp& A, int k) {
  Eigen::MatrixXd D(A);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(D);
  if (es.info() != Eigen::Success) throw std::runtime_error("dense eigensolver failed");
  EigenResult r;
  r.values = es.eigenvalues().head(k);
  r.vectors = es.eigenvectors().leftCols(k);
  for (int c = 0; c < k; ++c) {
    fix_phase(r.vectors.col(c));
    r.residuals.push_back(residual(A, r.values[c], r.vectors.col(c)));
  }
  return r;
}

inline void orthogonalize(Eigen::VectorXd& v, const Eigen::MatrixXd& Q, Eigen::Index cols) {
  for (int pass = 0; pass < 2; ++pass)
    for (Eigen::Index c = 0; c < cols; ++c) v -= Q.col(c).dot(v) * Q.col(c);
}

// Lowest eigenpair of A on the orthogonal complement of `locked`, by Lanczos with
// full reorthogonalization and explicit restart from the best Ritz vector.
inline bool lanczos_one(const SparseOp& A, const Eigen::MatrixXd& locked, Eigen::VectorXd start,
                        const OracleOptions& opt, double& lambda, Eigen::VectorXd& vec, int& iters) {
  const Eigen::Index n = A.rows();
  const Eigen::Index m = std::min<Eigen::Index>(opt.krylov, n - locked.cols());
  Eigen::MatrixXd Q(n, m);
  for (int restart = 0; restart < opt.max_restarts; ++restart) {
    orthogonalize(start, locked, locked.cols());
    double nrm = start.norm();
    if (nrm == 0) return false;
    Q.col(0) = start / nrm;
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m), beta = Eigen::VectorXd::Zero(m);
    Eigen::Index used = m;
    for (Eigen::Index j = 0; j < m; ++j) {
      Eigen::VectorXd w = A * Q.col(j);
      ++iters;
      alpha[j] = Q.col(j).dot(w);
      orthogonalize(w, locked, locked.cols());
      orthogonalize(w, Q, j + 1);
      if (j + 1 < m) {
        beta[j] = w.norm();
        if (beta[j] < 1e-14 * std::max(1.0, std::abs(alpha[j]))) {
          used = j + 1;
          break;
        }
        Q.col(j + 1) = w / beta[j];
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    Eigen::VectorXd d = alpha.head(used);
    Eigen::VectorXd e = beta.head(std::max<Eigen::Index>(used - 1, 0));
    if (used == 1) {
      lambda = d[0];
      vec = Q.col(0);
    } else {
      es.computeFromTridiagonal(d, e);
      lambda = es.eigenvalues()[0];
      vec = Q.leftCols(used) * es.eigenvectors().col(0);
    }
    vec.normalize();
    const double res = (A * vec - lambda * vec).norm();
    if (res <= opt.tol * std::max(1.0, std::abs(lambda)) || used < m) return true;
    start = vec;
  }
  return false;
}

}  // namespace detail

inline EigenResult lanczos_lowest(const SparseOp& A, int k, const OracleOptions& opt = {}) {
  const Eigen::Index n = A.rows();
  EigenResult r;
  r.iterative = true;
  Eigen::MatrixXd locked(n, 0);
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> g;
  std::vector<double> vals;
  for (int t = 0; t < k; ++t) {
    Eigen::VectorXd start(n);
    for (Eigen::Index q = 0; q < n; ++q) start[q] = g(rng);
    double lambda = 0;
    Eigen::VectorXd v;
    if (!detail::lanczos_one(A, locked, start, opt, lambda, v, r.iterations))
      throw std::runtime_error("Lanczos did not converge for eigenpair " + std::to_string(t));
    locked.conservativeResize(n, locked.cols() + 1);
    locked.col(locked.cols() - 1) = v;
    vals.push_back(lambda);
  }
  // order the locked pairs and refine by Rayleigh-Ritz on their span
  Eigen::MatrixXd small = locked.transpose() * (A * locked);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (small + small.transpose()));
  r.values = es.eigenvalues();
  r.vectors = locked * es.eigenvectors();
  for (int c = 0; c < k; ++c) {
    r.vectors.col(c).normalize();
    fix_phase(r.vectors.col(c));
    r.residuals.push_back(residual(A, r.values[c], r.vectors.col(c)));
  }
  return r;
}

inline EigenResult lowest_eigenpairs(const SparseOp& A, int k = 1, const OracleOptions& opt = {}) {
  if (A.rows() != A.cols()) throw std::invalid_argument("operator must be square");
  if (k < 1 || k > A.rows()) throw std::invalid_argument("requested eigenpair count out of range");
  if (max_asymmetry(A) > 1e-12 * std::max(1.0, max_abs(A))) throw std::invalid_argument("operator is not symmetric");
  if (!opt.force_iterative && A.rows() < dense_fallback_dimension) return detail::dense_lowest(A, k);
  return lanczos_lowest(A, k, opt);
}

struct PsdReport {
  double min_eigenvalue = 0;
  double slack = 0;
  bool pass = false;
};

inline PsdReport verify_psd(const SparseOp& A, double slack = 1e-10, const OracleOptions& opt = {}) {
  PsdReport r;
  r.slack = slack;
  r.min_eigenvalue = lowest_eigenpairs(A, 1, opt).values[0];
  r.pass = r.min_eigenvalue >= -slack;
  return r;
}

struct QuadraticControlFit {
  double c1 = 0, c2 = 0;
  PsdReport check;
};

// (H)^2 >= C1 Np^2 - C2: for each C1 on the grid the smallest C2 is -min eig(H^2 - C1 Np^2);
// keep the grid point with the best ratio C2/C1, pad C2 by `margin`, then verify
inline QuadraticControlFit fit_quadratic_control(const SparseOp& H, const SparseOp& n_plus,
                                                 const std::vector<double>& grid = {0.05, 0.1, 0.25, 0.5, 1.0},
                                                 double margin = 1e-8) {
  SparseOp H2 = H * H;
  SparseOp N2 = n_plus * n_plus;
  QuadraticControlFit best;
  double best_ratio = std::numeric_limits<double>::infinity();
  for (double c1 : grid) {
    SparseOp M = H2 - c1 * N2;
    const double lam = lowest_eigenpairs(M, 1).values[0];
    const double c2 = std::max(0.0, -lam);
    if (c2 / c1 < best_ratio) {
      best_ratio = c2 / c1;
      best.c1 = c1;
      best.c2 = c2 + margin;
    }
  }
  SparseOp shifted = H2 - best.c1 * N2;
  SparseOp id(H.rows(), H.cols());
  id.setIdentity();
  shifted += best.c2 * id;
  best.check = verify_psd(shifted, 1e-10);
  return best;
}

}  // namespace boseflow
