#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fock.hpp"
#include "hamiltonians.hpp"
#include "oracle.hpp"
#include "scalar.hpp"

namespace boseflow {

enum class InverseStrategy { direct, neumann, both };

inline InverseStrategy parse_inverse_strategy(const std::string& s) {
  if (s == "direct") return InverseStrategy::direct;
  if (s == "neumann") return InverseStrategy::neumann;
  if (s == "both") return InverseStrategy::both;
  throw std::invalid_argument("unknown inverse strategy '" + s + "'");
}

struct FlowConfig {
  int ibar = 0;
  double neumann_tol = 1e-13;
  int neumann_max_terms = 10000;
  InverseStrategy inverse = InverseStrategy::direct;
  std::optional<double> z_lo, z_hi;
  double solver_tol = 1e-12;
  int max_iterations = 400;

  void validate(int N) const {
    if (ibar < 0 || ibar % 2 != 0 || ibar > N - 2) throw std::invalid_argument("ibar must be even and at most N-2");
    if (!(neumann_tol > 0)) throw std::invalid_argument("neumann_tol must be positive");
    if (neumann_max_terms < 1) throw std::invalid_argument("neumann_max_terms must be positive");
  }
};

class FlowError : public std::runtime_error {
 public:
  FlowError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// ---- generic Schur complement ------------------------------------------------

struct FeshbachMapResult {
  Eigen::MatrixXd effective;
  double complement_min_abs_eig = 0;
  double complement_condition = 1;
  // filled when a Neumann evaluation was requested
  std::optional<Eigen::MatrixXd> neumann;
  double neumann_ratio = 0;
  int neumann_terms = 0;
  bool neumann_converged = false;
};

inline std::vector<std::size_t> complement_of(std::size_t n, const std::vector<std::size_t>& keep) {
  std::vector<char> in(n, 0);
  for (auto k : keep) in.at(k) = 1;
  std::vector<std::size_t> out;
  for (std::size_t q = 0; q < n; ++q)
    if (!in[q]) out.push_back(q);
  return out;
}

inline FeshbachMapResult feshbach_map(const Eigen::MatrixXd& K, const std::vector<std::size_t>& keep, double z,
                                      InverseStrategy strategy = InverseStrategy::direct, double neumann_tol = 1e-13,
                                      int neumann_max_terms = 10000) {
  const auto n = static_cast<std::size_t>(K.rows());
  const auto rest = complement_of(n, keep);
  auto pick = [&](const std::vector<std::size_t>& r, const std::vector<std::size_t>& c) {
    Eigen::MatrixXd out(r.size(), c.size());
    for (std::size_t a = 0; a < r.size(); ++a)
      for (std::size_t b = 0; b < c.size(); ++b)
        out(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
            K(static_cast<Eigen::Index>(r[a]), static_cast<Eigen::Index>(c[b]));
    return out;
  };
  Eigen::MatrixXd Pk = pick(keep, keep);
  Pk.diagonal().array() -= z;
  FeshbachMapResult r;
  if (rest.empty()) {
    r.effective = Pk;
    return r;
  }
  Eigen::MatrixXd B = pick(rest, rest);
  B.diagonal().array() -= z;
  Eigen::MatrixXd C = pick(rest, keep);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(B);
  const Eigen::VectorXd ev = es.eigenvalues();
  Eigen::Index at = 0;
  r.complement_min_abs_eig = ev.cwiseAbs().minCoeff(&at);
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  r.complement_condition = ev.cwiseAbs().maxCoeff() / std::max(r.complement_min_abs_eig, 1e-300);
  if (r.complement_min_abs_eig <= 1e-13 * scale)
    throw std::domain_error("z hits complement spectrum (eigenvalue of complement block minus z: " +
                            std::to_string(ev[at]) + ")");
  Eigen::MatrixXd X = es.eigenvectors() * (es.eigenvalues().cwiseInverse().asDiagonal()) *
                      (es.eigenvectors().transpose() * C);
  r.effective = Pk - C.transpose() * X;

  if (strategy != InverseStrategy::direct) {
    // (D + O)^{-1} = sum_p (-D^{-1} O)^p D^{-1}
    Eigen::VectorXd d = B.diagonal();
    if ((d.array().abs() < 1e-300).any()) throw std::domain_error("zero diagonal in Neumann evaluation");
    Eigen::MatrixXd O = B;
    O.diagonal().setZero();
    Eigen::MatrixXd T = -(d.cwiseInverse().asDiagonal() * O);
    Eigen::EigenSolver<Eigen::MatrixXd> rs(T, false);
    r.neumann_ratio = rs.eigenvalues().cwiseAbs().maxCoeff();
    if (r.neumann_ratio < 1) {
      Eigen::MatrixXd term = d.cwiseInverse().asDiagonal() * C;
      Eigen::MatrixXd acc = term;
      for (r.neumann_terms = 1; r.neumann_terms < neumann_max_terms; ++r.neumann_terms) {
        term = T * term;
        acc += term;
        if (term.norm() <= neumann_tol * acc.norm()) {
          r.neumann_converged = true;
          break;
        }
      }
      r.neumann = Pk - C.transpose() * acc;
    }
  }
  return r;
}

// ---- flow geometry -----------------------------------------------------------

// Sector blocks for a flow on pair `mode`: the aggregated block {s >= N-ibar-1},
// then {N-i, N-i-1} for i = ibar+2..N-2, then the last block {s = 0}.
struct FlowSystem {
  int N = 0;
  int ibar = 0;
  Mode mode;
  std::vector<int> steps;                       // i values, last entry N
  std::vector<std::vector<std::size_t>> block;  // per step
  std::vector<Eigen::MatrixXd> H_block;         // H restricted to each block
  std::vector<Eigen::MatrixXd> coupling;        // coupling[k] = H[block k+1, block k]
  Eigen::VectorXd psi;                          // seed on the last block, unit norm
  std::size_t dim = 0;
  double psi_energy = 0;                        // <psi, H psi>

  std::size_t last() const { return steps.size() - 1; }
};

inline FlowSystem make_flow_system(const SparseOp& H, const FockBasis& b, const Mode& mode, int ibar,
                                   const Eigen::VectorXd& psi_last) {
  const int N = b.particles();
  if (ibar < 0 || ibar % 2 != 0 || ibar > N - 2) throw std::invalid_argument("ibar must be even and at most N-2");
  FlowSystem fs;
  fs.N = N;
  fs.ibar = ibar;
  fs.mode = mode;
  fs.dim = b.size();
  auto si = make_sector_index(b, mode);
  auto collect = [&](int lo, int hi) {
    std::vector<std::size_t> out;
    for (int s = std::max(lo, 0); s <= std::min(hi, N); ++s)
      out.insert(out.end(), si.by_s[static_cast<std::size_t>(s)].begin(), si.by_s[static_cast<std::size_t>(s)].end());
    std::sort(out.begin(), out.end());
    return out;
  };
  fs.steps.push_back(ibar);
  fs.block.push_back(collect(N - ibar - 1, N));
  for (int i = ibar + 2; i <= N - 2; i += 2) {
    fs.steps.push_back(i);
    fs.block.push_back(collect(N - i - 1, N - i));
  }
  fs.steps.push_back(N);
  fs.block.push_back(collect(0, 0));
  for (std::size_t k = 0; k < fs.block.size(); ++k) {
    if (fs.block[k].empty()) throw std::invalid_argument("empty sector block at step " + std::to_string(fs.steps[k]));
    fs.H_block.push_back(dense_block(H, fs.block[k], fs.block[k]));
    if (k + 1 < fs.block.size()) fs.coupling.push_back(dense_block(H, fs.block[k + 1], fs.block[k]));
  }
  // the operator must be block tridiagonal in this partition
  std::vector<int> owner(b.size(), -1);
  for (std::size_t k = 0; k < fs.block.size(); ++k)
    for (auto q : fs.block[k]) owner[q] = static_cast<int>(k);
  for (int r = 0; r < H.outerSize(); ++r)
    for (SparseOp::InnerIterator it(H, r); it; ++it)
      if (it.value() != 0 && std::abs(owner[r] - owner[it.col()]) > 1)
        throw std::invalid_argument("operator couples non-adjacent flow blocks");

  if (psi_last.size() != static_cast<Eigen::Index>(fs.block.back().size()))
    throw std::invalid_argument("seed vector does not match the last flow block");
  const double nrm = psi_last.norm();
  if (nrm == 0) throw std::invalid_argument("seed vector is zero");
  fs.psi = psi_last / nrm;
  fs.psi_energy = fs.psi.dot(fs.H_block.back() * fs.psi);
  return fs;
}

inline Eigen::VectorXd embed_last(const FlowSystem& fs, const Eigen::VectorXd& part) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fs.dim));
  scatter(v, fs.block.back(), part);
  return v;
}

// ---- the flow ----------------------------------------------------------------

struct FlowStep {
  int i = 0;
  std::size_t size = 0;
  Eigen::MatrixXd gamma;          // Gamma_{i,i}
  double condition = 0;           // of (H - z - Gamma) on the block
  double min_eig = 0;             // of (H - z - Gamma)
  double sandwich_norm = 0;       // || R^{1/2} Gamma R^{1/2} ||, R = (H_ii - z)^{-1}
  double gamma_check_norm = 0;    // || (1 - R^{1/2} Gamma R^{1/2})^{-1} ||
  double neumann_ratio = 0;
  int neumann_terms = 0;
  double neumann_direct_diff = 0;
};

struct LastStep {
  Eigen::MatrixXd K;        // (H - z - Gamma) on the last block
  double f = 0;
  double projected = 0;     // <psi, K psi>
  double off_projection = 0;  // <psi,K Pbar> (Pbar K Pbar)^{-1} <Pbar K psi>
  double off_coupling_norm = 0;  // || Pbar K psi ||
  Eigen::VectorXd x_last;   // kernel candidate on the last block
};

struct FlowTrace {
  double z = 0;
  bool admissible = true;
  int failed_step = -1;
  std::string failure;
  std::vector<FlowStep> steps;
  LastStep last;
  std::vector<Eigen::LLT<Eigen::MatrixXd>> factor;  // of (H - z - Gamma) per step
};

struct FlowOptions {
  bool diagnostics = false;
  InverseStrategy inverse = InverseStrategy::direct;
  double neumann_tol = 1e-13;
  int neumann_max_terms = 10000;
};

namespace detail {

struct SqrtResolvent {
  bool ok = false;
  Eigen::MatrixXd half;  // R^{1/2}
};

inline SqrtResolvent sqrt_resolvent(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  SqrtResolvent r;
  if (es.eigenvalues().minCoeff() <= 0) return r;
  r.ok = true;
  r.half = es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return r;
}

inline double lambda_max(const Eigen::MatrixXd& S) {
  if (S.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

inline Eigen::MatrixXd last_basis(const Eigen::VectorXd& psi) {
  // orthonormal basis with psi as first column
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(psi);
  Eigen::MatrixXd Q = qr.householderQ();
  if (Q.col(0).dot(psi) < 0) Q.col(0) = -Q.col(0);
  return Q;
}

}  // namespace detail

inline FlowTrace run_flow(const FlowSystem& fs, double z, const FlowOptions& opt = {}) {
  FlowTrace tr;
  tr.z = z;
  const std::size_t L = fs.last();
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Zero(fs.H_block[0].rows(), fs.H_block[0].cols());
  for (std::size_t k = 0; k < L; ++k) {
    Eigen::MatrixXd A = fs.H_block[k];
    A.diagonal().array() -= z;
    Eigen::MatrixXd M = A - gamma;
    FlowStep st;
    st.i = fs.steps[k];
    st.size = fs.block[k].size();
    std::optional<Eigen::MatrixXd> neumann_next;
    if (opt.diagnostics || opt.inverse != InverseStrategy::direct) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ms(M, Eigen::EigenvaluesOnly);
      st.min_eig = ms.eigenvalues().minCoeff();
      st.condition = ms.eigenvalues().maxCoeff() / st.min_eig;
      auto sr = detail::sqrt_resolvent(A);
      if (sr.ok) {
        Eigen::MatrixXd S = sr.half * gamma * sr.half;
        st.sandwich_norm = detail::lambda_max(S);
        st.neumann_ratio = st.sandwich_norm;
        st.gamma_check_norm = st.sandwich_norm < 1 ? 1.0 / (1.0 - st.sandwich_norm)
                                                   : std::numeric_limits<double>::infinity();
        if (opt.inverse != InverseStrategy::direct) {
          if (!(st.neumann_ratio < 1))
            throw FlowError("Neumann series diverges at step " + std::to_string(st.i) +
                                " (spectral radius " + std::to_string(st.neumann_ratio) + ")",
                            st.i);
          // M^{-1} = R^{1/2} sum_p S^p R^{1/2}
          Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(S.rows(), S.cols());
          Eigen::MatrixXd P = acc;
          bool conv = S.size() == 0 || S.norm() == 0;
          for (st.neumann_terms = 1; !conv && st.neumann_terms < opt.neumann_max_terms; ++st.neumann_terms) {
            P = P * S;
            acc += P;
            if (P.norm() <= opt.neumann_tol) conv = true;
          }
          if (!conv)
            throw FlowError("Neumann series not converged within neumann_max_terms at step " + std::to_string(st.i),
                            st.i);
          Eigen::MatrixXd Minv = sr.half * acc * sr.half;
          neumann_next = fs.coupling[k] * Minv * fs.coupling[k].transpose();
        }
      } else {
        st.sandwich_norm = std::numeric_limits<double>::quiet_NaN();
        st.gamma_check_norm = std::numeric_limits<double>::quiet_NaN();
        if (opt.inverse != InverseStrategy::direct)
          throw FlowError("Neumann expansion needs a positive diagonal block at step " + std::to_string(st.i), st.i);
      }
    }
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success) {
      tr.admissible = false;
      tr.failed_step = st.i;
      tr.failure = "block not positive at step " + std::to_string(st.i);
      if (opt.diagnostics) {
        st.gamma = gamma;
        tr.steps.push_back(std::move(st));
      }
      return tr;
    }
    Eigen::MatrixXd next = fs.coupling[k] * llt.solve(fs.coupling[k].transpose());
    if (neumann_next) {
      st.neumann_direct_diff = (*neumann_next - next).norm() / std::max(1.0, next.norm());
      if (opt.inverse == InverseStrategy::neumann) next = *neumann_next;
    }
    if (opt.diagnostics) st.gamma = gamma;
    tr.steps.push_back(std::move(st));
    tr.factor.push_back(std::move(llt));
    gamma = 0.5 * (next + next.transpose());
  }

  // last step: K = (H - z - Gamma_N) on s = 0, projected on psi
  LastStep& ls = tr.last;
  ls.K = fs.H_block[L] - gamma;
  ls.K.diagonal().array() -= z;
  if (opt.diagnostics) {
    FlowStep st;
    st.i = fs.steps[L];
    st.size = fs.block[L].size();
    st.gamma = gamma;
    tr.steps.push_back(std::move(st));
  }
  const Eigen::Index n = ls.K.rows();
  ls.projected = fs.psi.dot(ls.K * fs.psi);
  if (n == 1) {
    ls.f = ls.projected;
    ls.x_last = fs.psi;
    return tr;
  }
  Eigen::MatrixXd Q = detail::last_basis(fs.psi);
  Eigen::MatrixXd Kt = Q.transpose() * ls.K * Q;
  Eigen::MatrixXd Krr = Kt.bottomRightCorner(n - 1, n - 1);
  Eigen::VectorXd Kr0 = Kt.col(0).tail(n - 1);
  ls.off_coupling_norm = Kr0.norm();
  Eigen::LLT<Eigen::MatrixXd> llt(Krr);
  if (llt.info() != Eigen::Success) {
    tr.admissible = false;
    tr.failed_step = fs.steps[L];
    tr.failure = "complement of the projection not positive in the last step";
    return tr;
  }
  Eigen::VectorXd y = llt.solve(Kr0);
  ls.off_projection = Kr0.dot(y);
  ls.f = Kt(0, 0) - ls.off_projection;
  ls.x_last = Q.col(0) - Q.rightCols(n - 1) * y;
  return tr;
}

// f(z); nullopt when z is not admissible
inline std::optional<double> fixed_point_fn(const FlowSystem& fs, double z) {
  auto tr = run_flow(fs, z);
  if (!tr.admissible) return std::nullopt;
  return tr.last.f;
}

struct FixedPointResult {
  double z = 0;
  double residual = 0;
  double lo = 0, hi = 0;
  int iterations = 0;
  std::optional<double> oracle_energy;
  std::optional<double> oracle_gap;
  std::optional<double> overlap;
  std::optional<double> state_residual;
};

// Bisection with alternating secant steps; f is decreasing with slope <= -1.
inline FixedPointResult solve_ground_energy(const FlowSystem& fs, double z_lo, double z_hi, double tol = 1e-12,
                                            int max_iterations = 400) {
  FixedPointResult r;
  auto flo = fixed_point_fn(fs, z_lo);
  for (int k = 0; k < 8 && (!flo || *flo <= 0); ++k) {
    z_lo -= (z_hi - z_lo) + 1.0;
    flo = fixed_point_fn(fs, z_lo);
  }
  if (!flo || *flo <= 0)
    throw std::domain_error("bracket failure: f(lo=" + std::to_string(z_lo) + ") = " +
                            (flo ? std::to_string(*flo) : std::string("not admissible")));
  auto fhi = fixed_point_fn(fs, z_hi);
  if (fhi && *fhi > 0)
    throw std::domain_error("bracket failure: f(lo=" + std::to_string(z_lo) + ")=" + std::to_string(*flo) +
                            ", f(hi=" + std::to_string(z_hi) + ")=" + std::to_string(*fhi));
  r.lo = z_lo;
  r.hi = z_hi;
  double lo = z_lo, hi = z_hi, fl = *flo;
  std::optional<double> fh = fhi;
  auto done = [&](double z, double f) { return std::abs(f) <= tol * std::max(1.0, std::abs(z)); };
  if (fh && done(hi, *fh)) {
    r.z = hi;
    r.residual = std::abs(*fh);
    return r;
  }
  double best_z = lo, best_f = fl;
  for (r.iterations = 0; r.iterations < max_iterations; ++r.iterations) {
    double c = 0.5 * (lo + hi);
    if (r.iterations % 2 == 0 && fh) {
      const double s = hi - *fh * (hi - lo) / (*fh - fl);
      const double w = hi - lo;
      if (s > lo + 1e-3 * w && s < hi - 1e-3 * w) c = s;
    }
    if (c <= lo || c >= hi) break;
    auto fc = fixed_point_fn(fs, c);
    if (fc && std::abs(*fc) < std::abs(best_f)) {
      best_z = c;
      best_f = *fc;
    }
    if (fc && done(c, *fc)) {
      ++r.iterations;
      break;
    }
    if (!fc || *fc < 0) {
      hi = c;
      fh = fc;
    } else {
      lo = c;
      fl = *fc;
    }
  }
  r.z = best_z;
  r.residual = std::abs(best_f);
  if (!done(r.z, best_f)) throw std::runtime_error("fixed point solver did not reach tolerance");
  return r;
}

// Upward reconstruction from the last block:
// x_last from the last step, x_k = -(H - z - Gamma)_k^{-1} H[k, k+1] x_{k+1}.
inline Eigen::VectorXd reconstruct_ground_state(const FlowSystem& fs, double z) {
  auto tr = run_flow(fs, z);
  if (!tr.admissible) throw FlowError("reconstruction: " + tr.failure, tr.failed_step);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(fs.dim));
  const std::size_t L = fs.last();
  Eigen::VectorXd x = tr.last.x_last;
  scatter(out, fs.block[L], x);
  for (std::size_t k = L; k-- > 0;) {
    x = -tr.factor[k].solve(fs.coupling[k].transpose() * x);
    if (!x.allFinite()) throw FlowError("reconstruction: ill-conditioned factor", fs.steps[k]);
    scatter(out, fs.block[k], x);
  }
  return out;
}

// Effective operator after eliminating flow blocks 0..k, on the union of the
// later blocks: (H - z) there minus Gamma on the first remaining block.
struct EffectiveOperator {
  std::vector<std::size_t> indices;
  Eigen::MatrixXd matrix;
};

inline EffectiveOperator effective_operator(const SparseOp& H, const FlowSystem& fs, double z, std::size_t k) {
  if (k >= fs.last()) throw std::out_of_range("no flow block left after step");
  FlowOptions opt;
  opt.diagnostics = true;
  auto tr = run_flow(fs, z, opt);
  if (!tr.admissible && tr.failed_step <= fs.steps[k])
    throw FlowError("effective operator: " + tr.failure, tr.failed_step);
  EffectiveOperator e;
  for (std::size_t q = k + 1; q < fs.block.size(); ++q) e.indices.insert(e.indices.end(), fs.block[q].begin(), fs.block[q].end());
  e.matrix = dense_block(H, e.indices, e.indices);
  e.matrix.diagonal().array() -= z;
  const auto& g = tr.steps.at(k + 1).gamma;
  const auto m = static_cast<Eigen::Index>(fs.block[k + 1].size());
  e.matrix.topLeftCorner(m, m) -= g;
  return e;
}

// ---- truncated Gamma decomposition ---------------------------------------------

namespace detail {

// level rule: -1 exact inverse, otherwise number of Neumann terms kept
inline std::vector<Eigen::MatrixXd> gamma_chain(const FlowSystem& fs, double z, const std::vector<int>& terms) {
  const std::size_t L = fs.last();
  std::vector<Eigen::MatrixXd> G(L + 1);
  G[0] = Eigen::MatrixXd::Zero(fs.H_block[0].rows(), fs.H_block[0].cols());
  for (std::size_t k = 0; k < L; ++k) {
    Eigen::MatrixXd A = fs.H_block[k];
    A.diagonal().array() -= z;
    Eigen::MatrixXd Minv;
    if (terms[k] < 0) {
      Eigen::LLT<Eigen::MatrixXd> llt(A - G[k]);
      if (llt.info() != Eigen::Success) throw FlowError("truncated chain: block not positive", fs.steps[k]);
      Minv = llt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
    } else {
      auto sr = sqrt_resolvent(A);
      if (!sr.ok) throw FlowError("truncated chain: diagonal block not positive", fs.steps[k]);
      Eigen::MatrixXd S = sr.half * G[k] * sr.half;
      Eigen::MatrixXd acc = Eigen::MatrixXd::Identity(A.rows(), A.cols()), P = acc;
      for (int p = 1; p < std::max(terms[k], 1); ++p) {
        P = P * S;
        acc += P;
      }
      Minv = sr.half * acc * sr.half;
    }
    G[k + 1] = fs.coupling[k] * Minv * fs.coupling[k].transpose();
  }
  return G;
}

}  // namespace detail

struct GammaPiece {
  int l = 0;
  bool tail = false;   // (l, h+) when true, (l, h-) otherwise
  Eigen::MatrixXd value;
  double sandwich_norm = 0;  // || R_i^{1/2} piece R_i^{1/2} ||
  double bound = std::numeric_limits<double>::quiet_NaN();
};

struct GammaDecomposition {
  int i = 0;
  Eigen::MatrixXd gamma;
  std::vector<GammaPiece> pieces;
  double reassembly_error = 0;  // relative
};

// Pieces of Gamma_{i,i} for every step i from ibar+4 to N-2. Levels below l are
// truncated to h Neumann terms in the tail pieces; the h- pieces switch the
// lower levels from the bare resolvent to the h-term truncation one level at a time.
inline std::vector<GammaDecomposition> truncated_gamma(const FlowSystem& fs, double z, int h,
                                                       const KZConstants<double>* kz = nullptr) {
  if (h < 2) throw std::invalid_argument("h must be at least 2");
  const std::size_t L = fs.last();
  const auto nlev = L;  // levels 0..L-1 feed Gamma
  auto exact = detail::gamma_chain(fs, z, std::vector<int>(nlev, -1));
  // GL[k]: levels < k truncated, levels >= k exact
  std::vector<std::vector<Eigen::MatrixXd>> GL(L + 1), F(L + 1);
  for (std::size_t k = 1; k <= L; ++k) {
    std::vector<int> t(nlev, -1), f(nlev, h);
    for (std::size_t q = 0; q < k && q < nlev; ++q) {
      t[q] = h;
      f[q] = 0;
    }
    GL[k] = detail::gamma_chain(fs, z, t);
    F[k] = detail::gamma_chain(fs, z, f);
  }
  std::vector<GammaDecomposition> out;
  for (std::size_t ki = 2; ki < L; ++ki) {
    GammaDecomposition d;
    d.i = fs.steps[ki];
    d.gamma = exact[ki];
    Eigen::MatrixXd A = fs.H_block[ki];
    A.diagonal().array() -= z;
    auto sr = detail::sqrt_resolvent(A);
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d.gamma.rows(), d.gamma.cols());
    auto add = [&](int l, bool tail, Eigen::MatrixXd v) {
      GammaPiece p;
      p.l = l;
      p.tail = tail;
      if (sr.ok) {
        Eigen::MatrixXd s = sr.half * v * sr.half;
        p.sandwich_norm = s.operatorNorm();
      }
      sum += v;
      p.value = std::move(v);
      d.pieces.push_back(std::move(p));
    };
    for (std::size_t kl = 1; kl + 1 <= ki; ++kl) {
      const int l = fs.steps[kl];
      add(l, true, GL[kl][ki] - GL[kl + 1][ki]);
      auto& p = d.pieces.back();
      if (kz) {
        double b = std::pow(kz->z(l), h);
        for (std::size_t kf = kl + 1; kf <= ki; ++kf) {
          const int f = fs.steps[kf];
          const double zf = kz->z(f - 2);
          b *= kz->k(f) / ((1 - zf) * (1 - zf));
        }
        p.bound = b;
      }
    }
    for (std::size_t kl = 1; kl + 1 < ki; ++kl) add(fs.steps[kl], false, F[kl][ki] - F[kl + 1][ki]);
    add(fs.steps[ki - 1], false, F[ki - 1][ki]);
    const double g = std::max(d.gamma.norm(), 1e-300);
    d.reassembly_error = (d.gamma - sum).norm() / g;
    out.push_back(std::move(d));
  }
  return out;
}

// ---- bare expansion -----------------------------------------------------------

struct BareExpansion {
  std::vector<Eigen::VectorXd> orders;  // psi_zeta^{(k)}, k = 0..order
  Eigen::VectorXd resummed;             // the exact sum at the fixed reference energy
  double spectral_radius = 0;           // of R0 (W + W*) on the complement of eta
};

// psi^{(k)} = sum_{p<=k} (-R0 (W+W*))^p eta with R0 = Q (H0 - E)^{-1} Q,
// H0 the diagonal part and W + W* the off-diagonal part of the operator.
inline BareExpansion bare_expansion(const SparseOp& H, const FockBasis& b, double E, int order,
                                    bool radius = false) {
  if (order < 0) throw std::invalid_argument("order must be nonnegative");
  const auto n = static_cast<Eigen::Index>(b.size());
  const auto e0 = static_cast<Eigen::Index>(b.condensate_index());
  Eigen::VectorXd d = Eigen::VectorXd(H.diagonal());
  Eigen::VectorXd r0(n);
  for (Eigen::Index q = 0; q < n; ++q) {
    if (q == e0) {
      r0[q] = 0;
      continue;
    }
    const double den = d[q] - E;
    if (std::abs(den) < 1e-12 * std::max(1.0, std::abs(E)))
      throw std::domain_error("resolvent singularity at basis position " + std::to_string(q));
    r0[q] = 1.0 / den;
  }
  SparseOp off = H;
  for (int r = 0; r < off.outerSize(); ++r)
    for (SparseOp::InnerIterator it(off, r); it; ++it)
      if (it.row() == it.col()) it.valueRef() = 0;
  off.prune(0.0);

  BareExpansion out;
  Eigen::VectorXd eta = condensate_vector(b), term = eta, acc = eta;
  out.orders.push_back(acc);
  for (int k = 1; k <= order; ++k) {
    term = -(r0.asDiagonal() * (off * term));
    acc += term;
    out.orders.push_back(acc);
  }
  // eta - (Q (H - E) Q)^{-1} Q H eta
  std::vector<std::size_t> rest;
  for (Eigen::Index q = 0; q < n; ++q)
    if (q != e0) rest.push_back(static_cast<std::size_t>(q));
  Eigen::MatrixXd B = dense_block(H, rest, rest);
  B.diagonal().array() -= E;
  Eigen::VectorXd rhs = gather(Eigen::VectorXd(H * eta), rest);
  Eigen::VectorXd sol = B.ldlt().solve(rhs);
  out.resummed = eta;
  scatter(out.resummed, rest, -sol);
  if (radius) {
    Eigen::MatrixXd T = r0.asDiagonal() * Eigen::MatrixXd(off);
    Eigen::EigenSolver<Eigen::MatrixXd> es(T, false);
    out.spectral_radius = es.eigenvalues().cwiseAbs().maxCoeff();
  }
  return out;
}

// ---- admissibility windows for z -------------------------------------------------

struct RangeWindows {
  double delta_window = 0;  // E^Bog + (delta - 1) phi sqrt(eps^2 + 2 eps)
  double gap_window = 0;    // min(z_* + Delta0/2, E^Bog + sqrt(eps) phi sqrt(eps^2 + 2 eps))
  bool delta_ok = true;
  bool gap_ok = true;
  std::string gated_by;     // the tighter of the two windows
};

inline RangeWindows range_windows(double k2, double phi, double delta, double z, double z_star, double delta0) {
  RangeWindows w;
  const double eps = k2 / phi, eb = e_bog(k2, phi), q = std::sqrt(eps * eps + 2 * eps);
  w.delta_window = eb + (delta - 1) * phi * q;
  w.gap_window = std::min(z_star + delta0 / 2, eb + std::sqrt(eps) * phi * q);
  w.delta_ok = z <= w.delta_window;
  w.gap_ok = z < w.gap_window;
  w.gated_by = w.delta_window <= w.gap_window ? "delta-window" : "gap-window";
  return w;
}

// ---- staged drivers -------------------------------------------------------------

struct Stage {
  SparseOp H;
  Mode mode;
  int ibar = 0;
  double lower = 0;  // lower end of the bracket
  std::string label;
};

struct StageResult {
  std::string label;
  Mode mode;
  int ibar = 0;
  FixedPointResult fp;
  Eigen::VectorXd psi;  // reconstructed, <seed, psi> = 1 on the last block
  double seed_leakage = 0;  // weight of the previous state outside the last block
  double off_projection = 0;
  double off_coupling_norm = 0;
  std::vector<double> gamma_check_norms;
  std::vector<int> steps;
  std::optional<double> n_plus, n_plus_sq;
};

struct StagedOptions {
  FlowConfig flow;
  bool oracle = true;
  OracleOptions oracle_opt;
};

inline StageResult run_stage(const FockBasis& b, const Stage& st, const Eigen::VectorXd& prev, const StagedOptions& o) {
  StageResult r;
  r.label = st.label;
  r.mode = st.mode;
  r.ibar = st.ibar;
  auto si = make_sector_index(b, st.mode);
  const auto& last = si.by_s[0];
  Eigen::VectorXd seed = gather(prev, last);
  Eigen::VectorXd outside = prev;
  scatter(outside, last, Eigen::VectorXd::Zero(seed.size()));
  const double tot = prev.norm();
  r.seed_leakage = tot > 0 ? outside.norm() / tot : 0.0;
  FlowSystem fs = make_flow_system(st.H, b, st.mode, st.ibar, seed);
  const double lo = o.flow.z_lo.value_or(st.lower);
  const double hi = o.flow.z_hi.value_or(fs.psi_energy);
  r.fp = solve_ground_energy(fs, lo, hi, o.flow.solver_tol, o.flow.max_iterations);
  FlowOptions fo;
  fo.diagnostics = true;
  fo.inverse = o.flow.inverse;
  fo.neumann_tol = o.flow.neumann_tol;
  fo.neumann_max_terms = o.flow.neumann_max_terms;
  auto tr = run_flow(fs, r.fp.z, fo);
  r.off_projection = tr.last.off_projection;
  r.off_coupling_norm = tr.last.off_coupling_norm;
  for (const auto& s : tr.steps) {
    r.steps.push_back(s.i);
    if (s.i < b.particles()) r.gamma_check_norms.push_back(s.gamma_check_norm);
  }
  r.psi = reconstruct_ground_state(fs, r.fp.z);
  if (o.oracle) {
    auto eig = lowest_eigenpairs(st.H, std::min<int>(2, static_cast<int>(st.H.rows())), o.oracle_opt);
    r.fp.oracle_energy = eig.values[0];
    if (eig.values.size() > 1) r.fp.oracle_gap = eig.values[1] - eig.values[0];
    r.fp.overlap = overlap(r.psi, eig.vectors.col(0));
  }
  r.fp.state_residual = residual(st.H, r.fp.z, r.psi);
  SparseOp np = excited_number(b);
  const double nn = r.psi.squaredNorm();
  Eigen::VectorXd v = np * r.psi;
  r.n_plus = r.psi.dot(v) / nn;
  r.n_plus_sq = v.squaredNorm() / nn;
  return r;
}

inline std::vector<StageResult> run_stages(const FockBasis& b, const std::vector<Stage>& stages,
                                           const StagedOptions& o) {
  std::vector<StageResult> out;
  Eigen::VectorXd prev = condensate_vector(b);
  for (const auto& st : stages) {
    out.push_back(run_stage(b, st, prev, o));
    prev = out.back().psi;
  }
  return out;
}

// H^Bog_{j1}, H^Bog_{j1,j2}, ...: each stage flows on its newest pair with ibar = 0
inline std::vector<Stage> bog_stages(const FockBasis& b, const ModelSpec& m) {
  std::vector<Stage> out;
  for (std::size_t l = 1; l <= m.potential.pairs.size(); ++l) {
    auto pairs = first_pairs(m, l);
    out.push_back(Stage{h_bog(b, pairs), pairs.back().j, 0, -m.phi_sum(l) - 1.0, "bog-" + std::to_string(l)});
  }
  return out;
}

// stages 1..M-1 flow the auxiliary H^# (next pair's monomials removed), the last stage the full H
inline std::vector<Stage> full_stages(const FockBasis& b, const ModelSpec& m) {
  const std::size_t M = m.potential.pairs.size();
  const int ibar = m.ibar.value_or(default_ibar(b.particles()));
  std::vector<Stage> out;
  for (std::size_t l = 1; l <= M; ++l) {
    auto pairs = first_pairs(m, l);
    SparseOp H = l < M ? h_sharp(b, pairs, {m.potential.pairs[l].j}) : h_full(b, pairs);
    out.push_back(Stage{std::move(H), pairs.back().j, ibar, -m.phi_sum(l) - 1.0,
                        (l < M ? "sharp-" : "full-") + std::to_string(l)});
  }
  return out;
}

struct GapEntry {
  std::string label;
  double measured = 0;               // second eigenvalue minus ground energy
  std::optional<double> recursion;   // only when the analytic constants are supplied
};

struct GapLedger {
  double delta0 = 0;  // min k^2 over the pairs
  std::vector<GapEntry> entries;
  bool all_positive() const {
    for (const auto& e : entries)
      if (!(e.measured > 0)) return false;
    return true;
  }
};

inline GapLedger gap_ledger(const ModelSpec& m, const std::vector<StageResult>& stages) {
  GapLedger g;
  g.delta0 = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < m.potential.pairs.size(); ++l) g.delta0 = std::min(g.delta0, m.k2(l));
  for (const auto& s : stages) g.entries.push_back(GapEntry{s.label, s.fp.oracle_gap.value_or(0.0), std::nullopt});
  return g;
}

}  // namespace boseflow
