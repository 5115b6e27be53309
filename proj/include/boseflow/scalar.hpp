#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace boseflow {

template <class Real = double>
struct AbcConstants {
  Real a = 0, b = 0, c = 0;
  Real eps = 0, delta = 0, nu = 0;
  bool delta_outside = false;  // delta >= 2: the indicator factor vanished
};

// a = 2 eps + knob, b = (1+eps) delta chi sqrt(eps^2+2eps), c = -(1 - delta^2 chi)(eps^2+2eps)
// with chi the indicator of [0,2)
template <class Real = double>
AbcConstants<Real> abc_constants(Real eps, Real delta, Real nu = Real(1.4), Real a_correction = Real(0)) {
  if (!(eps > 0)) throw std::invalid_argument("eps must be positive");
  if (delta < 0) throw std::invalid_argument("delta must be nonnegative");
  AbcConstants<Real> r;
  r.eps = eps;
  r.delta = delta;
  r.nu = nu;
  r.delta_outside = delta >= 2;
  const Real chi = r.delta_outside ? Real(0) : Real(1);
  const Real q = eps * eps + 2 * eps;
  r.a = 2 * eps + a_correction;
  r.b = (1 + eps) * delta * chi * std::sqrt(q);
  r.c = -(1 - delta * delta * chi) * q;
  return r;
}

// ---- x-sequence -------------------------------------------------------------

template <class Real = double>
struct XSequence {
  std::vector<Real> x;         // x[j] = x_{2j}
  std::vector<Real> bound;     // lower bound at the same index (NaN when not applicable)
  std::vector<bool> holds;
  bool bound_applicable = true;
  bool all_hold() const {
    for (bool h : holds)
      if (!h) return false;
    return bound_applicable;
  }
  Real at(int i) const { return x.at(static_cast<std::size_t>(i / 2)); }
};

template <class Real>
Real x_denominator(const AbcConstants<Real>& k, Real m) {
  return 4 * (1 + k.a - 2 * k.b / m - (1 - k.c) / (m * m));
}

// sqrt(eta a) with eta = 1 - sqrt(eps); zero when eps >= 1
template <class Real>
Real sqrt_eta_a(const AbcConstants<Real>& k) {
  const Real eta = 1 - std::sqrt(k.eps);
  return eta > 0 ? std::sqrt(eta * k.a) : Real(0);
}

template <class Real = double>
XSequence<Real> x_sequence(const AbcConstants<Real>& k, int N, Real theta = Real(0.25)) {
  if (N < 2 || N % 2 != 0) throw std::invalid_argument("N must be even");
  if (!(theta > 0 && theta <= Real(0.25))) throw std::invalid_argument("Theta must lie in (0, 1/4]");
  XSequence<Real> s;
  const Real r = sqrt_eta_a(k);
  s.bound_applicable = r > 0 && std::isfinite(static_cast<double>(k.b / r));
  const Real et = std::pow(k.eps, theta);
  auto bound_at = [&](int i) -> Real {
    if (!s.bound_applicable) return std::numeric_limits<Real>::quiet_NaN();
    return Real(0.5) * (1 + r - (k.b / r) / (Real(N - i) - et));
  };
  Real x = 1;
  s.x.push_back(x);
  s.bound.push_back(bound_at(0));
  for (int j = 0; 2 * j + 2 <= N - 2; ++j) {
    const Real m = Real(N - 2 * j - 1);
    const Real den = x_denominator(k, m) * x;
    if (den == 0 || !std::isfinite(static_cast<double>(den)))
      throw std::domain_error("x-sequence denominator blows up at i=" + std::to_string(2 * j + 2));
    x = 1 - 1 / den;
    s.x.push_back(x);
    s.bound.push_back(bound_at(2 * j + 2));
  }
  for (std::size_t q = 0; q < s.x.size(); ++q)
    s.holds.push_back(s.bound_applicable && s.x[q] >= s.bound[q]);
  return s;
}

// ---- K and Z constants -----------------------------------------------------------

template <class Real = double>
struct KZConstants {
  int N = 0;
  std::vector<Real> K;  // K[i/2]
  std::vector<Real> Z;  // Z[i/2], NaN when undefined
  Real k(int i) const { return K.at(static_cast<std::size_t>(i / 2)); }
  Real z(int i) const { return Z.at(static_cast<std::size_t>(i / 2)); }
};

template <class Real = double>
KZConstants<Real> kz_constants(const AbcConstants<Real>& k, int N, Real theta = Real(0.25)) {
  if (N < 2 || N % 2 != 0) throw std::invalid_argument("N must be even");
  KZConstants<Real> out;
  out.N = N;
  const Real r = sqrt_eta_a(k);
  const Real et = std::pow(k.eps, theta);
  for (int i = 0; i <= N; i += 2) {
    const Real m = Real(N - i + 1);
    const Real den = x_denominator(k, m);
    if (den == 0) throw std::domain_error("K constant undefined at i=" + std::to_string(i));
    const Real K = 1 / den;
    out.K.push_back(K);
    Real Z = std::numeric_limits<Real>::quiet_NaN();
    if (r > 0) {
      const Real g = 1 + r - (k.b / r) / (Real(N - i + 2) - et);
      if (g != 0) Z = K * 2 / g;
    }
    out.Z.push_back(Z);
  }
  return out;
}

// ---- ground-state series ----------------------------------------------------------

template <class Real = double>
struct GsSeries {
  std::vector<Real> c;       // c[0] = 1, c[j] = c[j-1] * ratio[j]
  std::vector<Real> ratio;   // ratio[0] unused (NaN)
  std::optional<int> j0;     // first j from which every ratio up to jmax is < 1
  Real partial_sum = 0;
};

template <class Real>
Real gs_ratio(const AbcConstants<Real>& k, int j, Real theta = Real(0.25)) {
  const Real r = sqrt_eta_a(k);
  if (!(r > 0)) return std::numeric_limits<Real>::quiet_NaN();
  const Real et = std::pow(k.eps, theta);
  const Real m = Real(2 * j + 1);
  const Real first = 1 + r - (k.b / r) / (Real(2 * j) - et);
  const Real rad = 1 + k.a - 2 * k.b / m - (1 - k.c) / (m * m);
  if (!(rad > 0)) return std::numeric_limits<Real>::quiet_NaN();
  return 1 / (first * std::sqrt(rad));
}

template <class Real = double>
GsSeries<Real> gs_series(const AbcConstants<Real>& k, int N, int jmax, Real theta = Real(0.25)) {
  if (jmax < 1) throw std::invalid_argument("jmax must be at least 1");
  if (2 * jmax > N) throw std::invalid_argument("jmax must not exceed N/2");
  GsSeries<Real> s;
  s.c.push_back(1);
  s.ratio.push_back(std::numeric_limits<Real>::quiet_NaN());
  s.partial_sum = 1;
  for (int j = 1; j <= jmax; ++j) {
    const Real q = gs_ratio(k, j, theta);
    s.ratio.push_back(q);
    s.c.push_back(s.c.back() * q);
    s.partial_sum += s.c.back();
  }
  for (int j = jmax; j >= 1; --j) {
    if (!(s.ratio[static_cast<std::size_t>(j)] < 1)) break;
    s.j0 = j;
  }
  return s;
}

// ---- three-mode scalar reduction ----------------------------------------------

// D_i = (i phi/N + k^2)(N - i) - z, the diagonal at n_0 = i in the symmetric sector
template <class Real = double>
Real sector_diagonal(int N, Real k2, Real phi, Real z, int i) {
  return (Real(i) * phi / Real(N) + k2) * Real(N - i) - z;
}

template <class Real = double>
Real ww_coefficient(int N, Real k2, Real phi, Real z, int i) {
  if (i % 2 != 0 || i < 0 || i > N - 2) throw std::invalid_argument("i must be even with 0 <= i <= N-2");
  if (i == 0) return 0;
  const Real d1 = sector_diagonal(N, k2, phi, z, i);
  const Real d2 = sector_diagonal(N, k2, phi, z, i - 2);
  if (!(d1 > 0) || !(d2 > 0))
    throw std::domain_error("vanishing denominator at i=" + std::to_string(i) + ": z inside local spectrum");
  const Real n = Real(N);
  const Real w = (Real(N - i) / 2 + 1);
  return Real(i - 1) * Real(i) * phi * phi / (n * n) * w * w / (d1 * d2);
}

template <class Real = double>
struct GCheck {
  Real value = 1;
  std::vector<Real> levels;  // levels[i/2] = G_{i,i}
  bool ok = true;
  int failed_at = -1;
  std::string reason;
};

// G_{0,0} = 1, G_{i,i} = 1/(1 - WW*_i G_{i-2,i-2}) for i = 2..N-2
template <class Real = double>
GCheck<Real> g_check_levels(int N, Real k2, Real phi, Real z, bool keep_levels = true) {
  if (N < 2 || N % 2 != 0) throw std::invalid_argument("N must be even");
  GCheck<Real> r;
  if (keep_levels) r.levels.push_back(1);
  Real g = 1;
  if (!(sector_diagonal(N, k2, phi, z, 0) > 0)) {
    r.ok = false;
    r.failed_at = 0;
    r.reason = "vanishing denominator";
    return r;
  }
  for (int i = 2; i <= N - 2; i += 2) {
    if (!(sector_diagonal(N, k2, phi, z, i) > 0)) {
      r.ok = false;
      r.failed_at = i;
      r.reason = "vanishing denominator";
      return r;
    }
    const Real ww = ww_coefficient(N, k2, phi, z, i);
    if (!(ww * g < 1)) {
      r.ok = false;
      r.failed_at = i;
      r.reason = "divergent geometric factor";
      return r;
    }
    g = 1 / (1 - ww * g);
    if (keep_levels) r.levels.push_back(g);
  }
  r.value = g;
  return r;
}

template <class Real = double>
Real g_check(int N, Real k2, Real phi, Real z) {
  auto r = g_check_levels(N, k2, phi, z, false);
  if (!r.ok) throw std::domain_error(r.reason + " at i=" + std::to_string(r.failed_at));
  return r.value;
}

// f(z) = -z - ((N-1)/N) phi^2 / (2k^2 + 2 phi (N-2)/N - z) * G_{N-2,N-2}(z); nullopt off the admissible set
template <class Real = double>
std::optional<Real> scalar_fp_function(int N, Real k2, Real phi, Real z) {
  if (phi == 0) return -z;
  auto g = g_check_levels(N, k2, phi, z, false);
  if (!g.ok) return std::nullopt;
  const Real n = Real(N);
  const Real d = 2 * k2 + 2 * phi * Real(N - 2) / n - z;
  if (!(d > 0)) return std::nullopt;
  return -z - (n - 1) / n * phi * phi / d * g.value;
}

template <class Real = double>
struct ScalarRoot {
  Real z = 0;
  Real residual = 0;
  Real lo = 0, hi = 0;
  int iterations = 0;
};

template <class Real = double>
ScalarRoot<Real> scalar_fixed_point(int N, Real k2, Real phi) {
  if (!(k2 > 0)) throw std::invalid_argument("k^2 must be positive");
  if (phi < 0) throw std::invalid_argument("phi must be nonnegative");
  ScalarRoot<Real> r;
  if (phi == 0) return r;
  // H >= T - phi, so f > 0 below -phi; hi = 0 is the condensate energy
  Real lo = -phi - 1, hi = 0;
  auto flo = scalar_fp_function(N, k2, phi, lo);
  if (!flo || !(*flo > 0)) throw std::domain_error("bracket failure at lower end");
  r.lo = lo;
  r.hi = hi;
  for (int it = 0; it < 400; ++it) {
    const Real mid = (lo + hi) / 2;
    if (mid == lo || mid == hi) break;
    auto f = scalar_fp_function(N, k2, phi, mid);
    ++r.iterations;
    if (!f || *f < 0)
      hi = mid;
    else if (*f > 0)
      lo = mid;
    else {
      lo = hi = mid;
      break;
    }
  }
  r.z = (lo + hi) / 2;
  auto f = scalar_fp_function(N, k2, phi, lo);
  r.residual = f ? std::abs(*f) : std::numeric_limits<Real>::infinity();
  return r;
}

template <class Real = double>
struct TridiagonalSector {
  int N = 0;
  std::vector<Real> diag;  // diag[i/2] = d_i
  std::vector<Real> off;   // off[i/2] = t_i couples i and i+2
};

template <class Real = double>
TridiagonalSector<Real> tridiagonal_reduction(int N, Real k2, Real phi) {
  if (N < 2 || N % 2 != 0) throw std::invalid_argument("N must be even");
  TridiagonalSector<Real> t;
  t.N = N;
  const Real n = Real(N);
  for (int i = 0; i <= N; i += 2) {
    t.diag.push_back((k2 + phi * Real(i) / n) * Real(N - i));
    if (i + 2 <= N) t.off.push_back(phi * Real(N - i) * std::sqrt(Real(i + 1) * Real(i + 2)) / (2 * n));
  }
  return t;
}

template <class Real = double>
Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> tridiagonal_matrix(const TridiagonalSector<Real>& t) {
  const auto n = static_cast<Eigen::Index>(t.diag.size());
  Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic> A = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    A(k, k) = t.diag[static_cast<std::size_t>(k)];
    if (k + 1 < n) A(k, k + 1) = A(k + 1, k) = t.off[static_cast<std::size_t>(k)];
  }
  return A;
}

template <class Real = double>
Real tridiagonal_min_eigenvalue(const TridiagonalSector<Real>& t) {
  using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;
  Vec d = Eigen::Map<const Vec>(t.diag.data(), static_cast<Eigen::Index>(t.diag.size()));
  Vec e = Eigen::Map<const Vec>(t.off.data(), static_cast<Eigen::Index>(t.off.size()));
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>> es;
  es.computeFromTridiagonal(d, e, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("tridiagonal eigensolver failed");
  return es.eigenvalues()[0];
}

// ---- convergence sweep -----------------------------------------------------------

inline double e_bog_scalar(double k2, double phi) { return -(k2 + phi - std::sqrt(k2 * k2 + 2.0 * phi * k2)); }

struct SweepRow {
  int N = 0;
  double z_star = 0;
  double e_bog = 0;
  double gap = 0;
  double beta_hat = std::numeric_limits<double>::quiet_NaN();  // local slope from the previous row
};

struct SweepResult {
  std::vector<SweepRow> rows;
  bool strictly_decreasing = true;
  double fitted_slope = std::numeric_limits<double>::quiet_NaN();  // least squares over all rows
};

inline double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double lx = std::log(x[k]), ly = std::log(y[k]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return -(n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// rows from precomputed fixed points, in the order given
inline SweepResult assemble_sweep(const std::vector<int>& Ns, const std::vector<double>& z_star, double k2, double phi) {
  if (Ns.size() != z_star.size()) throw std::invalid_argument("sweep size mismatch");
  SweepResult out;
  const double eb = e_bog_scalar(k2, phi);
  std::vector<double> xs, ys;
  for (std::size_t q = 0; q < Ns.size(); ++q) {
    SweepRow row;
    row.N = Ns[q];
    row.z_star = z_star[q];
    row.e_bog = eb;
    row.gap = std::abs(row.z_star - eb);
    if (!out.rows.empty()) {
      const auto& p = out.rows.back();
      row.beta_hat = -std::log(row.gap / p.gap) / std::log(double(row.N) / p.N);
      if (!(row.gap < p.gap)) out.strictly_decreasing = false;
    }
    out.rows.push_back(row);
    xs.push_back(row.N);
    ys.push_back(row.gap);
  }
  out.fitted_slope = fit_loglog_slope(xs, ys);
  return out;
}

template <class Real = double>
SweepResult scalar_sweep(const std::vector<int>& Ns, double k2, double phi) {
  std::vector<double> zs;
  for (int N : Ns) zs.push_back(static_cast<double>(scalar_fixed_point<Real>(N, Real(k2), Real(phi)).z));
  return assemble_sweep(Ns, zs, k2, phi);
}

}  // namespace boseflow
