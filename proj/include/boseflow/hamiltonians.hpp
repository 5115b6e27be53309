#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "fock.hpp"

namespace boseflow {

struct PairSpec {
  Mode j;
  double phi = 0.0;
};

struct PotentialSpec {
  double phi0 = 0.0;
  std::vector<PairSpec> pairs;
};

struct ModelSpec {
  ModeWindow window;
  int N = 0;
  PotentialSpec potential;
  std::vector<double> delta;  // per pair; empty entries fall back to 1 + sqrt(eps)
  std::optional<double> xi;
  std::optional<int> ibar;

  double volume() const { return std::pow(window.L, window.d); }
  double rho() const { return N / volume(); }
  double lambda() const { return 1.0 / rho(); }
  // c_N = (lambda phi_0 / 2|V|)(N - N^2)
  double c_N() const {
    const double n = N;
    return lambda() * potential.phi0 / (2.0 * volume()) * (n - n * n);
  }
  double k2(std::size_t m) const { return window.k2(potential.pairs.at(m).j); }
  double phi(std::size_t m) const { return potential.pairs.at(m).phi; }
  double eps(std::size_t m) const { return k2(m) / phi(m); }
  double delta_for(std::size_t m) const {
    if (m < delta.size() && delta[m] > 0) return delta[m];
    return 1.0 + std::sqrt(eps(m));
  }
  double phi_sum(std::size_t upto) const {
    double s = 0.0;
    for (std::size_t l = 0; l < upto && l < potential.pairs.size(); ++l) s += potential.pairs[l].phi;
    return s;
  }
};

struct RegimeReport {
  std::vector<std::string> warnings;
  bool ok() const { return warnings.empty(); }
};

inline constexpr double strict_eps_max = 0.05;
inline constexpr double strict_nu = 1.4;

inline RegimeReport check_model(const ModelSpec& m, bool strict = false) {
  if (m.N < 2 || m.N % 2 != 0) throw std::invalid_argument("N must be even");
  if (m.potential.phi0 < 0) throw std::invalid_argument("phi_0 must be nonnegative");
  std::set<Mode> seen;
  for (const auto& p : m.potential.pairs) {
    if (is_zero(p.j)) throw std::invalid_argument("interaction pair cannot be the zero mode");
    if (!(p.phi > 0)) throw std::invalid_argument("pair potential must be positive at " + mode_string(p.j));
    if (!m.window.contains(p.j)) throw std::invalid_argument("pair " + mode_string(p.j) + " outside window");
    if (seen.count(p.j) || seen.count(negate(p.j)))
      throw std::invalid_argument("duplicate pair " + mode_string(p.j));
    seen.insert(p.j);
  }
  if (m.ibar && (*m.ibar < 0 || *m.ibar % 2 != 0 || *m.ibar > m.N - 2))
    throw std::invalid_argument("ibar must be even and at most N-2");
  if (m.xi && !(*m.xi > 0 && *m.xi < 1)) throw std::invalid_argument("xi must lie in (0,1)");

  RegimeReport r;
  for (std::size_t l = 0; l < m.potential.pairs.size(); ++l) {
    const double e = m.eps(l);
    if (e > strict_eps_max)
      r.warnings.push_back("eps=" + std::to_string(e) + " above " + std::to_string(strict_eps_max) + " for pair " +
                           mode_string(m.potential.pairs[l].j));
    if (1.0 / m.N > std::pow(e, strict_nu))
      r.warnings.push_back("1/N above eps^nu for pair " + mode_string(m.potential.pairs[l].j));
  }
  if (strict && !r.ok()) throw std::domain_error("strict regime violated: " + r.warnings.front());
  return r;
}

inline double e_bog(double k2, double phi) {
  if (!(k2 > 0)) throw std::invalid_argument("k^2 must be positive");
  if (phi < 0) throw std::invalid_argument("phi must be nonnegative");
  return -(k2 + phi - std::sqrt(k2 * k2 + 2.0 * phi * k2));
}

inline double default_xi(int N) { return std::pow(1.0 / std::log(static_cast<double>(N)), 0.25); }

// desk-scale threshold: the aggregated block keeps at least two pair steps
inline int default_ibar(int N) {
  const int f = static_cast<int>(std::floor(std::pow(static_cast<double>(N), 1.0 / 16.0)));
  const int even = 2 * ((f + 1) / 2);
  return std::max(0, N - 2 * std::max(2, even));
}

// ---- operator builders ----------------------------------------------------

inline std::vector<int> pair_indices(const ModeWindow& w, const std::vector<PairSpec>& pairs) {
  std::vector<int> out;
  for (const auto& p : pairs) {
    int a = w.index(p.j), b = w.index(negate(p.j));
    if (a < 0 || b < 0) throw std::out_of_range("pair " + mode_string(p.j) + " not in window");
    out.push_back(a);
    out.push_back(b);
  }
  return out;
}

// sum_j scale_j k_j^2 n_j; modes listed in `skip` are left out
inline SparseOp kinetic(const FockBasis& b, const std::vector<int>& skip = {}, double scale = 1.0) {
  const auto& w = b.window();
  std::vector<double> k2(b.modes());
  for (std::size_t m = 0; m < b.modes(); ++m) k2[m] = scale * w.k2(static_cast<int>(m));
  for (int s : skip) k2[s] = 0.0;
  Eigen::VectorXd d(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    double e = 0.0;
    for (std::size_t m = 0; m < b.modes(); ++m) e += k2[m] * b.occupation(i, static_cast<int>(m));
    d[static_cast<Eigen::Index>(i)] = e;
  }
  return diagonal_operator(b, d);
}

struct BogPair {
  SparseOp h0;
  SparseOp w;
  SparseOp wstar;
};

// H0 = sum_{+-j} ((1-xi) k^2 + phi n_0/N) n_j,  W = (phi/N) a*_0 a*_0 a_j a_-j
inline BogPair bog_pair_terms(const FockBasis& b, const PairSpec& p, double xi = 0.0) {
  const auto& w = b.window();
  if (is_zero(p.j)) throw std::invalid_argument("pair mode must be nonzero");
  const int a = w.index(p.j), c = w.index(negate(p.j));
  if (a < 0 || c < 0) throw std::out_of_range("pair " + mode_string(p.j) + " not in window");
  const double N = b.particles();
  const double k2 = (1.0 - xi) * w.k2(a);
  Eigen::VectorXd d(b.size());
  for (std::size_t i = 0; i < b.size(); ++i)
    d[static_cast<Eigen::Index>(i)] =
        (k2 + p.phi * b.occupation(i, 0) / N) * (b.occupation(i, a) + b.occupation(i, c));
  BogPair out;
  out.h0 = diagonal_operator(b, d);
  out.w = build_operator(b, {Monomial{{0, 0}, {a, c}, p.phi / N}});
  out.wstar = SparseOp(out.w.transpose());
  return out;
}

inline SparseOp h_bog(const FockBasis& b, const std::vector<PairSpec>& pairs, double xi = 0.0) {
  const auto listed = pair_indices(b.window(), pairs);
  SparseOp h = kinetic(b, listed, 1.0 - xi);
  for (const auto& p : pairs) {
    auto t = bog_pair_terms(b, p, xi);
    h += t.h0 + t.w + t.wstar;
  }
  return h;
}

// The cubic and quartic interaction monomials attached to the listed pairs.
// Monomials reaching outside the window, or touching a mode in `excluded`,
// are dropped.
inline std::vector<Monomial> v_monomials(const ModeWindow& w, int N, const std::vector<PairSpec>& pairs,
                                         const std::set<int>& excluded = {}) {
  std::vector<Monomial> out;
  const Mode zero(w.d, 0);
  auto idx = [&](const Mode& m) { return w.index(m); };
  auto push = [&](std::vector<int> cre, std::vector<int> ann, double c) {
    for (int x : cre)
      if (x < 0 || excluded.count(x)) return;
    for (int x : ann)
      if (x < 0 || excluded.count(x)) return;
    out.push_back(Monomial{std::move(cre), std::move(ann), c});
  };
  for (const auto& p : pairs) {
    const double c = p.phi / N;
    const Mode& jl = p.j;
    const Mode mjl = negate(jl);
    for (const auto& j : w.modes) {
      if (is_zero(j)) continue;
      // a*_{j+jl} a*_0 a_j a_jl + h.c.
      if (j != mjl) {
        push({idx(j + jl), idx(zero)}, {idx(j), idx(jl)}, c);
        push({idx(jl), idx(j)}, {idx(zero), idx(j + jl)}, c);
      }
      // a*_{j-jl} a*_0 a_j a_-jl + h.c.
      if (j != jl) {
        push({idx(j - jl), idx(zero)}, {idx(j), idx(mjl)}, c);
        push({idx(mjl), idx(j)}, {idx(zero), idx(j - jl)}, c);
      }
    }
    // a*_{j+jl} a*_{j'-jl} a_j a_j'
    for (const auto& j : w.modes) {
      if (is_zero(j) || j == mjl) continue;
      for (const auto& jp : w.modes) {
        if (is_zero(jp) || jp == jl) continue;
        push({idx(j + jl), idx(jp - jl)}, {idx(j), idx(jp)}, c);
      }
    }
  }
  return out;
}

inline std::set<int> excluded_indices(const ModeWindow& w, const std::vector<Mode>& modes) {
  std::set<int> out;
  for (const auto& m : modes) {
    int a = w.index(m), b = w.index(negate(m));
    if (a >= 0) out.insert(a);
    if (b >= 0) out.insert(b);
  }
  return out;
}

inline SparseOp v_terms(const FockBasis& b, const std::vector<PairSpec>& pairs) {
  return build_operator(b, v_monomials(b.window(), b.particles(), pairs));
}

// V without every monomial that touches one of the excluded pairs
inline SparseOp v_sharp(const FockBasis& b, const std::vector<PairSpec>& pairs, const std::vector<Mode>& excluded) {
  return build_operator(b, v_monomials(b.window(), b.particles(), pairs, excluded_indices(b.window(), excluded)));
}

inline SparseOp h_full(const FockBasis& b, const std::vector<PairSpec>& pairs) {
  return h_bog(b, pairs) + v_terms(b, pairs);
}

// Auxiliary Hamiltonian built from `pairs` with the monomials touching the
// `excluded` modes removed. With no pairs it is the kinetic energy.
inline SparseOp h_sharp(const FockBasis& b, const std::vector<PairSpec>& pairs, const std::vector<Mode>& excluded) {
  if (pairs.empty()) return kinetic(b);
  return h_bog(b, pairs) + v_sharp(b, pairs, excluded);
}

inline std::vector<PairSpec> first_pairs(const ModelSpec& m, std::size_t count) {
  return {m.potential.pairs.begin(), m.potential.pairs.begin() + static_cast<long>(count)};
}

inline SparseOp h_full(const FockBasis& b, const ModelSpec& m, std::size_t upto) {
  return h_full(b, first_pairs(m, upto));
}

// H^# for stage `upto`: pairs 1..upto-1, monomials touching pair `upto` removed
inline SparseOp h_sharp(const FockBasis& b, const ModelSpec& m, std::size_t upto) {
  if (upto == 0 || upto > m.potential.pairs.size()) throw std::out_of_range("stage index out of range");
  return h_sharp(b, first_pairs(m, upto - 1), {m.potential.pairs[upto - 1].j});
}

struct XiParts {
  SparseOp h_sharp_xi;               // (H^#)_xi
  SparseOp xi_t;                     // xi T
  std::vector<SparseOp> h_bog_xi;    // (H^Bog_j)_xi per pair
  std::vector<SparseOp> h0_xi;       // (H0_j)_xi per pair
};

inline XiParts xi_deformation(const FockBasis& b, const std::vector<PairSpec>& pairs,
                              const std::vector<Mode>& excluded, double xi) {
  if (!(xi > 0 && xi < 1)) throw std::invalid_argument("xi must lie in (0,1)");
  XiParts out;
  const auto listed = pair_indices(b.window(), pairs);
  out.h_sharp_xi = kinetic(b, listed, 1.0 - xi);
  for (const auto& p : pairs) {
    auto t = bog_pair_terms(b, p, xi);
    out.h0_xi.push_back(t.h0);
    out.h_bog_xi.push_back(t.h0 + t.w + t.wstar);
    out.h_sharp_xi += out.h_bog_xi.back();
  }
  if (!pairs.empty()) out.h_sharp_xi += v_sharp(b, pairs, excluded);
  out.xi_t = xi * kinetic(b);
  return out;
}

// B = sum_{j != -jm, 0} a*_{j+jm} a_j ; V4 = (phi/N) B B^T
inline SparseOp shift_operator(const FockBasis& b, const PairSpec& p) {
  const auto& w = b.window();
  std::vector<Monomial> ms;
  const Mode mj = negate(p.j);
  for (const auto& j : w.modes) {
    if (is_zero(j) || j == mj) continue;
    int c = w.index(j + p.j), a = w.index(j);
    if (c < 0) continue;
    ms.push_back(Monomial{{c}, {a}, 1.0});
  }
  return build_operator(b, ms);
}

inline SparseOp v4(const FockBasis& b, const PairSpec& p) {
  SparseOp B = shift_operator(b, p);
  SparseOp v = (p.phi / b.particles()) * SparseOp(B * SparseOp(B.transpose()));
  v.prune(0.0);
  return v;
}

// the quartic monomials of a single pair, normal ordered
inline SparseOp v_quartic(const FockBasis& b, const PairSpec& p) {
  const auto& w = b.window();
  std::vector<Monomial> ms;
  const Mode mj = negate(p.j);
  for (const auto& j : w.modes) {
    if (is_zero(j) || j == mj) continue;
    for (const auto& jp : w.modes) {
      if (is_zero(jp) || jp == p.j) continue;
      int c1 = w.index(j + p.j), c2 = w.index(jp - p.j);
      if (c1 < 0 || c2 < 0) continue;
      ms.push_back(Monomial{{c1, c2}, {w.index(j), w.index(jp)}, p.phi / b.particles()});
    }
  }
  return build_operator(b, ms);
}

}  // namespace boseflow
