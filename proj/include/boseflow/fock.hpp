#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace boseflow {

using Mode = std::vector<int>;
using SparseOp = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Triplet = Eigen::Triplet<double>;
using Occ = std::uint16_t;

inline constexpr std::size_t default_dimension_cap = 2'000'000;

inline Mode negate(Mode m) {
  for (auto& x : m) x = -x;
  return m;
}

inline Mode operator+(const Mode& a, const Mode& b) {
  Mode r(a);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] += b[i];
  return r;
}

inline Mode operator-(const Mode& a, const Mode& b) {
  Mode r(a);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= b[i];
  return r;
}

inline bool is_zero(const Mode& m) {
  return std::all_of(m.begin(), m.end(), [](int x) { return x == 0; });
}

inline std::string mode_string(const Mode& m) {
  std::string s = "(";
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(m[i]);
  }
  return s + ")";
}

// Finite set of lattice momenta. modes[0] is always the zero mode, the rest
// follow lexicographic order of the integer vectors.
struct ModeWindow {
  int d = 1;
  double L = 2.0 * std::numbers::pi;
  int radius = 0;
  std::vector<Mode> modes;
  std::map<Mode, int> lookup;

  std::size_t size() const { return modes.size(); }

  int index(const Mode& m) const {
    auto it = lookup.find(m);
    return it == lookup.end() ? -1 : it->second;
  }
  bool contains(const Mode& m) const { return lookup.count(m) > 0; }

  int negation(int idx) const { return index(negate(modes[idx])); }

  double k2(int idx) const {
    double s = 0.0;
    const double f = 2.0 * std::numbers::pi / L;
    for (int x : modes[idx]) s += (f * x) * (f * x);
    return s;
  }
  double k2(const Mode& m) const {
    double s = 0.0;
    const double f = 2.0 * std::numbers::pi / L;
    for (int x : m) s += (f * x) * (f * x);
    return s;
  }
};

inline ModeWindow make_window(int d, double L, std::vector<Mode> modes) {
  if (d < 1) throw std::invalid_argument("dimension must be positive");
  if (!(L > 0)) throw std::invalid_argument("box side must be positive");
  for (const auto& m : modes)
    if (static_cast<int>(m.size()) != d)
      throw std::invalid_argument("mode " + mode_string(m) + " has wrong dimension");
  std::sort(modes.begin(), modes.end());
  if (std::adjacent_find(modes.begin(), modes.end()) != modes.end())
    throw std::invalid_argument("duplicate mode in window");
  Mode zero(d, 0);
  auto z = std::find(modes.begin(), modes.end(), zero);
  if (z == modes.end()) throw std::invalid_argument("window must contain the zero mode");
  modes.erase(z);
  modes.insert(modes.begin(), zero);

  ModeWindow w;
  w.d = d;
  w.L = L;
  w.modes = std::move(modes);
  for (std::size_t i = 0; i < w.modes.size(); ++i) w.lookup[w.modes[i]] = static_cast<int>(i);
  for (const auto& m : w.modes)
    if (!w.contains(negate(m)))
      throw std::invalid_argument("window not closed under negation at " + mode_string(m));
  return w;
}

inline ModeWindow build_mode_window(int d, double L, int radius) {
  if (d < 1) throw std::invalid_argument("dimension must be positive");
  if (radius < 1) throw std::invalid_argument("window radius must be at least 1");
  std::vector<Mode> modes;
  Mode cur(d, -radius);
  while (true) {
    modes.push_back(cur);
    int k = d - 1;
    while (k >= 0 && cur[k] == radius) cur[k--] = -radius;
    if (k < 0) break;
    ++cur[k];
  }
  auto w = make_window(d, L, std::move(modes));
  w.radius = radius;
  return w;
}

namespace detail {

// C(n, k) in floating point, used for size estimates before enumeration
inline long double binom_ld(long n, long k) {
  if (k < 0 || k > n) return 0.0L;
  k = std::min(k, n - k);
  long double r = 1.0L;
  for (long i = 1; i <= k; ++i) r = r * static_cast<long double>(n - k + i) / static_cast<long double>(i);
  return r;
}

}  // namespace detail

inline long double fock_dimension(std::size_t modes, int N) {
  return detail::binom_ld(static_cast<long>(N) + static_cast<long>(modes) - 1, N);
}

// N-particle occupation basis in ascending lexicographic order over the
// window's mode order. The condensate state (N,0,...,0) is the last entry.
class FockBasis {
 public:
  FockBasis(ModeWindow window, int N, std::size_t cap = default_dimension_cap)
      : window_(std::move(window)), N_(N) {
    if (N < 2 || N % 2 != 0) throw std::invalid_argument("N must be even");
    if (N > 65535) throw std::invalid_argument("N too large for occupation storage");
    M_ = window_.size();
    const long double dim = fock_dimension(M_, N);
    if (dim > static_cast<long double>(cap))
      throw std::length_error("basis dimension " + std::to_string(static_cast<double>(dim)) +
                              " exceeds cap " + std::to_string(cap));
    dim_ = static_cast<std::size_t>(dim + 0.5L);

    // count_[m][r] = number of ways to put r particles into m modes
    count_.assign(M_ + 1, std::vector<std::size_t>(N_ + 1, 0));
    for (int r = 0; r <= N_; ++r) count_[0][r] = (r == 0);
    for (std::size_t m = 1; m <= M_; ++m)
      for (int r = 0; r <= N_; ++r)
        for (int v = 0; v <= r; ++v) count_[m][r] += count_[m - 1][r - v];

    occ_.reserve(dim_ * M_);
    std::vector<Occ> cur(M_, 0);
    enumerate(0, N_, cur);
    if (occ_.size() != dim_ * M_) throw std::logic_error("basis enumeration size mismatch");
  }

  const ModeWindow& window() const { return window_; }
  int particles() const { return N_; }
  std::size_t size() const { return dim_; }
  std::size_t modes() const { return M_; }

  std::span<const Occ> state(std::size_t i) const { return {occ_.data() + i * M_, M_}; }
  Occ occupation(std::size_t i, int mode) const { return occ_[i * M_ + mode]; }

  // position of an occupation vector, or nullopt when it does not sum to N
  std::optional<std::size_t> find(std::span<const Occ> n) const {
    if (n.size() != M_) return std::nullopt;
    long rem = N_;
    for (auto x : n) rem -= x;
    if (rem != 0) return std::nullopt;
    return rank(n);
  }

  std::size_t rank(std::span<const Occ> n) const {
    std::size_t r = 0;
    int rem = N_;
    for (std::size_t p = 0; p + 1 < M_; ++p) {
      const std::size_t tail = M_ - p - 1;
      for (int v = 0; v < n[p]; ++v) r += count_[tail][rem - v];
      rem -= n[p];
    }
    return r;
  }

  std::size_t condensate_index() const { return dim_ - 1; }

 private:
  void enumerate(std::size_t pos, int rem, std::vector<Occ>& cur) {
    if (pos + 1 == M_) {
      cur[pos] = static_cast<Occ>(rem);
      occ_.insert(occ_.end(), cur.begin(), cur.end());
      return;
    }
    for (int v = 0; v <= rem; ++v) {
      cur[pos] = static_cast<Occ>(v);
      enumerate(pos + 1, rem - v, cur);
    }
  }

  ModeWindow window_;
  int N_ = 0;
  std::size_t M_ = 0;
  std::size_t dim_ = 0;
  std::vector<Occ> occ_;
  std::vector<std::vector<std::size_t>> count_;
};

inline FockBasis enumerate_basis(const ModeWindow& w, int N, std::size_t cap = default_dimension_cap) {
  return FockBasis(w, N, cap);
}

// Normal-ordered monomial on window indices: coef * a*_{cre...} a_{ann...}
struct Monomial {
  std::vector<int> cre;
  std::vector<int> ann;
  double coef = 0.0;
};

// Same thing written with lattice modes, as read from user input.
struct MonomialSpec {
  std::vector<Mode> creations;
  std::vector<Mode> annihilations;
  double coefficient = 0.0;
};

inline Monomial resolve(const ModeWindow& w, const MonomialSpec& s) {
  if (s.creations.size() != s.annihilations.size())
    throw std::invalid_argument("monomial does not conserve particle number");
  Monomial m;
  m.coef = s.coefficient;
  for (const auto& c : s.creations) {
    int i = w.index(c);
    if (i < 0) throw std::out_of_range("mode " + mode_string(c) + " outside window");
    m.cre.push_back(i);
  }
  for (const auto& a : s.annihilations) {
    int i = w.index(a);
    if (i < 0) throw std::out_of_range("mode " + mode_string(a) + " outside window");
    m.ann.push_back(i);
  }
  return m;
}

inline void apply_monomial(const FockBasis& b, const Monomial& m, std::vector<Triplet>& out) {
  const int M = static_cast<int>(b.modes());
  for (int x : m.cre)
    if (x < 0 || x >= M) throw std::out_of_range("monomial creation index outside window");
  for (int x : m.ann)
    if (x < 0 || x >= M) throw std::out_of_range("monomial annihilation index outside window");
  if (m.cre.size() != m.ann.size()) throw std::invalid_argument("monomial does not conserve particle number");
  if (m.coef == 0.0) return;

  std::vector<Occ> n(b.modes());
  for (std::size_t col = 0; col < b.size(); ++col) {
    auto s = b.state(col);
    std::copy(s.begin(), s.end(), n.begin());
    double amp = m.coef;
    bool dead = false;
    for (int a : m.ann) {
      if (n[a] == 0) {
        dead = true;
        break;
      }
      amp *= std::sqrt(static_cast<double>(n[a]));
      --n[a];
    }
    if (dead) continue;
    for (int c : m.cre) {
      ++n[c];
      amp *= std::sqrt(static_cast<double>(n[c]));
    }
    out.emplace_back(static_cast<int>(b.rank(n)), static_cast<int>(col), amp);
  }
}

inline SparseOp assemble(const FockBasis& b, const std::vector<Triplet>& t) {
  SparseOp op(static_cast<Eigen::Index>(b.size()), static_cast<Eigen::Index>(b.size()));
  op.setFromTriplets(t.begin(), t.end());
  op.prune(0.0);
  return op;
}

inline SparseOp build_operator(const FockBasis& b, const std::vector<Monomial>& ms) {
  std::vector<Triplet> t;
  for (const auto& m : ms) apply_monomial(b, m, t);
  return assemble(b, t);
}

inline SparseOp build_monomial_operator(const FockBasis& b, const MonomialSpec& s) {
  return build_operator(b, {resolve(b.window(), s)});
}

inline SparseOp diagonal_operator(const FockBasis& b, const Eigen::VectorXd& d) {
  std::vector<Triplet> t;
  for (Eigen::Index i = 0; i < d.size(); ++i)
    if (d[i] != 0.0) t.emplace_back(static_cast<int>(i), static_cast<int>(i), d[i]);
  return assemble(b, t);
}

inline SparseOp identity_operator(const FockBasis& b) {
  return diagonal_operator(b, Eigen::VectorXd::Ones(static_cast<Eigen::Index>(b.size())));
}

inline SparseOp number_operator(const FockBasis& b, int mode) {
  Eigen::VectorXd d(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) d[i] = b.occupation(i, mode);
  return diagonal_operator(b, d);
}

// particles outside the zero mode
inline SparseOp excited_number(const FockBasis& b) {
  Eigen::VectorXd d(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) d[i] = b.particles() - b.occupation(i, 0);
  return diagonal_operator(b, d);
}

inline Mode total_momentum(const FockBasis& b, std::size_t i) {
  const auto& w = b.window();
  Mode p(w.d, 0);
  for (std::size_t k = 0; k < b.modes(); ++k)
    for (int c = 0; c < w.d; ++c) p[c] += b.occupation(i, static_cast<int>(k)) * w.modes[k][c];
  return p;
}

// s = n_j + n_{-j} for every basis state
inline std::vector<int> pair_occupation(const FockBasis& b, const Mode& pair) {
  const auto& w = b.window();
  int p = w.index(pair), q = w.index(negate(pair));
  if (p < 0 || q < 0) throw std::out_of_range("pair mode " + mode_string(pair) + " not in window");
  if (p == 0) throw std::invalid_argument("pair mode must be nonzero");
  std::vector<int> s(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) s[i] = b.occupation(i, p) + b.occupation(i, q);
  return s;
}

struct SectorIndex {
  Mode pair;
  std::vector<std::vector<std::size_t>> by_s;  // by_s[s] = positions, s = 0..N
};

inline SectorIndex make_sector_index(const FockBasis& b, const Mode& pair) {
  SectorIndex si{pair, std::vector<std::vector<std::size_t>>(b.particles() + 1)};
  auto s = pair_occupation(b, pair);
  for (std::size_t i = 0; i < b.size(); ++i) si.by_s[s[i]].push_back(i);
  return si;
}

inline std::vector<std::size_t> sector_indices(const FockBasis& b, const Mode& pair, const std::set<int>& allowed) {
  for (int a : allowed)
    if (a < 0 || a > b.particles()) throw std::out_of_range("sector value " + std::to_string(a) + " outside 0..N");
  auto s = pair_occupation(b, pair);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < b.size(); ++i)
    if (allowed.count(s[i])) out.push_back(i);
  return out;
}

// allowed-sets of the projections used by the flows
inline std::set<int> q_pair(int N, int i) {
  std::set<int> s;
  if (N - i >= 0) s.insert(N - i);
  if (N - i - 1 >= 0) s.insert(N - i - 1);
  return s;
}

inline std::set<int> q_above(int N, int i) {
  std::set<int> s;
  for (int v = 0; v <= N - i - 2; ++v) s.insert(v);
  return s;
}

inline std::set<int> q_aggregate(int N, int ibar) {
  std::set<int> s;
  for (int v = std::max(0, N - ibar - 1); v <= N; ++v) s.insert(v);
  return s;
}

inline Eigen::VectorXd condensate_vector(const FockBasis& b) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(b.size()));
  v[static_cast<Eigen::Index>(b.condensate_index())] = 1.0;
  return v;
}

inline Eigen::MatrixXd dense_block(const SparseOp& A, const std::vector<std::size_t>& rows,
                                   const std::vector<std::size_t>& cols) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                              static_cast<Eigen::Index>(cols.size()));
  std::vector<int> pos(A.cols(), -1);
  for (std::size_t c = 0; c < cols.size(); ++c) pos[cols[c]] = static_cast<int>(c);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (SparseOp::InnerIterator it(A, static_cast<Eigen::Index>(rows[r])); it; ++it)
      if (pos[it.col()] >= 0) out(static_cast<Eigen::Index>(r), pos[it.col()]) = it.value();
  return out;
}

inline Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(idx[k])];
  return out;
}

inline void scatter(Eigen::VectorXd& v, const std::vector<std::size_t>& idx, const Eigen::VectorXd& part) {
  for (std::size_t k = 0; k < idx.size(); ++k) v[static_cast<Eigen::Index>(idx[k])] = part[static_cast<Eigen::Index>(k)];
}

inline double max_asymmetry(const SparseOp& A) {
  SparseOp d = A - SparseOp(A.transpose());
  double m = 0.0;
  for (int k = 0; k < d.outerSize(); ++k)
    for (SparseOp::InnerIterator it(d, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

inline double max_abs(const SparseOp& A) {
  double m = 0.0;
  for (int k = 0; k < A.outerSize(); ++k)
    for (SparseOp::InnerIterator it(A, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

}  // namespace boseflow
