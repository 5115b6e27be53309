#include "catch_amalgamated.hpp"

#include <boseflow/hamiltonians.hpp>
#include <boseflow/oracle.hpp>
#include <boseflow/scalar.hpp>

#include <random>

#include "reference.hpp"

using namespace boseflow;
using Catch::Approx;

namespace {

ModeWindow line(int radius) { return build_mode_window(1, 2 * M_PI, radius); }

double min_eig(const SparseOp& A) { return lowest_eigenpairs(A, 1).values[0]; }

std::vector<int> sector_of(const FockBasis& b, const Mode& j) { return pair_occupation(b, j); }

// reference matrix permuted into the library basis order
Eigen::MatrixXd reference_in_library_order(const FockBasis& b, const ref::Model1d& m) {
  auto rb = ref::basis(static_cast<int>(m.modes.size()), m.N);
  Eigen::MatrixXd R = ref::hamiltonian(m, rb);
  const auto n = static_cast<Eigen::Index>(b.size());
  Eigen::MatrixXd out(n, n);
  std::vector<int> perm(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto s = b.state(i);
    perm[i] = rb.pos.at(ref::Occ(s.begin(), s.end()));
  }
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < n; ++c) out(r, c) = R(perm[r], perm[c]);
  return out;
}

ref::Model1d ref_model(const ModeWindow& w, int N, double phi0, const std::vector<PairSpec>& pairs) {
  ref::Model1d m;
  for (const auto& md : w.modes) m.modes.push_back(md[0]);
  m.N = N;
  m.phi0 = phi0;
  for (const auto& p : pairs) m.pairs.push_back({p.j[0], p.phi});
  return m;
}

}  // namespace

TEST_CASE("kinetic energy") {
  const int N = 6;
  auto b = enumerate_basis(line(1), N);
  auto T = kinetic(b);
  auto eta = condensate_vector(b);
  CHECK((T * eta).norm() == 0.0);
  std::vector<Occ> s{static_cast<Occ>(N - 1), 0, 1};
  auto q = b.find(s);
  REQUIRE(q);
  CHECK(T.coeff(static_cast<Eigen::Index>(*q), static_cast<Eigen::Index>(*q)) == Approx(1.0));
  Eigen::VectorXd d = T.diagonal();
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    if (k == static_cast<Eigen::Index>(b.condensate_index()))
      CHECK(d[k] == 0.0);
    else
      CHECK(d[k] > 0.0);
  }
}

TEST_CASE("Bogoliubov pair terms") {
  const int N = 8;
  const double phi = 50;
  auto b = enumerate_basis(line(1), N);
  auto t = bog_pair_terms(b, {Mode{1}, phi});
  auto eta = condensate_vector(b);
  CHECK(eta.dot(t.h0 * eta) == 0.0);
  CHECK((t.w * eta).norm() == 0.0);
  CHECK((t.wstar * eta).norm() == Approx(phi * std::sqrt(double(N) * (N - 1)) / N));
  CHECK(max_abs(SparseOp(t.wstar - SparseOp(t.w.transpose()))) == 0.0);

  auto s = sector_of(b, Mode{1});
  for (int r = 0; r < t.w.outerSize(); ++r)
    for (SparseOp::InnerIterator it(t.w, r); it; ++it) CHECK(s[it.row()] == s[it.col()] - 2);
  CHECK_THROWS(bog_pair_terms(b, {Mode{0}, phi}));
  CHECK_THROWS(bog_pair_terms(b, {Mode{2}, phi}));
}

TEST_CASE("Bogoliubov Hamiltonian") {
  auto b = enumerate_basis(line(1), 4);
  CHECK(max_abs(SparseOp(h_bog(b, {}) - kinetic(b))) == 0.0);

  auto H = h_bog(b, {{Mode{1}, 50.0}});
  auto eta = condensate_vector(b);
  CHECK(eta.dot(H * eta) == 0.0);
  const double tri = tridiagonal_min_eigenvalue(tridiagonal_reduction<double>(4, 1.0, 50.0));
  CHECK(min_eig(H) == Approx(tri).epsilon(1e-12));
}

TEST_CASE("interaction monomials: hand counts") {
  const int N = 4;
  // window {-1,0,1}: every cubic and quartic term of pair 1 reaches |j| = 2
  CHECK(v_monomials(line(1), N, {{Mode{1}, 1.0}}).empty());
  // window {-2..2}: 4 + 4 cubic monomials and 4 quartic ones
  auto ms = v_monomials(line(2), N, {{Mode{1}, 1.0}});
  int cubic = 0, quartic = 0;
  for (const auto& m : ms) {
    bool has_zero = false;
    for (int x : m.cre) has_zero |= x == 0;
    for (int x : m.ann) has_zero |= x == 0;
    (has_zero ? cubic : quartic)++;
  }
  CHECK(cubic == 8);
  CHECK(quartic == 4);
}

TEST_CASE("full Hamiltonian equals the direct two-body assembly") {
  struct Case {
    int radius, N;
    double phi0;
    std::vector<PairSpec> pairs;
  };
  std::vector<Case> cases{{1, 8, 0.0, {{Mode{1}, 50.0}}},
                          {1, 6, 3.0, {{Mode{1}, 2.5}}},
                          {2, 6, 1.5, {{Mode{1}, 4.0}}},
                          {2, 6, 0.0, {{Mode{1}, 4.0}, {Mode{2}, 7.0}}},
                          {3, 4, 2.0, {{Mode{1}, 1.0}, {Mode{3}, 2.0}}}};
  for (const auto& c : cases) {
    auto w = line(c.radius);
    auto b = enumerate_basis(w, c.N);
    auto H = h_full(b, c.pairs);
    Eigen::MatrixXd R = reference_in_library_order(b, ref_model(w, c.N, c.phi0, c.pairs));
    Eigen::MatrixXd D(H);
    CHECK((D - R).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(max_asymmetry(H) <= 1e-14 * max_abs(H));

    auto eta = condensate_vector(b);
    CHECK(std::abs(eta.dot(R * eta)) < 1e-12);
    auto V = v_terms(b, c.pairs);
    CHECK((V * eta).norm() == 0.0);

    std::mt19937 rng(3);
    std::normal_distribution<double> g;
    Eigen::VectorXd psi(D.rows());
    for (Eigen::Index k = 0; k < psi.size(); ++k) psi[k] = g(rng);
    CHECK(psi.dot(H * psi) == Approx(psi.dot(R * psi)).epsilon(1e-12));
  }
}

TEST_CASE("V sharp") {
  const int N = 6;
  auto b = enumerate_basis(line(2), N);
  std::vector<PairSpec> p1{{Mode{1}, 4.0}};
  auto V = v_terms(b, p1);
  CHECK(max_abs(SparseOp(v_sharp(b, p1, {Mode{5}}) - V)) == 0.0);

  auto Vs = v_sharp(b, p1, {Mode{2}});
  SparseOp s2 = number_operator(b, b.window().index(Mode{2})) + number_operator(b, b.window().index(Mode{-2}));
  CHECK(max_abs(SparseOp(Vs * s2 - s2 * Vs)) < 1e-12);
  auto all = v_monomials(b.window(), N, p1);
  auto kept = v_monomials(b.window(), N, p1, excluded_indices(b.window(), {Mode{2}}));
  CHECK(all.size() > kept.size());
}

TEST_CASE("H sharp and the xi deformation") {
  const int N = 6;
  auto w = line(2);
  auto b = enumerate_basis(w, N);
  ModelSpec m{w, N, {0.0, {{Mode{1}, 4.0}, {Mode{2}, 7.0}}}, {}, std::nullopt, std::nullopt};
  CHECK(max_abs(SparseOp(h_sharp(b, m, 1) - kinetic(b))) == 0.0);

  auto Hs = h_sharp(b, m, 2);
  for (double xi : {0.3, default_xi(N), 1e-9}) {
    auto parts = xi_deformation(b, first_pairs(m, 1), {Mode{2}}, xi);
    CHECK(max_abs(SparseOp(Hs - parts.h_sharp_xi - parts.xi_t)) < 1e-13);
  }
  auto tiny = xi_deformation(b, first_pairs(m, 1), {Mode{2}}, 1e-12);
  CHECK(max_abs(SparseOp(Hs - tiny.h_sharp_xi)) < 1e-9);
  CHECK_THROWS(xi_deformation(b, first_pairs(m, 1), {Mode{2}}, 0.0));
  CHECK_THROWS(xi_deformation(b, first_pairs(m, 1), {Mode{2}}, 1.0));
  CHECK(default_xi(N) == Approx(std::pow(1.0 / std::log(6.0), 0.25)));
}

TEST_CASE("selection rules in the pair sectors") {
  auto b = enumerate_basis(line(2), 6);
  auto H = h_full(b, {{Mode{1}, 4.0}, {Mode{2}, 7.0}});
  for (const Mode& j : {Mode{1}, Mode{2}}) {
    auto s = sector_of(b, j);
    for (int r = 0; r < H.outerSize(); ++r)
      for (SparseOp::InnerIterator it(H, r); it; ++it) CHECK(std::abs(s[it.row()] - s[it.col()]) <= 2);
  }
}

TEST_CASE("lower bounds and positivity") {
  {
    auto b = enumerate_basis(line(1), 8);
    std::vector<PairSpec> p{{Mode{1}, 50.0}};
    SparseOp id = identity_operator(b);
    CHECK(min_eig(SparseOp(h_full(b, p) - kinetic(b) + 50.0 * id)) >= -1e-10);
  }
  {
    auto w = line(2);
    auto b = enumerate_basis(w, 8);
    ModelSpec m{w, 8, {0.0, {{Mode{1}, 10.0}, {Mode{2}, 20.0}}}, {}, std::nullopt, std::nullopt};
    SparseOp id = identity_operator(b);
    SparseOp T = kinetic(b);
    CHECK(min_eig(SparseOp(h_full(b, m, 2) - T + 30.0 * id)) >= -1e-10);
    CHECK(min_eig(SparseOp(h_sharp(b, m, 2) - T + 10.0 * id)) >= -1e-10);
    for (const auto& p : m.potential.pairs) CHECK(min_eig(v4(b, p)) >= -1e-10);
  }
}

TEST_CASE("quartic part is V4 minus a number operator") {
  auto w = line(2);
  auto b = enumerate_basis(w, 6);
  PairSpec p{Mode{1}, 3.0};
  SparseOp corr = SparseOp(b.size(), b.size());
  for (const auto& j : w.modes) {
    if (is_zero(j) || j == p.j || !w.contains(j - p.j)) continue;
    corr += number_operator(b, w.index(j));
  }
  SparseOp diff = v_quartic(b, p) - (v4(b, p) - (p.phi / 6.0) * corr);
  CHECK(max_abs(diff) < 1e-12);
}

TEST_CASE("model constants") {
  CHECK(e_bog(1.0, 0.0) == 0.0);
  CHECK(e_bog(1.0, 1.0) == Approx(-(2 - std::sqrt(3.0))));
  CHECK(e_bog(2.0, 1.0) == Approx(-(3 - 2 * std::sqrt(2.0))));
  CHECK_THROWS(e_bog(0.0, 1.0));

  auto w = line(1);
  ModelSpec m{w, 10, {2.0, {{Mode{1}, 50.0}}}, {}, std::nullopt, std::nullopt};
  CHECK(m.c_N() == Approx(2.0 * (1 - 10) / 2));
  CHECK(m.eps(0) == Approx(1.0 / 50));
  CHECK(m.delta_for(0) == Approx(1 + std::sqrt(0.02)));
  CHECK(check_model(m).warnings.size() > 0);  // 1/N above eps^1.4
  CHECK_THROWS(check_model(m, true));

  ModelSpec odd = m;
  odd.N = 7;
  CHECK_THROWS_WITH(check_model(odd), Catch::Matchers::ContainsSubstring("N must be even"));
  ModelSpec bad = m;
  bad.ibar = 3;
  CHECK_THROWS(check_model(bad));
  bad = m;
  bad.potential.pairs.push_back({Mode{-1}, 1.0});
  CHECK_THROWS(check_model(bad));

  CHECK(default_ibar(12) == 8);
  CHECK(default_ibar(10) == 6);
  CHECK(default_ibar(4) == 0);
}
