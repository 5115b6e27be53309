#include "catch_amalgamated.hpp"

#include <boseflow/hamiltonians.hpp>
#include <boseflow/oracle.hpp>
#include <boseflow/scalar.hpp>

using namespace boseflow;
using Catch::Approx;

namespace {

SparseOp from_dense(const Eigen::MatrixXd& D) { return D.sparseView(); }

}  // namespace

TEST_CASE("small dense cases") {
  Eigen::MatrixXd D = Eigen::Vector3d(3, 1, 2).asDiagonal();
  auto r = lowest_eigenpairs(from_dense(D), 1);
  CHECK(r.values[0] == Approx(1.0));
  CHECK(std::abs(r.vectors(1, 0)) == Approx(1.0));
  CHECK(r.vectors(1, 0) > 0);

  auto b = enumerate_basis(build_mode_window(1, 2 * M_PI, 1), 4);
  auto t = lowest_eigenpairs(kinetic(b), 1);
  CHECK(t.values[0] == Approx(0.0).margin(1e-14));
  CHECK(overlap(t.vectors.col(0), condensate_vector(b)) == Approx(1.0));

  auto b8 = enumerate_basis(build_mode_window(1, 2 * M_PI, 1), 8);
  const double tri = tridiagonal_min_eigenvalue(tridiagonal_reduction<double>(8, 1.0, 50.0));
  CHECK(lowest_eigenpairs(h_bog(b8, {{Mode{1}, 50.0}})).values[0] == Approx(tri).epsilon(1e-12));

  Eigen::MatrixXd asym = Eigen::MatrixXd::Zero(2, 2);
  asym(0, 1) = 1;
  CHECK_THROWS(lowest_eigenpairs(from_dense(asym), 1));
}

TEST_CASE("iterative and dense paths agree") {
  OracleOptions it;
  it.force_iterative = true;
  auto b = enumerate_basis(build_mode_window(1, 2 * M_PI, 1), 20);
  auto H = h_bog(b, {{Mode{1}, 50.0}});
  auto d = lowest_eigenpairs(H, 3);
  auto l = lowest_eigenpairs(H, 3, it);
  CHECK(l.iterative);
  for (int k = 0; k < 3; ++k) CHECK(l.values[k] == Approx(d.values[k]).margin(1e-10));
  CHECK(overlap(l.vectors.col(0), d.vectors.col(0)) == Approx(1.0).margin(1e-10));
  // reproducible phase
  CHECK((l.vectors.col(0) - d.vectors.col(0)).norm() < 1e-8);

  auto b2 = enumerate_basis(build_mode_window(1, 2 * M_PI, 2), 8);
  auto H2 = h_full(b2, {{Mode{1}, 4.0}, {Mode{2}, 7.0}});
  auto d2 = lowest_eigenpairs(H2, 2);
  auto l2 = lowest_eigenpairs(H2, 2, it);
  for (int k = 0; k < 2; ++k) CHECK(l2.values[k] == Approx(d2.values[k]).margin(1e-10));
  for (double res : l2.residuals) CHECK(res <= 1e-9);
}

TEST_CASE("iterative path above the dense threshold") {
  const int N = 80;
  auto b = enumerate_basis(build_mode_window(1, 2 * M_PI, 1), N);
  REQUIRE(b.size() > static_cast<std::size_t>(dense_fallback_dimension));
  auto r = lowest_eigenpairs(h_bog(b, {{Mode{1}, 50.0}}), 1);
  CHECK(r.iterative);
  const double tri = tridiagonal_min_eigenvalue(tridiagonal_reduction<double>(N, 1.0, 50.0));
  CHECK(r.values[0] == Approx(tri).margin(1e-9));
  CHECK(r.residuals[0] <= 1e-8);
}

TEST_CASE("positivity checks") {
  auto b = enumerate_basis(build_mode_window(1, 2 * M_PI, 1), 8);
  auto id = verify_psd(identity_operator(b));
  CHECK(id.pass);
  CHECK(id.min_eigenvalue == Approx(1.0));

  SparseOp A = h_full(b, {{Mode{1}, 50.0}}) - kinetic(b) + 50.0 * identity_operator(b);
  CHECK(verify_psd(A, 1e-10).pass);
  CHECK_FALSE(verify_psd(SparseOp(-1.0 * identity_operator(b)), 1e-10).pass);

  auto w = build_mode_window(1, 2 * M_PI, 2);
  auto b2 = enumerate_basis(w, 6);
  ModelSpec m{w, 6, {0.0, {{Mode{1}, 4.0}, {Mode{2}, 7.0}}}, {}, std::nullopt, std::nullopt};
  auto fit = fit_quadratic_control(h_sharp(b2, m, 2), excited_number(b2));
  CHECK(fit.c1 > 0);
  CHECK(fit.check.pass);
}

TEST_CASE("overlap and residual") {
  auto b = enumerate_basis(build_mode_window(1, 2 * M_PI, 1), 4);
  auto eta = condensate_vector(b);
  CHECK(overlap(eta, eta) == 1.0);
  auto hop = build_operator(b, {Monomial{{1}, {0}, 1.0}});
  CHECK(overlap(eta, Eigen::VectorXd(hop * eta)) == 0.0);
  CHECK_THROWS(overlap(eta, Eigen::VectorXd::Zero(eta.size())));

  auto H = h_bog(b, {{Mode{1}, 50.0}});
  auto r = lowest_eigenpairs(H, 1);
  CHECK(residual(H, r.values[0], r.vectors.col(0)) <= 1e-10);
}
