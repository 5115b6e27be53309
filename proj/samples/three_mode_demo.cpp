// Bogoliubov flow on the modes {0, +1, -1}: ground energy from the flow,
// from exact diagonalization and from the scalar sector recursion.
#include <cstdio>

#include <boseflow/feshbach.hpp>
#include <boseflow/oracle.hpp>
#include <boseflow/scalar.hpp>

using namespace boseflow;

int main() {
  const double phi = 50.0;
  const PairSpec pair{Mode{1}, phi};
  auto w = build_mode_window(1, 2 * std::numbers::pi, 1);
  std::printf("E_bog = %.12f\n", e_bog(1.0, phi));
  std::printf("%4s %6s %20s %12s %12s %6s\n", "N", "dim", "z_star", "|z-oracle|", "|z-scalar|", "iter");
  for (int N : {8, 12, 16, 20, 40}) {
    auto b = enumerate_basis(w, N);
    SparseOp H = h_bog(b, {pair});
    auto fs = make_flow_system(H, b, pair.j, 0, Eigen::VectorXd::Ones(1));
    auto fp = solve_ground_energy(fs, -phi - 1.0, fs.psi_energy);
    const double e0 = lowest_eigenpairs(H).values[0];
    const double zs = scalar_fixed_point<double>(N, 1.0, phi).z;
    std::printf("%4d %6zu %20.12f %12.3e %12.3e %6d\n", N, b.size(), fp.z, std::abs(fp.z - e0),
                std::abs(fp.z - zs), fp.iterations);
  }

  // step-by-step view of one flow at its fixed point
  const int N = 12;
  auto b = enumerate_basis(w, N);
  SparseOp H = h_bog(b, {pair});
  auto fs = make_flow_system(H, b, pair.j, 0, Eigen::VectorXd::Ones(1));
  const double z = solve_ground_energy(fs, -phi - 1.0, fs.psi_energy).z;
  FlowOptions opt;
  opt.diagnostics = true;
  auto tr = run_flow(fs, z, opt);
  auto xs = x_sequence(abc_constants(1.0 / phi, 1 + std::sqrt(1.0 / phi)), N);
  std::printf("\nN=%d flow steps at z=%.10f\n%4s %14s %14s %10s\n", N, z, "i", "|Gamma_check|", "1/x_i", "cond");
  for (const auto& s : tr.steps)
    if (s.i < N) std::printf("%4d %14.8f %14.8f %10.3g\n", s.i, s.gamma_check_norm, 1.0 / xs.at(s.i), s.condition);
  return 0;
}
