// Distance between the scalar fixed point z_*(N) and E_bog as N grows.
#include <cstdio>

#include <boseflow/scalar.hpp>

using namespace boseflow;

int main(int argc, char** argv) {
  const double k2 = 1.0, phi = argc > 1 ? std::atof(argv[1]) : 50.0;
  auto s = scalar_sweep<double>({100, 300, 1000, 3000, 10000, 30000, 100000}, k2, phi);
  std::printf("k^2=%g phi=%g E_bog=%.15f\n", k2, phi, s.rows.front().e_bog);
  std::printf("%8s %22s %12s %8s\n", "N", "z_star", "|z-E_bog|", "beta");
  for (const auto& r : s.rows) std::printf("%8d %22.15f %12.5e %8.4f\n", r.N, r.z_star, r.gap, r.beta_hat);
  std::printf("fitted slope %.4f, %s\n", s.fitted_slope, s.strictly_decreasing ? "strictly decreasing" : "NOT decreasing");
  return 0;
}
