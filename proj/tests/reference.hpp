#pragma once
// Independent brute-force reference: its own basis enumeration and a direct
// assembly of the two-body sum, used to cross-check the library operators.

#include <cmath>
#include <map>
#include <vector>

#include <Eigen/Dense>

namespace ref {

using Occ = std::vector<int>;

struct Basis {
  std::vector<Occ> states;
  std::map<Occ, int> pos;
};

inline void fill(int m, int rem, Occ& cur, Basis& b) {
  if (m == static_cast<int>(cur.size()) - 1) {
    cur[m] = rem;
    b.pos[cur] = static_cast<int>(b.states.size());
    b.states.push_back(cur);
    return;
  }
  for (int v = rem; v >= 0; --v) {
    cur[m] = v;
    fill(m + 1, rem - v, cur, b);
  }
}

inline Basis basis(int modes, int N) {
  Basis b;
  Occ cur(modes, 0);
  fill(0, N, cur, b);
  return b;
}

// modes are 1d integers here; index lookup by value
struct Model1d {
  std::vector<int> modes;  // must contain 0
  double L = 2 * M_PI;
  int N = 0;
  double phi0 = 0;
  std::vector<std::pair<int, double>> pairs;
};

inline int find_mode(const std::vector<int>& modes, int m) {
  for (std::size_t k = 0; k < modes.size(); ++k)
    if (modes[k] == m) return static_cast<int>(k);
  return -1;
}

// coef a*_{c1} a*_{c2} a_{a1} a_{a2}, applied column by column
inline void two_body(const Basis& b, Eigen::MatrixXd& H, int c1, int c2, int a1, int a2, double coef) {
  for (std::size_t col = 0; col < b.states.size(); ++col) {
    Occ v = b.states[col];
    double amp = coef;
    for (int a : {a2, a1}) {
      if (v[a] == 0) {
        amp = 0;
        break;
      }
      amp *= std::sqrt(double(v[a]));
      v[a] -= 1;
    }
    if (amp == 0) continue;
    for (int c : {c2, c1}) {
      v[c] += 1;
      amp *= std::sqrt(double(v[c]));
    }
    H(b.pos.at(v), static_cast<int>(col)) += amp;
  }
}

// T + (1/2N) sum_{k = +-j} phi_k sum_{p,q} a*_{p+k} a*_{q-k} a_q a_p
//   + (phi0/2N) sum_{p,q} a*_p a*_q a_q a_p + c_N
inline Eigen::MatrixXd hamiltonian(const Model1d& m, const Basis& b) {
  const int n = static_cast<int>(b.states.size());
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  const double kf = 2 * M_PI / m.L;
  for (int c = 0; c < n; ++c)
    for (std::size_t k = 0; k < m.modes.size(); ++k) H(c, c) += std::pow(kf * m.modes[k], 2) * b.states[c][k];
  const double N = m.N;
  for (auto [j, phi] : m.pairs)
    for (int k : {j, -j})
      for (int p : m.modes)
        for (int q : m.modes) {
          int c1 = find_mode(m.modes, p + k), c2 = find_mode(m.modes, q - k);
          if (c1 < 0 || c2 < 0) continue;
          two_body(b, H, c1, c2, find_mode(m.modes, q), find_mode(m.modes, p), phi / (2 * N));
        }
  if (m.phi0 != 0) {
    for (int p : m.modes)
      for (int q : m.modes) {
        int a = find_mode(m.modes, p), c = find_mode(m.modes, q);
        two_body(b, H, a, c, c, a, m.phi0 / (2 * N));
      }
    const double cN = m.phi0 / (2 * N) * (N - N * N);  // lambda/|Lambda| = 1/N
    H.diagonal().array() += cN;
  }
  return H;
}

}  // namespace ref
