#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "feshbach.hpp"
#include "hamiltonians.hpp"
#include "io.hpp"
#include "oracle.hpp"
#include "scalar.hpp"

namespace boseflow::cli {

using io::json;

enum ExitCode { ok = 0, check_failed = 1, usage_error = 2, runtime_failure = 3 };

// advisory checks are reported as "flagged" instead of failing the run
struct Check {
  std::string name;
  std::string module;
  bool pass = true;
  bool advisory = false;
  double value = 0;
  double bound = 0;
  std::string note;

  std::string status() const { return pass ? "pass" : (advisory ? "flagged" : "fail"); }
  bool failed() const { return !pass && !advisory; }
};

inline json to_json(const Check& c) {
  json j = {{"name", c.name}, {"module", c.module}, {"status", c.status()}, {"value", c.value}, {"bound", c.bound}};
  if (!c.note.empty()) j["note"] = c.note;
  return j;
}

struct Outcome {
  std::string name;
  json results = json::object();
  std::vector<Check> checks;
  std::vector<std::string> warnings;
  std::optional<std::string> csv;

  Check& add(std::string name, std::string module, bool pass, double value, double bound, bool advisory = false,
             std::string note = {}) {
    checks.push_back(Check{std::move(name), std::move(module), pass, advisory, value, bound, std::move(note)});
    return checks.back();
  }
  bool failed() const {
    for (const auto& c : checks)
      if (c.failed()) return true;
    return false;
  }
};

struct RunOptions {
  int threads = 1;
};

namespace detail {

inline bool small_eps(double eps) { return eps <= strict_eps_max; }

inline json fp_json(const FixedPointResult& fp) {
  json j = {{"z_star", fp.z}, {"residual", fp.residual}, {"bracket", {fp.lo, fp.hi}}, {"iterations", fp.iterations}};
  if (fp.oracle_energy) j["oracle_energy"] = *fp.oracle_energy;
  if (fp.oracle_gap) j["oracle_gap"] = *fp.oracle_gap;
  if (fp.overlap) j["overlap"] = *fp.overlap;
  if (fp.state_residual) j["state_residual"] = *fp.state_residual;
  return j;
}

inline json stage_json(const StageResult& s) {
  json j = {{"label", s.label},
            {"mode", io::mode_json(s.mode)},
            {"ibar", s.ibar},
            {"steps", s.steps},
            {"fixed_point", fp_json(s.fp)},
            {"seed_leakage", s.seed_leakage},
            {"off_projection", s.off_projection},
            {"off_coupling_norm", s.off_coupling_norm},
            {"gamma_check_norms", s.gamma_check_norms}};
  if (s.n_plus) j["n_plus"] = *s.n_plus;
  if (s.n_plus_sq) j["n_plus_sq"] = *s.n_plus_sq;
  return j;
}

inline void stage_checks(Outcome& o, const StageResult& s, double tol, bool oracle, double energy_tol = 1e-9) {
  const std::string p = s.label + ".";
  o.add(p + "fixed_point_residual", "feshbach", s.fp.residual <= tol * std::max(1.0, std::abs(s.fp.z)), s.fp.residual,
        tol * std::max(1.0, std::abs(s.fp.z)));
  o.add(p + "state_residual", "feshbach", *s.fp.state_residual <= 1e-8, *s.fp.state_residual, 1e-8);
  if (!oracle) return;
  const double dz = std::abs(s.fp.z - *s.fp.oracle_energy);
  o.add(p + "oracle_energy", "oracle", dz <= energy_tol, dz, energy_tol);
  o.add(p + "oracle_overlap", "oracle", *s.fp.overlap >= 1 - 1e-8, *s.fp.overlap, 1 - 1e-8);
  if (s.fp.oracle_gap)
    o.add(p + "nondegeneracy", "oracle", *s.fp.oracle_gap > 10 * tol, *s.fp.oracle_gap, 10 * tol);
}

inline StagedOptions staged_options(const io::RunConfig& c) {
  StagedOptions so;
  so.flow = c.flow;
  so.oracle = c.oracle;
  so.oracle_opt.seed = c.seed;
  return so;
}

// the Bogoliubov flow of a single pair on the window {0, +j, -j}
struct ThreeModeRun {
  FockBasis basis;
  SparseOp H;
  FlowSystem fs;
  StageResult stage;
  FlowTrace trace;
};

inline ThreeModeRun three_mode_run(const io::RunConfig& c, const PairSpec& p, int ibar) {
  auto w = make_window(c.d, c.L, {Mode(static_cast<std::size_t>(c.d), 0), p.j, negate(p.j)});
  ThreeModeRun r{enumerate_basis(w, c.N, c.dimension_cap), {}, {}, {}, {}};
  r.H = h_bog(r.basis, {p});
  Stage st{r.H, p.j, ibar, -p.phi - 1.0, "bog"};
  auto so = staged_options(c);
  r.stage = run_stage(r.basis, st, condensate_vector(r.basis), so);
  r.fs = make_flow_system(r.H, r.basis, p.j, ibar, Eigen::VectorXd::Ones(1));
  FlowOptions fo;
  fo.diagnostics = true;
  fo.inverse = c.flow.inverse;
  fo.neumann_tol = c.flow.neumann_tol;
  fo.neumann_max_terms = c.flow.neumann_max_terms;
  r.trace = run_flow(r.fs, r.stage.fp.z, fo);
  return r;
}

// Gamma-check norms against 1/x_i; returns the worst ratio
inline double gamma_vs_x(const FlowTrace& tr, const XSequence<double>& xs, int N, json& table) {
  double worst = 0;
  for (const auto& s : tr.steps) {
    json row = {{"i", s.i},
                {"size", s.size},
                {"condition", s.condition},
                {"min_eig", s.min_eig},
                {"sandwich_norm", s.sandwich_norm},
                {"gamma_check_norm", s.gamma_check_norm}};
    if (s.neumann_terms > 0) {
      row["neumann_ratio"] = s.neumann_ratio;
      row["neumann_terms"] = s.neumann_terms;
      row["neumann_direct_diff"] = s.neumann_direct_diff;
    }
    if (s.i < N) {
      const double inv = 1.0 / xs.at(s.i);
      row["inverse_x"] = inv;
      worst = std::max(worst, s.gamma_check_norm / inv);
    }
    table.push_back(row);
  }
  return worst;
}

inline std::string timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

// ---- experiments -----------------------------------------------------------------

inline Outcome three_mode(const io::RunConfig& c) {
  Outcome o;
  o.name = "three-mode";
  if (c.pairs.empty()) throw io::ConfigError("key 'pairs': three-mode needs one pair");
  if (c.pairs.size() > 1) o.warnings.push_back("only the first pair is used");
  const PairSpec p = c.pairs.front();
  const int ibar = c.ibar.value_or(0);
  auto r = detail::three_mode_run(c, p, ibar);
  ModelSpec m{r.basis.window(), c.N, {c.phi0, {p}}, c.delta, c.xi, ibar};
  for (auto& w : check_model(m, c.strict).warnings) o.warnings.push_back(w);

  const double k2 = m.k2(0), eps = m.eps(0), delta = m.delta_for(0);
  const bool regime = detail::small_eps(eps);
  const auto& fp = r.stage.fp;
  o.results["dimension"] = r.basis.size();
  o.results["e_bog"] = e_bog(k2, p.phi);
  o.results["eps"] = eps;
  o.results["delta"] = delta;
  o.results["stage"] = detail::stage_json(r.stage);
  detail::stage_checks(o, r.stage, c.flow.solver_tol, c.oracle, 1e-10);

  const double zs = scalar_fixed_point<double>(c.N, k2, p.phi).z;
  o.results["scalar_z_star"] = zs;
  o.add("scalar_agreement", "scalar", std::abs(zs - fp.z) <= 1e-10, std::abs(zs - fp.z), 1e-10);

  auto abc = abc_constants(eps, delta);
  auto xs = x_sequence(abc, c.N, c.theta);
  json table = json::array();
  const double worst = detail::gamma_vs_x(r.trace, xs, c.N, table);
  o.results["flow_steps"] = table;
  o.add("gamma_check_vs_inverse_x", "feshbach", worst <= 1 + 1e-12, worst, 1.0, !regime || ibar != 0,
        regime ? "" : "eps outside the small-eps regime");
  o.add("x_lower_bound", "scalar", xs.all_hold(), xs.x.back(), xs.bound.back(), !regime,
        xs.bound_applicable ? "" : "bound not applicable");

  if (ibar == 0 && c.N >= 8) {
    auto kz = kz_constants(abc, c.N, c.theta);
    json tj = json::array();
    for (int h : c.truncation_h) {
      double reassembly = 0, tail_ratio = 0;
      for (const auto& d : truncated_gamma(r.fs, fp.z, h, &kz)) {
        reassembly = std::max(reassembly, d.reassembly_error);
        for (const auto& piece : d.pieces)
          if (piece.tail && piece.bound > 0) tail_ratio = std::max(tail_ratio, piece.sandwich_norm / piece.bound);
      }
      tj.push_back({{"h", h}, {"reassembly_error", reassembly}, {"worst_tail_ratio", tail_ratio}});
      o.add("truncation_reassembly_h" + std::to_string(h), "feshbach", reassembly <= 1e-12, reassembly, 1e-12);
      o.add("truncation_tail_h" + std::to_string(h), "feshbach", tail_ratio <= 1.0, tail_ratio, 1.0, !regime);
    }
    o.results["truncation"] = tj;
  }

  auto rw = range_windows(k2, p.phi, delta, fp.z, fp.z, k2);
  o.results["range_windows"] = {{"delta_window", rw.delta_window}, {"gap_window", rw.gap_window},
                                {"delta_ok", rw.delta_ok},         {"gap_ok", rw.gap_ok},
                                {"gated_by", rw.gated_by}};
  if (!rw.delta_ok) o.warnings.push_back("z_star above the delta window");
  if (!rw.gap_ok) o.warnings.push_back("z_star above the gap window");
  return o;
}

inline Outcome staged(const io::RunConfig& c, bool full) {
  Outcome o;
  o.name = full ? "full" : "multi-mode";
  if (c.pairs.empty()) throw io::ConfigError("key 'pairs': at least one pair is required");
  ModelSpec m = c.model();
  for (auto& w : check_model(m, c.strict).warnings) o.warnings.push_back(w);
  auto b = enumerate_basis(m.window, c.N, c.dimension_cap);
  auto stages = full ? full_stages(b, m) : bog_stages(b, m);
  auto res = run_stages(b, stages, detail::staged_options(c));
  o.results["dimension"] = b.size();
  json sj = json::array();
  for (const auto& s : res) {
    sj.push_back(detail::stage_json(s));
    detail::stage_checks(o, s, c.flow.solver_tol, c.oracle);
    o.add(s.label + ".seed_leakage", "feshbach", s.seed_leakage <= 1e-12, s.seed_leakage, 1e-12, true);
  }
  o.results["stages"] = sj;
  const auto& last = res.back();
  o.results["ground_energy"] = last.fp.z;
  if (full) {
    o.results["ibar"] = last.ibar;
    o.results["off_projection"] = last.off_projection;
  }
  double delta0 = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < c.pairs.size(); ++l) delta0 = std::min(delta0, m.k2(l));
  const double nb = m.phi_sum(c.pairs.size()) / delta0;
  o.add("n_plus_bound", "feshbach", *last.n_plus <= nb, *last.n_plus, nb);
  o.results["n_plus"] = *last.n_plus;
  o.results["n_plus_sq"] = *last.n_plus_sq;
  if (c.oracle) {
    auto g = gap_ledger(m, res);
    json gj = json::array();
    for (const auto& e : g.entries) gj.push_back({{"label", e.label}, {"gap", e.measured}});
    o.results["gap_ledger"] = {{"delta0", g.delta0}, {"entries", gj}};
    o.add("gaps_positive", "oracle", g.all_positive(), g.entries.empty() ? 0.0 : g.entries.back().measured, 0.0);
  }
  return o;
}

inline Outcome scalar_sweep_run(const io::RunConfig& c, const RunOptions& ro) {
  Outcome o;
  o.name = "scalar-sweep";
  double k2 = 0, phi = 0;
  if (c.sweep.k2 && c.sweep.phi) {
    k2 = *c.sweep.k2;
    phi = *c.sweep.phi;
  } else if (!c.pairs.empty()) {
    auto w = build_mode_window(c.d, c.L, c.radius);
    k2 = c.sweep.k2.value_or(w.k2(c.pairs.front().j));
    phi = c.sweep.phi.value_or(c.pairs.front().phi);
  } else {
    throw io::ConfigError("key 'sweep': needs k2 and phi or a pair");
  }
  if (!(k2 > 0) || !(phi > 0)) throw io::ConfigError("key 'sweep': k2 and phi must be positive");
  const auto& Ns = c.sweep.Ns;
  if (Ns.size() < 2) throw io::ConfigError("key 'sweep.N': need at least two sizes");
  for (int N : Ns)
    if (N < 4 || N % 2 != 0) throw std::invalid_argument("N must be even");

  std::vector<double> zs(Ns.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr err;
  auto work = [&] {
    for (std::size_t q; (q = next++) < Ns.size();) {
      try {
        const bool ext = c.sweep.extended_precision || Ns[q] > 1'000'000;
        zs[q] = ext ? static_cast<double>(scalar_fixed_point<long double>(Ns[q], k2, phi).z)
                    : scalar_fixed_point<double>(Ns[q], k2, phi).z;
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const int nt = std::max(1, std::min<int>(ro.threads, static_cast<int>(Ns.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < nt; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);

  auto s = assemble_sweep(Ns, zs, k2, phi);
  json rows = json::array();
  double min_beta = std::numeric_limits<double>::infinity();
  for (const auto& r : s.rows) {
    json row = {{"N", r.N}, {"z_star", r.z_star}, {"e_bog", r.e_bog}, {"abs_diff", r.gap}};
    if (!std::isnan(r.beta_hat)) {
      row["beta_hat"] = r.beta_hat;
      min_beta = std::min(min_beta, r.beta_hat);
    }
    rows.push_back(row);
  }
  o.results = {{"k2", k2}, {"phi", phi}, {"rows", rows}, {"fitted_slope", s.fitted_slope}};
  o.add("strictly_decreasing", "scalar", s.strictly_decreasing, s.rows.back().gap, s.rows.front().gap);
  o.add("beta_hat", "scalar", min_beta >= 0.8, min_beta, 0.8);
  std::ostringstream csv;
  io::write_sweep_csv(csv, s);
  o.csv = csv.str();
  return o;
}

inline Outcome verify(const io::RunConfig& c) {
  Outcome o;
  o.name = "verify";
  if (c.pairs.empty()) throw io::ConfigError("key 'pairs': verify needs at least one pair");
  ModelSpec m = c.model();
  for (auto& w : check_model(m, c.strict).warnings) o.warnings.push_back(w);
  auto b = enumerate_basis(m.window, c.N, c.dimension_cap);
  const std::size_t M = c.pairs.size();
  SparseOp H = h_full(b, c.pairs);
  SparseOp T = kinetic(b);
  OracleOptions oo;
  oo.seed = c.seed;

  // fock
  for (const auto& p : c.pairs) {
    auto si = make_sector_index(b, p.j);
    std::size_t tot = 0;
    for (const auto& blk : si.by_s) tot += blk.size();
    o.add("sector_partition_" + mode_string(p.j), "fock", tot == b.size(), double(tot), double(b.size()));
  }
  std::vector<Mode> mom(b.size());
  for (std::size_t q = 0; q < b.size(); ++q) mom[q] = total_momentum(b, q);
  std::size_t bad = 0;
  for (int r = 0; r < H.outerSize(); ++r)
    for (SparseOp::InnerIterator it(H, r); it; ++it)
      if (mom[static_cast<std::size_t>(it.row())] != mom[static_cast<std::size_t>(it.col())]) ++bad;
  o.add("momentum_conservation", "fock", bad == 0, double(bad), 0.0);

  // hamiltonians
  const double asym = max_asymmetry(H);
  o.add("symmetry", "hamiltonians", asym <= 1e-14 * std::max(1.0, max_abs(H)), asym, 1e-14 * max_abs(H));
  auto eta = condensate_vector(b);
  const double e0 = std::abs(eta.dot(H * eta));
  o.add("condensate_energy", "hamiltonians", e0 <= 1e-12, e0, 1e-12);
  for (const auto& p : c.pairs) {
    auto s = pair_occupation(b, p.j);
    int jump = 0;
    for (int r = 0; r < H.outerSize(); ++r)
      for (SparseOp::InnerIterator it(H, r); it; ++it)
        jump = std::max(jump, std::abs(s[static_cast<std::size_t>(it.row())] - s[static_cast<std::size_t>(it.col())]));
    o.add("selection_rule_" + mode_string(p.j), "hamiltonians", jump <= 2, jump, 2);
  }
  {
    auto r = verify_psd(SparseOp(H - T + m.phi_sum(M) * identity_operator(b)), 1e-10, oo);
    o.add("control_quadratic_full", "hamiltonians", r.pass, r.min_eigenvalue, -r.slack);
  }
  for (std::size_t l = 2; l <= M; ++l) {
    auto r = verify_psd(SparseOp(h_sharp(b, m, l) - T + m.phi_sum(l - 1) * identity_operator(b)), 1e-10, oo);
    o.add("control_quadratic_sharp_" + std::to_string(l), "hamiltonians", r.pass, r.min_eigenvalue, -r.slack);
  }
  for (const auto& p : c.pairs) {
    auto r = verify_psd(v4(b, p), 1e-10, oo);
    o.add("v4_positive_" + mode_string(p.j), "hamiltonians", r.pass, r.min_eigenvalue, -r.slack);
  }

  // scalar and the per-pair three-mode flows
  double zmin = 0;
  for (std::size_t l = 0; l < M; ++l) {
    const auto& p = c.pairs[l];
    const std::string tag = mode_string(p.j);
    const double k2 = m.k2(l), eps = m.eps(l), delta = m.delta_for(l);
    const bool regime = detail::small_eps(eps);
    auto abc = abc_constants(eps, delta);
    auto xs = x_sequence(abc, c.N, c.theta);
    o.add("x_lower_bound_" + tag, "scalar", xs.all_hold(), xs.x.back(), xs.bound.back(), !regime,
          regime ? "" : "eps outside the small-eps regime");
    const double zs = scalar_fixed_point<double>(c.N, k2, p.phi).z;
    const double tri = tridiagonal_min_eigenvalue(tridiagonal_reduction<double>(c.N, k2, p.phi));
    o.add("scalar_vs_tridiagonal_" + tag, "scalar", std::abs(zs - tri) <= 1e-10 * std::max(1.0, std::abs(tri)),
          std::abs(zs - tri), 1e-10);

    auto r = detail::three_mode_run(c, p, 0);
    zmin = std::min(zmin, r.stage.fp.z);
    o.add("three_mode_vs_scalar_" + tag, "feshbach", std::abs(r.stage.fp.z - zs) <= 1e-10,
          std::abs(r.stage.fp.z - zs), 1e-10);
    if (c.N <= 40) {
      const double full = lowest_eigenpairs(r.H, 1, oo).values[0];
      o.add("sector_consistency_" + tag, "scalar", std::abs(full - tri) <= 1e-10 * std::max(1.0, std::abs(tri)),
            std::abs(full - tri), 1e-10);
    }
    json table = json::array();
    const double worst = detail::gamma_vs_x(r.trace, xs, c.N, table);
    o.add("gamma_check_vs_inverse_x_" + tag, "feshbach", worst <= 1 + 1e-12, worst, 1.0, !regime);

    // semigroup: the flow after k steps equals the direct Schur complement
    double sg = 0;
    const double z = r.stage.fp.z - 1.0;
    Eigen::MatrixXd dense(r.H);
    for (std::size_t k = 0; k + 1 < r.fs.steps.size(); ++k) {
      auto eff = effective_operator(r.H, r.fs, z, k);
      auto direct = feshbach_map(dense, eff.indices, z);
      sg = std::max(sg, (eff.matrix - direct.effective).norm() / std::max(1e-300, direct.effective.norm()));
    }
    o.add("semigroup_" + tag, "feshbach", sg <= 1e-11, sg, 1e-11);
  }

  // staged runs
  auto so = detail::staged_options(c);
  auto bog = run_stages(b, bog_stages(b, m), so);
  auto full = run_stages(b, full_stages(b, m), so);
  for (const auto& s : bog) detail::stage_checks(o, s, c.flow.solver_tol, c.oracle);
  for (const auto& s : full) detail::stage_checks(o, s, c.flow.solver_tol, c.oracle);
  double delta0 = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < M; ++l) delta0 = std::min(delta0, m.k2(l));
  const double nb = m.phi_sum(M) / delta0;
  o.add("n_plus_bound", "feshbach", *bog.back().n_plus <= nb, *bog.back().n_plus, nb);

  // oracle paths
  if (b.size() <= static_cast<std::size_t>(dense_fallback_dimension)) {
    OracleOptions it = oo;
    it.force_iterative = true;
    const double d = lowest_eigenpairs(H, 1, oo).values[0], l = lowest_eigenpairs(H, 1, it).values[0];
    o.add("dense_vs_iterative", "oracle", std::abs(d - l) <= 1e-10, std::abs(d - l), 1e-10);
  }
  o.results = {{"dimension", b.size()},
               {"ground_energy", full.back().fp.z},
               {"bogoliubov_energy", bog.back().fp.z},
               {"min_three_mode_energy", zmin}};
  return o;
}

inline Outcome dump(const io::RunConfig& c) {
  Outcome o;
  o.name = "dump";
  ModelSpec m = c.model();
  for (auto& w : check_model(m, c.strict).warnings) o.warnings.push_back(w);
  auto b = enumerate_basis(m.window, c.N, c.dimension_cap);
  json modes = json::array();
  for (const auto& md : m.window.modes) modes.push_back(io::mode_json(md));
  json states = json::array();
  for (std::size_t q = 0; q < b.size(); ++q) {
    auto s = b.state(q);
    states.push_back(std::vector<int>(s.begin(), s.end()));
  }
  SparseOp H = h_full(b, c.pairs);
  json trip = json::array();
  for (int r = 0; r < H.outerSize(); ++r)
    for (SparseOp::InnerIterator it(H, r); it; ++it) trip.push_back({it.row(), it.col(), it.value()});
  o.results = {{"modes", modes},
               {"dimension", b.size()},
               {"condensate_index", b.condensate_index()},
               {"states", states},
               {"operator", {{"name", "H"}, {"rows", H.rows()}, {"nnz", H.nonZeros()}, {"triplets", trip}}}};
  return o;
}

// ---- driver -------------------------------------------------------------------------

inline json record(const io::RunConfig& c, const Outcome& o) {
  json checks = json::array();
  for (const auto& k : o.checks) checks.push_back(to_json(k));
  json flow = {{"ibar", c.ibar ? json(*c.ibar) : json(nullptr)},
               {"neumann_tol", c.flow.neumann_tol},
               {"neumann_max_terms", c.flow.neumann_max_terms},
               {"inverse_strategy", c.flow.inverse == InverseStrategy::direct
                                        ? "direct"
                                        : (c.flow.inverse == InverseStrategy::neumann ? "neumann" : "both")},
               {"solver_tol", c.flow.solver_tol},
               {"oracle", c.oracle},
               {"seed", c.seed}};
  return {{"experiment", o.name}, {"model", io::model_json(c)}, {"model_hash", io::model_hash(c)},
          {"flow", flow},         {"results", o.results},       {"checks", checks},
          {"warnings", o.warnings}, {"passed", !o.failed()}};
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Feshbach-Schur flows for Bogoliubov and truncated Bose gas Hamiltonians", "boseflow"};
  app.require_subcommand(1, 1);
  std::string config, out_dir = ".", oracle;
  std::uint64_t seed = 0;
  int threads = 1;
  bool strict = false;
  app.add_option("--config", config, "JSON model configuration");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--oracle", oracle, "on or off")->check(CLI::IsMember({"on", "off"}));
  auto* seed_opt = app.add_option("--seed", seed, "seed for the iterative eigensolver");
  app.add_option("--threads", threads, "worker threads for sweeps")->check(CLI::PositiveNumber);
  app.add_flag("--strict-regime", strict, "reject models outside the small-eps regime");
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {{"three-mode", "Bogoliubov flow of the first pair on three modes"},
                      {"multi-mode", "staged Bogoliubov flows over all pairs"},
                      {"full", "staged flows of the auxiliary and full Hamiltonians"},
                      {"scalar-sweep", "scalar fixed point over a range of N"},
                      {"verify", "invariant battery on the configured model"},
                      {"dump", "basis and operator triplets"}};
  for (const auto& s : subs) app.add_subcommand(s.name, s.help)->fallthrough();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return usage_error;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();

  io::RunConfig c;
  try {
    if (config.empty()) throw io::ConfigError("--config is required");
    c = io::load_config(config);
    if (!oracle.empty()) c.oracle = oracle == "on";
    if (seed_opt->count()) c.seed = seed;
    if (strict) c.strict = true;
    if (cmd != "scalar-sweep" && c.N == 0) throw io::ConfigError("key 'N': missing");
    if (cmd != "scalar-sweep" && c.N % 2 != 0) throw std::invalid_argument("N must be even");
    c.flow.ibar = c.ibar.value_or(0);
    if (cmd != "scalar-sweep") c.flow.validate(c.N);
  } catch (const io::ConfigError& e) {
    err << "error: " << config << ": " << e.what() << "\n";
    return usage_error;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return usage_error;
  }

  Outcome o;
  try {
    if (cmd == "three-mode") o = three_mode(c);
    else if (cmd == "multi-mode") o = staged(c, false);
    else if (cmd == "full") o = staged(c, true);
    else if (cmd == "scalar-sweep") o = scalar_sweep_run(c, RunOptions{threads});
    else if (cmd == "verify") o = verify(c);
    else o = dump(c);
  } catch (const io::ConfigError& e) {
    err << "error: " << config << ": " << e.what() << "\n";
    return usage_error;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return usage_error;
  } catch (const std::domain_error& e) {
    err << "error: " << e.what() << "\n";
    return usage_error;
  } catch (const std::exception& e) {
    err << "error: " << cmd << " failed: " << e.what() << "\n";
    return runtime_failure;
  }

  json rec = record(c, o);
  rec["generated_at"] = detail::timestamp();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const auto base = std::filesystem::path(out_dir) / o.name;
  {
    std::ofstream f(base.string() + ".json");
    if (!f) {
      err << "error: cannot write " << base.string() << ".json\n";
      return runtime_failure;
    }
    f << rec.dump(2) << "\n";
  }
  if (o.csv) std::ofstream(base.string() + ".csv") << *o.csv;

  for (const auto& w : o.warnings) out << "warning: " << w << "\n";
  for (const auto& k : o.checks)
    out << (k.pass ? "PASS    " : (k.advisory ? "FLAGGED " : "FAIL    ")) << k.module << "." << k.name << "  value="
        << k.value << " bound=" << k.bound << (k.note.empty() ? "" : "  (" + k.note + ")") << "\n";
  out << "wrote " << base.string() << ".json" << (o.csv ? " and .csv" : "") << "\n";
  return o.failed() ? check_failed : ok;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace boseflow::cli
