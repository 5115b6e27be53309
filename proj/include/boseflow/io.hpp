#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "feshbach.hpp"
#include "hamiltonians.hpp"
#include "scalar.hpp"

namespace boseflow::io {

using nlohmann::json;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepConfig {
  std::vector<int> Ns{100, 1000, 10000, 100000};
  std::optional<double> k2, phi;  // fall back to the first pair
  bool extended_precision = false;
};

struct RunConfig {
  int d = 1;
  double L = 2.0 * std::numbers::pi;
  int N = 0;
  int radius = 1;
  double phi0 = 0.0;
  std::vector<PairSpec> pairs;
  std::vector<double> delta;
  std::optional<double> xi;
  std::optional<int> ibar;
  std::size_t dimension_cap = default_dimension_cap;
  FlowConfig flow;
  bool oracle = true;
  bool strict = false;
  std::uint64_t seed = 12345;
  SweepConfig sweep;
  std::vector<int> truncation_h{2, 3, 4};
  int expansion_order = 4;
  double theta = 0.25;

  ModelSpec model() const {
    ModelSpec m;
    m.window = build_mode_window(d, L, radius);
    m.N = N;
    m.potential = PotentialSpec{phi0, pairs};
    m.delta = delta;
    m.xi = xi;
    m.ibar = ibar;
    return m;
  }
};

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline json mode_json(const Mode& m) { return json(std::vector<int>(m.begin(), m.end())); }

// canonical model description; the hash is taken over its compact dump
inline json model_json(const RunConfig& c) {
  json pairs = json::array();
  for (const auto& p : c.pairs) pairs.push_back({{"j", mode_json(p.j)}, {"phi", p.phi}});
  json m = {{"d", c.d}, {"L", c.L}, {"N", c.N}, {"radius", c.radius}, {"phi0", c.phi0}, {"pairs", pairs},
            {"delta", c.delta}};
  m["xi"] = c.xi ? json(*c.xi) : json(nullptr);
  m["ibar"] = c.ibar ? json(*c.ibar) : json(nullptr);
  return m;
}

inline std::string model_hash(const RunConfig& c) { return hex64(fnv1a64(model_json(c).dump())); }

namespace detail {

inline std::pair<std::size_t, std::size_t> line_column(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t k = 0; k + 1 < byte && k < text.size(); ++k) {
    if (text[k] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline const json& expect(const json& j, const std::string& key, bool (json::*pred)() const noexcept,
                          const char* what) {
  if (!(j.*pred)()) throw ConfigError("key '" + key + "': expected " + what);
  return j;
}

inline double number(const json& j, const std::string& key) {
  expect(j, key, &json::is_number, "a number");
  return j.get<double>();
}

inline long integer(const json& j, const std::string& key) {
  if (j.is_number_integer()) return j.get<long>();
  if (j.is_number_float()) {
    const double v = j.get<double>();
    if (std::floor(v) == v && std::abs(v) < 9e15) return static_cast<long>(v);
  }
  throw ConfigError("key '" + key + "': expected an integer");
}

inline bool boolean(const json& j, const std::string& key) {
  expect(j, key, &json::is_boolean, "true or false");
  return j.get<bool>();
}

inline void only_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError("key '" + where + "': expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
}

inline Mode mode(const json& j, const std::string& key, int d) {
  Mode m;
  if (j.is_number()) {
    m.push_back(static_cast<int>(integer(j, key)));
  } else if (j.is_array()) {
    for (const auto& x : j) m.push_back(static_cast<int>(integer(x, key)));
  } else {
    throw ConfigError("key '" + key + "': expected an integer vector");
  }
  if (static_cast<int>(m.size()) != d) throw ConfigError("key '" + key + "': expected " + std::to_string(d) + " components");
  return m;
}

}  // namespace detail

inline RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = detail::line_column(text, e.byte);
    throw ConfigError("parse error at line " + std::to_string(line) + ", column " + std::to_string(col));
  }
  using detail::integer;
  using detail::number;
  detail::only_keys(j, "",
                    {"d", "L", "N", "radius", "phi0", "pairs", "delta", "xi", "ibar", "dimension_cap", "flow", "oracle",
                     "strict_regime", "seed", "sweep", "truncation_h", "expansion_order", "theta"});
  RunConfig c;
  if (j.contains("d")) c.d = static_cast<int>(integer(j["d"], "d"));
  if (c.d < 1) throw ConfigError("key 'd': must be positive");
  if (j.contains("L")) c.L = number(j["L"], "L");
  if (!(c.L > 0)) throw ConfigError("key 'L': must be positive");
  if (j.contains("N")) {
    c.N = static_cast<int>(integer(j["N"], "N"));
    if (c.N < 2) throw ConfigError("key 'N': must be at least 2");
  }
  if (j.contains("radius")) c.radius = static_cast<int>(integer(j["radius"], "radius"));
  if (c.radius < 1) throw ConfigError("key 'radius': must be at least 1");
  if (j.contains("phi0")) c.phi0 = number(j["phi0"], "phi0");
  if (j.contains("pairs")) {
    if (!j["pairs"].is_array()) throw ConfigError("key 'pairs': expected an array");
    std::size_t q = 0;
    for (const auto& p : j["pairs"]) {
      const std::string where = "pairs[" + std::to_string(q++) + "]";
      detail::only_keys(p, where, {"j", "phi"});
      if (!p.contains("j") || !p.contains("phi")) throw ConfigError("key '" + where + "': needs 'j' and 'phi'");
      c.pairs.push_back(PairSpec{detail::mode(p["j"], where + ".j", c.d), number(p["phi"], where + ".phi")});
    }
  }
  if (j.contains("delta")) {
    const auto& dj = j["delta"];
    if (dj.is_number()) {
      c.delta.assign(c.pairs.size(), dj.get<double>());
    } else if (dj.is_array()) {
      for (const auto& x : dj) c.delta.push_back(number(x, "delta"));
    } else {
      throw ConfigError("key 'delta': expected a number or an array");
    }
  }
  if (j.contains("xi") && !j["xi"].is_null()) c.xi = number(j["xi"], "xi");
  if (j.contains("ibar") && !j["ibar"].is_null()) c.ibar = static_cast<int>(integer(j["ibar"], "ibar"));
  if (j.contains("dimension_cap")) {
    const long cap = integer(j["dimension_cap"], "dimension_cap");
    if (cap < 1) throw ConfigError("key 'dimension_cap': must be positive");
    c.dimension_cap = static_cast<std::size_t>(cap);
  }
  if (j.contains("flow")) {
    const auto& f = j["flow"];
    detail::only_keys(f, "flow",
                      {"neumann_tol", "neumann_max_terms", "inverse_strategy", "solver_tol", "max_iterations", "z_lo",
                       "z_hi"});
    if (f.contains("neumann_tol")) c.flow.neumann_tol = number(f["neumann_tol"], "flow.neumann_tol");
    if (f.contains("neumann_max_terms"))
      c.flow.neumann_max_terms = static_cast<int>(integer(f["neumann_max_terms"], "flow.neumann_max_terms"));
    if (f.contains("inverse_strategy")) {
      if (!f["inverse_strategy"].is_string()) throw ConfigError("key 'flow.inverse_strategy': expected a string");
      try {
        c.flow.inverse = parse_inverse_strategy(f["inverse_strategy"].get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("key 'flow.inverse_strategy': ") + e.what());
      }
    }
    if (f.contains("solver_tol")) c.flow.solver_tol = number(f["solver_tol"], "flow.solver_tol");
    if (f.contains("max_iterations"))
      c.flow.max_iterations = static_cast<int>(integer(f["max_iterations"], "flow.max_iterations"));
    if (f.contains("z_lo")) c.flow.z_lo = number(f["z_lo"], "flow.z_lo");
    if (f.contains("z_hi")) c.flow.z_hi = number(f["z_hi"], "flow.z_hi");
    if (!(c.flow.neumann_tol > 0)) throw ConfigError("key 'flow.neumann_tol': must be positive");
    if (c.flow.neumann_max_terms < 1) throw ConfigError("key 'flow.neumann_max_terms': must be positive");
    if (!(c.flow.solver_tol > 0)) throw ConfigError("key 'flow.solver_tol': must be positive");
  }
  if (j.contains("oracle")) c.oracle = detail::boolean(j["oracle"], "oracle");
  if (j.contains("strict_regime")) c.strict = detail::boolean(j["strict_regime"], "strict_regime");
  if (j.contains("seed")) c.seed = static_cast<std::uint64_t>(integer(j["seed"], "seed"));
  if (j.contains("sweep")) {
    const auto& s = j["sweep"];
    detail::only_keys(s, "sweep", {"N", "k2", "phi", "extended_precision"});
    if (s.contains("N")) {
      if (!s["N"].is_array()) throw ConfigError("key 'sweep.N': expected an array");
      c.sweep.Ns.clear();
      for (const auto& x : s["N"]) c.sweep.Ns.push_back(static_cast<int>(integer(x, "sweep.N")));
    }
    if (s.contains("k2")) c.sweep.k2 = number(s["k2"], "sweep.k2");
    if (s.contains("phi")) c.sweep.phi = number(s["phi"], "sweep.phi");
    if (s.contains("extended_precision"))
      c.sweep.extended_precision = detail::boolean(s["extended_precision"], "sweep.extended_precision");
  }
  if (j.contains("truncation_h")) {
    if (!j["truncation_h"].is_array()) throw ConfigError("key 'truncation_h': expected an array");
    c.truncation_h.clear();
    for (const auto& x : j["truncation_h"]) c.truncation_h.push_back(static_cast<int>(integer(x, "truncation_h")));
  }
  if (j.contains("expansion_order")) c.expansion_order = static_cast<int>(integer(j["expansion_order"], "expansion_order"));
  if (j.contains("theta")) c.theta = number(j["theta"], "theta");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& s) {
  os << "N,z_star,E_bog,abs_diff,beta_hat\n";
  char buf[256];
  for (const auto& r : s.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,", r.N, r.z_star, r.e_bog, r.gap);
    os << buf;
    if (std::isnan(r.beta_hat)) {
      os << "\n";
    } else {
      std::snprintf(buf, sizeof buf, "%.17g\n", r.beta_hat);
      os << buf;
    }
  }
}

}  // namespace boseflow::io
