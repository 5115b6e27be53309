#include "catch_amalgamated.hpp"

#include <boseflow/cli.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace boseflow;
namespace fs = std::filesystem;
using Catch::Approx;
using nlohmann::json;

namespace {

const std::string configs = BOSEFLOW_CONFIG_DIR;

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream o, e;
  const int c = cli::run(args, o, e);
  return {c, o.str(), e.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("boseflow_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write(const fs::path& dir, const std::string& name, const std::string& text) {
  auto p = dir / name;
  std::ofstream(p) << text;
  return p.string();
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing") {
  auto c = io::parse_config(R"({"N": 8, "radius": 2, "pairs": [{"j": [1], "phi": 20}, {"j": 2, "phi": 80}],
                               "delta": 1.5, "flow": {"inverse_strategy": "both"}})");
  CHECK(c.N == 8);
  CHECK(c.L == Approx(2 * M_PI));
  REQUIRE(c.pairs.size() == 2);
  CHECK(c.pairs[1].j == Mode{2});
  CHECK(c.delta == std::vector<double>{1.5, 1.5});
  CHECK(c.flow.inverse == InverseStrategy::both);
  CHECK_FALSE(c.ibar);

  CHECK_THROWS_WITH(io::parse_config("{\n  \"N\": 8,\n  \"pairs\": ]\n}"),
                    Catch::Matchers::ContainsSubstring("line 3"));
  CHECK_THROWS_WITH(io::parse_config(R"({"N": 8, "bogus": 1})"), Catch::Matchers::ContainsSubstring("'bogus'"));
  CHECK_THROWS_WITH(io::parse_config(R"({"N": 8.5})"), Catch::Matchers::ContainsSubstring("'N'"));
  CHECK_THROWS_WITH(io::parse_config(R"({"N": 8, "pairs": [{"j": [1, 0], "phi": 2}]})"),
                    Catch::Matchers::ContainsSubstring("pairs[0].j"));
  CHECK_THROWS_WITH(io::parse_config(R"({"N": 8, "flow": {"inverse_strategy": "lu"}})"),
                    Catch::Matchers::ContainsSubstring("inverse_strategy"));
}

TEST_CASE("model hash") {
  CHECK(io::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(io::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  auto a = io::parse_config(R"({"N": 8, "pairs": [{"j": [1], "phi": 50}]})");
  auto b = io::parse_config(R"({"pairs": [{"phi": 50, "j": [1]}], "N": 8, "flow": {"solver_tol": 1e-11}})");
  auto c = io::parse_config(R"({"N": 10, "pairs": [{"j": [1], "phi": 50}]})");
  CHECK(io::model_hash(a) == io::model_hash(b));
  CHECK(io::model_hash(a) != io::model_hash(c));
  CHECK(io::model_hash(a).size() == 16);
}

TEST_CASE("three-mode run end to end") {
  auto dir = scratch("three");
  auto r = run({"three-mode", "--config", configs + "/three_mode.json", "--out", dir.string()});
  INFO(r.out << r.err);
  REQUIRE(r.code == 0);
  auto j = read_json(dir / "three-mode.json");
  CHECK(j["experiment"] == "three-mode");
  CHECK(j["passed"] == true);
  const auto& fp = j["results"]["stage"]["fixed_point"];
  CHECK(std::abs(fp["z_star"].get<double>() - fp["oracle_energy"].get<double>()) <= 1e-10);
  CHECK(fp["overlap"].get<double>() >= 1 - 1e-8);
  CHECK(j["results"]["flow_steps"].size() == 5);
  CHECK(j["results"]["range_windows"].contains("gated_by"));
  for (const auto& c : j["checks"]) CHECK(c["status"] != "fail");
}

TEST_CASE("records are deterministic apart from the timestamp") {
  auto d1 = scratch("det1"), d2 = scratch("det2");
  REQUIRE(run({"full", "--config", configs + "/multi_mode.json", "--out", d1.string()}).code == 0);
  REQUIRE(run({"full", "--config", configs + "/multi_mode.json", "--out", d2.string(), "--threads", "3"}).code == 0);
  auto a = read_json(d1 / "full.json"), b = read_json(d2 / "full.json");
  CHECK(a.contains("generated_at"));
  a.erase("generated_at");
  b.erase("generated_at");
  CHECK(a.dump() == b.dump());
}

TEST_CASE("scalar sweep writes a decreasing table") {
  auto dir = scratch("sweep");
  auto cfg = write(dir, "s.json", R"({"sweep": {"N": [100, 1000, 10000], "k2": 1.0, "phi": 50.0}})");
  auto r = run({"scalar-sweep", "--config", cfg, "--out", dir.string(), "--threads", "2"});
  REQUIRE(r.code == 0);
  std::ifstream in(dir / "scalar-sweep.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "N,z_star,E_bog,abs_diff,beta_hat");
  std::vector<double> diffs;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string cell;
    for (int k = 0; k < 4; ++k) std::getline(ss, cell, ',');
    diffs.push_back(std::stod(cell));
  }
  REQUIRE(diffs.size() == 3);
  CHECK(diffs[1] < diffs[0]);
  CHECK(diffs[2] < diffs[1]);
  const std::string threaded = slurp(dir / "scalar-sweep.csv");
  REQUIRE(run({"scalar-sweep", "--config", cfg, "--out", dir.string()}).code == 0);
  CHECK(slurp(dir / "scalar-sweep.csv") == threaded);
}

TEST_CASE("malformed and invalid configs exit with code 2") {
  auto dir = scratch("bad");
  auto bad = write(dir, "bad.json", "{\n  \"N\": 8,\n  \"pairs\": [{\"j\": [1] \"phi\": 5}]\n}\n");
  auto r = run({"three-mode", "--config", bad, "--out", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("line 3") != std::string::npos);

  auto key = write(dir, "key.json", R"({"N": 8, "pairs": [{"j": [1], "phi": 5}], "flow": {"tol": 1}})");
  r = run({"three-mode", "--config", key});
  CHECK(r.code == 2);
  CHECK(r.err.find("flow.tol") != std::string::npos);

  auto odd = write(dir, "odd.json", R"({"N": 9, "pairs": [{"j": [1], "phi": 50}]})");
  r = run({"three-mode", "--config", odd, "--out", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("N must be even") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "three-mode.json"));

  CHECK(run({"three-mode"}).code == 2);
  CHECK(run({"nonsense", "--config", odd}).code == 2);
  CHECK(run({"three-mode", "--config", (dir / "missing.json").string()}).code == 2);
  auto dup = write(dir, "dup.json", R"({"N": 8, "pairs": [{"j": [1], "phi": 5}, {"j": [-1], "phi": 5}]})");
  CHECK(run({"verify", "--config", dup}).code == 2);
}

TEST_CASE("strict regime rejects small N") {
  auto dir = scratch("strict");
  auto r = run({"three-mode", "--config", configs + "/three_mode.json", "--out", dir.string(), "--strict-regime"});
  CHECK(r.code == 2);
  CHECK(r.err.find("regime") != std::string::npos);
}

TEST_CASE("verify outside the small-eps regime completes with flags") {
  auto dir = scratch("eps1");
  auto cfg = write(dir, "e.json", R"({"N": 8, "pairs": [{"j": [1], "phi": 1.0}]})");
  auto r = run({"verify", "--config", cfg, "--out", dir.string()});
  INFO(r.out << r.err);
  CHECK(r.code == 0);
  auto j = read_json(dir / "verify.json");
  int flagged = 0;
  for (const auto& c : j["checks"]) {
    CHECK(c["status"] != "fail");
    if (c["status"] == "flagged") ++flagged;
  }
  CHECK(flagged >= 1);
  CHECK(r.out.find("FLAGGED") != std::string::npos);
}

TEST_CASE("verify passes on the reference config") {
  auto dir = scratch("verify");
  auto r = run({"verify", "--config", configs + "/verify.json", "--out", dir.string(), "--oracle", "on"});
  INFO(r.out << r.err);
  CHECK(r.code == 0);
}

TEST_CASE("oracle can be switched off") {
  auto dir = scratch("nooracle");
  REQUIRE(run({"multi-mode", "--config", configs + "/multi_mode.json", "--out", dir.string(), "--oracle", "off"})
              .code == 0);
  auto j = read_json(dir / "multi-mode.json");
  for (const auto& c : j["checks"]) CHECK(c["module"] != "oracle");
  CHECK_FALSE(j["results"]["stages"][0]["fixed_point"].contains("oracle_energy"));
  CHECK(run({"multi-mode", "--config", configs + "/multi_mode.json", "--oracle", "maybe"}).code == 2);
}

TEST_CASE("dump writes the basis and the operator") {
  auto dir = scratch("dump");
  REQUIRE(run({"dump", "--config", configs + "/three_mode.json", "--out", dir.string()}).code == 0);
  auto j = read_json(dir / "dump.json")["results"];
  CHECK(j["dimension"] == 45);
  CHECK(j["states"].size() == 45);
  CHECK(j["states"][j["condensate_index"].get<std::size_t>()] == json({8, 0, 0}));
  CHECK(j["operator"]["triplets"].size() == j["operator"]["nnz"].get<std::size_t>());
}
