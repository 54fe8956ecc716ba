#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "pdm/experiment.hpp"

using namespace pdm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "pdm_experiment_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& path) {
  std::ifstream in(path);
  std::size_t lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  return lines;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

template <class Fn>
Outcome call(Fn fn, const ExperimentConfig& c) {
  std::ostringstream out, err;
  const int code = fn(c, out, err);
  return {code, out.str(), err.str()};
}

ExperimentConfig two_agents() {
  return parse_config(R"({
    "seed": 1,
    "problem": {"kind": "quadratic_consensus", "m": 2, "n": 1, "centers": [[0], [2]], "start": "origin"},
    "graph": {"generator": "complete"},
    "stopping": {"epsilon": 1e-10, "budget": 5000}
  })");
}

ExperimentConfig feasibility() {
  return parse_config(R"({
    "seed": 3,
    "problem": {"kind": "penalized_feasibility", "m": 5, "n": 2},
    "graph": {"generator": "random_gnp", "probability": 0.6},
    "schedule": {"kind": "random_with_core", "extra_probability": 0.5},
    "stopping": {"epsilon": 0, "budget": 400},
    "verify": {"samples": 50}
  })");
}

}  // namespace

TEST_CASE("config round trip") {
  ExperimentConfig c = feasibility();
  c.schedule.kind = "cyclic";
  c.schedule.sets = {ArcSetSpec{std::string("spanning_tree")}, ArcSetSpec{std::vector<Index>{0, 2}}};
  c.outputs.trace = "t.csv";
  c.bench.agents = {4, 8};
  const ExperimentConfig back = parse_config(serialize_config(c));
  CHECK(back == c);
  CHECK(parse_config(serialize_config(ExperimentConfig{})) == ExperimentConfig{});
}

TEST_CASE("configuration errors name the field") {
  SUBCASE("tau out of range") {
    ExperimentConfig c = two_agents();
    c.stepsize.tau = 1.5;
    const Outcome o = call(cmd_solve, c);
    CHECK(o.code == 1);
    CHECK(o.err.find("stepsize.tau") != std::string::npos);
  }
  SUBCASE("unknown field") {
    try {
      parse_config(R"({"stepsize": {"tau": 0.1, "lamda": 2}})");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("stepsize.lamda") != std::string::npos);
    }
  }
  SUBCASE("malformed JSON reports a position") {
    try {
      parse_config("{\n  \"seed\": ,\n}");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("wrong type") {
    CHECK_THROWS_AS(parse_config(R"({"problem": {"m": "three"}})"), ConfigError);
  }
  SUBCASE("center dimension") {
    CHECK_THROWS_AS(parse_config(R"({"problem": {"m": 2, "n": 2, "centers": [[0, 0], [1]]}})").validate(),
                    ConfigError);
  }
}

TEST_CASE("solve on two agents") {
  ExperimentConfig c = two_agents();
  c.outputs.trace = scratch("two.csv").string();
  c.outputs.summary = scratch("two.json").string();
  const Outcome o = call(cmd_solve, c);
  CHECK(o.code == 0);
  const auto summary = nlohmann::json::parse(slurp(c.outputs.summary));
  const auto x = summary["final_x"].get<std::vector<std::vector<double>>>();
  REQUIRE(x.size() == 2);
  CHECK(x[0][0] == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(x[1][0] == doctest::Approx(1.0).epsilon(1e-8));
  const auto iterations = summary["iterations"].get<std::size_t>();
  CHECK(line_count(c.outputs.trace) == iterations + 1);  // header plus one row per iteration
  CHECK(slurp(c.outputs.trace).rfind("k,lambda,objective,primal_residual,full_residual,", 0) == 0);
}

TEST_CASE("budget exhaustion exits with 2") {
  ExperimentConfig c = two_agents();
  c.stopping.budget = 3;
  CHECK(call(cmd_solve, c).code == 2);
}

TEST_CASE("engine both writes the comparison and both traces") {
  ExperimentConfig c = feasibility();
  c.engine = "both";
  c.stopping.epsilon = 1e-6;
  c.stopping.budget = 20000;
  c.outputs.trace = scratch("both.csv").string();
  c.outputs.compare = scratch("both_compare.json").string();
  c.outputs.ledger = scratch("both_ledger.jsonl").string();
  const Outcome o = call(cmd_solve, c);
  CHECK(o.code == 0);
  const auto report = nlohmann::json::parse(slurp(c.outputs.compare));
  CHECK(report["passed"].get<bool>());
  CHECK(report["max_x_difference"].get<double>() == 0.0);
  CHECK(fs::exists(scratch("both.pdmi.csv")));
  CHECK(line_count(scratch("both.pdmi.csv")) == line_count(c.outputs.trace));
  CHECK(line_count(c.outputs.ledger) > 0);
}

TEST_CASE("verify") {
  SUBCASE("passes on a feasibility instance") {
    const Outcome o = call(cmd_verify, feasibility());
    CHECK(o.code == 0);
    CHECK(o.out.find("fejer_monotonicity") != std::string::npos);
    CHECK(o.out.find("FAIL") == std::string::npos);
  }
  SUBCASE("a stepsize ten times too large is caught") {
    ExperimentConfig c = feasibility();
    c.stepsize.scale = 10.0;
    const Outcome o = call(cmd_verify, c);
    CHECK(o.code == 1);
    CHECK(o.out.find("FAIL") != std::string::npos);
  }
  SUBCASE("refuses without a reference point") {
    ExperimentConfig c = two_agents();
    c.problem.boxes = {BoxConfig{{-1}, {0.5}}, BoxConfig{{1.5}, {3}}};
    const Outcome o = call(cmd_verify, c);
    CHECK(o.code == 1);
    CHECK(o.err.find("reference") != std::string::npos);
  }
}

TEST_CASE("bench") {
  ExperimentConfig c = two_agents();
  SUBCASE("empty agent list is an error") {
    CHECK(call(cmd_bench, c).code == 1);
  }
  SUBCASE("csv has one row per size") {
    c.bench.agents = {3, 5};
    c.bench.rounds = 5;
    c.outputs.bench = scratch("bench.csv").string();
    CHECK(call(cmd_bench, c).code == 0);
    CHECK(line_count(c.outputs.bench) == 3);
    CHECK(slurp(c.outputs.bench).rfind("m,arcs,rounds,seconds,", 0) == 0);
  }
}

TEST_CASE("same seed gives identical traces, different seed does not") {
  ExperimentConfig c = feasibility();
  c.outputs.trace = scratch("seed_a.csv").string();
  call(cmd_solve, c);
  c.outputs.trace = scratch("seed_b.csv").string();
  call(cmd_solve, c);
  CHECK(slurp(scratch("seed_a.csv")) == slurp(scratch("seed_b.csv")));
  c.seed = 4;
  c.outputs.trace = scratch("seed_c.csv").string();
  call(cmd_solve, c);
  CHECK(slurp(scratch("seed_a.csv")) != slurp(scratch("seed_c.csv")));
}

TEST_CASE("global flags override the file") {
  ExperimentConfig c = two_agents();
  GlobalFlags flags;
  flags.seed = 99;
  flags.trace = "x.csv";
  apply_flags(c, flags);
  CHECK(c.seed == 99);
  CHECK(c.outputs.trace == "x.csv");
}

TEST_CASE("run_command reports a missing file") {
  std::ostringstream out, err;
  CHECK(run_command(Command::Solve, scratch("missing.json").string(), {}, out, err) == 1);
  CHECK_FALSE(err.str().empty());
}
