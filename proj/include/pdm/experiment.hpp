#pragma once

// Experiment configuration (JSON) and the solve / verify / bench commands.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pdm/multiagent.hpp"

namespace pdm {

/// Bad configuration; the message starts with the offending field path.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// "all", "spanning_tree", "none", or explicit arc indices.
using ArcSetSpec = std::variant<std::string, std::vector<Index>>;

struct BoxConfig {
  std::vector<double> lower;
  std::vector<double> upper;
  friend bool operator==(const BoxConfig&, const BoxConfig&) = default;
};

struct ProblemConfig {
  std::string kind = "quadratic_consensus";
  Index m = 2;
  Index n = 1;
  // Explicit data; whatever is omitted is drawn from the experiment seed.
  std::vector<std::vector<double>> centers;
  std::vector<double> weights;
  std::vector<BoxConfig> boxes;
  std::vector<std::vector<double>> normals;
  std::vector<double> offsets;
  int power = 2;
  std::vector<double> feasible_point;
  double data_scale = 10.0;
  std::string start = "random";  // x^0: random (uniform in +-data_scale) | origin
  friend bool operator==(const ProblemConfig&, const ProblemConfig&) = default;
};

struct GraphConfig {
  std::string generator = "complete";  // complete | ring | path | star | random_gnp | edges
  double probability = 0.5;
  std::vector<std::vector<Index>> edges;
  friend bool operator==(const GraphConfig&, const GraphConfig&) = default;
};

struct ScheduleConfig {
  std::string kind = "static";  // static | cyclic | random_with_core | adversarial
  std::vector<ArcSetSpec> sets{ArcSetSpec{std::string("all")}};
  ArcSetSpec core{std::string("spanning_tree")};
  double extra_probability = 0.0;
  friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

struct StepsizeConfig {
  double tau = 0.1;
  std::string mode = "per_iteration_norm";  // per_iteration_norm | fixed_upper_bound | constant
  double degree_bound = 0.0;                // 0: derived from the schedule
  double value = 0.0;
  double scale = 1.0;
  friend bool operator==(const StepsizeConfig&, const StepsizeConfig&) = default;
};

struct StoppingConfig {
  double epsilon = 1e-8;
  Index budget = 20000;
  friend bool operator==(const StoppingConfig&, const StoppingConfig&) = default;
};

struct OutputConfig {
  std::string trace;
  std::string ledger;
  std::string summary;
  std::string compare;
  std::string bench;
  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

struct VerifyConfig {
  Index samples = 100;
  Index warmup = 0;
  double slack = 1e-9;
  friend bool operator==(const VerifyConfig&, const VerifyConfig&) = default;
};

struct BenchConfig {
  std::vector<Index> agents;
  Index rounds = 100;
  friend bool operator==(const BenchConfig&, const BenchConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string engine = "pdm";  // pdm | pdmi | both
  ProblemConfig problem;
  GraphConfig graph;
  ScheduleConfig schedule;
  StepsizeConfig stepsize;
  StoppingConfig stopping;
  OutputConfig outputs;
  VerifyConfig verify;
  BenchConfig bench;

  /// Checks ranges and dimensional consistency; throws ConfigError naming the field.
  void validate() const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string serialize_config(const ExperimentConfig& config);

/// Everything a run needs, resolved from a configuration.
struct Experiment {
  CommGraph graph;
  ProblemInstance problem;
  TopologySchedule schedule;
  StepsizePolicy policy;
  StoppingRule stop;
  Index budget;
  RunOptions options;  // carries x^0
};

Experiment build_experiment(const ExperimentConfig& config);

/// CSV with header k,lambda,objective,primal_residual,full_residual,step_norm,
/// p_minus_y,p_minus_yprev,dist_to_ref,active_count and one row per iteration.
void write_trace_csv(std::ostream& out, const std::vector<IterationRecord>& trace);

struct GlobalFlags {
  std::optional<std::string> trace;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

void apply_flags(ExperimentConfig& config, const GlobalFlags& flags);

/// Exit codes: 0 stop rule met, 2 budget exhausted, 1 error.
int cmd_solve(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
/// Exit 0 iff every check passes.
int cmd_verify(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
int cmd_bench(const ExperimentConfig& config, std::ostream& out, std::ostream& err);

enum class Command { Solve, Verify, Bench };
/// Loads the file, applies flags and dispatches; configuration errors give exit 1.
int run_command(Command command, const std::string& config_path, const GlobalFlags& flags,
                std::ostream& out, std::ostream& err);

}  // namespace pdm
