#include "pdm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace pdm {

using nlohmann::json;

namespace {

constexpr std::uint64_t kGraphSalt = 0x9e3779b97f4a7c15ULL;
constexpr std::uint64_t kDataSalt = 0xbf58476d1ce4e5b9ULL;
constexpr std::uint64_t kScheduleSalt = 0x94d049bb133111ebULL;
constexpr std::uint64_t kVerifySalt = 0x2545f4914f6cdd1dULL;
constexpr std::uint64_t kStartSalt = 0x632be59bd9b4e019ULL;

double unit_draw(std::mt19937_64& gen) { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }

double uniform(std::mt19937_64& gen, double lo, double hi) {
  return lo + (hi - lo) * unit_draw(gen);
}

Vector uniform_vector(std::mt19937_64& gen, Index n, double lo, double hi) {
  Vector v(n);
  for (Index j = 0; j < n; ++j) v[j] = uniform(gen, lo, hi);
  return v;
}

Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw ConfigError(field + ": " + what);
}

// ---------------------------------------------------------------------------
// JSON reading with field paths in every diagnostic.

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  template <class T>
  void read(const std::string& key, T& out) const {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(field(key), std::string("wrong type (") + e.what() + ")");
    }
  }

  void read_set(const std::string& key, ArcSetSpec& out) const {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    out = parse_set(j_.at(key), field(key));
  }

  void read_sets(const std::string& key, std::vector<ArcSetSpec>& out) const {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& arr = j_.at(key);
    if (!arr.is_array()) fail(field(key), "expected an array of arc sets");
    out.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      out.push_back(parse_set(arr[i], field(key) + "[" + std::to_string(i) + "]"));
    }
  }

  void read_boxes(const std::string& key, std::vector<BoxConfig>& out) const {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& arr = j_.at(key);
    if (!arr.is_array()) fail(field(key), "expected an array of boxes");
    out.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Reader box(arr[i], field(key) + "[" + std::to_string(i) + "]");
      BoxConfig b;
      box.read("lower", b.lower);
      box.read("upper", b.upper);
      box.finish();
      out.push_back(std::move(b));
    }
  }

  const json* child(const std::string& key) const {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(field(item.key()), "unknown field");
    }
  }

 private:
  static ArcSetSpec parse_set(const json& j, const std::string& where) {
    if (j.is_string()) {
      const auto s = j.get<std::string>();
      if (s != "all" && s != "spanning_tree" && s != "none") {
        fail(where, "arc set must be \"all\", \"spanning_tree\", \"none\" or an index list");
      }
      return s;
    }
    if (j.is_array()) {
      try {
        return j.get<std::vector<Index>>();
      } catch (const json::exception&) {
        fail(where, "arc index list must hold integers");
      }
    }
    fail(where, "arc set must be a string or an array");
  }

  const json& j_;
  std::string path_;
  mutable std::set<std::string> seen_;
};

json set_to_json(const ArcSetSpec& s) {
  if (const auto* name = std::get_if<std::string>(&s)) return *name;
  return std::get<std::vector<Index>>(s);
}

IndexSet resolve_set(const ArcSetSpec& spec, const CommGraph& graph, const std::string& field) {
  if (const auto* name = std::get_if<std::string>(&spec)) {
    if (*name == "all") return graph.all_arcs();
    if (*name == "spanning_tree") return graph.spanning_tree();
    return IndexSet(graph.arc_count());
  }
  try {
    return IndexSet(graph.arc_count(), std::get<std::vector<Index>>(spec));
  } catch (const InvalidArgument& e) {
    fail(field, e.what());
  }
}

CommGraph build_graph(const GraphConfig& g, Index m, std::uint64_t seed) {
  if (g.generator == "complete") return CommGraph::complete(m);
  if (g.generator == "ring") return CommGraph::ring(m);
  if (g.generator == "path") return CommGraph::path(m);
  if (g.generator == "star") return CommGraph::star(m);
  if (g.generator == "random_gnp") return CommGraph::random_gnp(m, g.probability, seed ^ kGraphSalt);
  std::vector<ConsensusArc> edges;
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    if (g.edges[i].size() != 2) fail("graph.edges[" + std::to_string(i) + "]", "expected a pair");
    edges.push_back({g.edges[i][0], g.edges[i][1]});
  }
  try {
    return CommGraph(m, std::move(edges));
  } catch (const InvalidArgument& e) {
    fail("graph.edges", e.what());
  }
}

ProblemInstance build_problem(const ProblemConfig& p, const CommGraph& graph, std::uint64_t seed) {
  const Index m = p.m;
  const Index n = p.n;
  const auto sys = graph.constraints(n);
  std::mt19937_64 gen(seed ^ kDataSalt);
  const double scale = p.data_scale;

  std::vector<Vector> centers;
  for (const auto& c : p.centers) centers.push_back(to_vector(c));
  if (centers.empty() && p.kind != "penalized_feasibility") {
    for (Index i = 0; i < m; ++i) centers.push_back(uniform_vector(gen, n, -scale, scale));
  }
  std::optional<std::vector<Box>> boxes;
  if (!p.boxes.empty()) {
    boxes.emplace();
    for (const auto& b : p.boxes) boxes->push_back(Box{to_vector(b.lower), to_vector(b.upper)});
  }

  try {
    if (p.kind == "quadratic_consensus") {
      return make_builtin(sys, QuadraticConsensusParams{centers, p.weights, boxes});
    }
    if (p.kind == "constrained_least_squares") {
      std::vector<double> weights = p.weights;
      if (weights.empty()) {
        for (Index i = 0; i < m; ++i) weights.push_back(uniform(gen, 0.5, 2.0));
      }
      if (!boxes) {
        boxes.emplace();
        for (Index i = 0; i < m; ++i) {
          const double half = uniform(gen, 0.25, 0.75) * scale;
          boxes->push_back(Box{Vector::Constant(n, -half), Vector::Constant(n, half)});
        }
      }
      return make_builtin(sys, ConstrainedLeastSquaresParams{centers, weights, *boxes});
    }
    PenalizedFeasibilityParams params;
    params.power = p.power;
    if (!p.feasible_point.empty()) params.feasible_point = to_vector(p.feasible_point);
    if (p.normals.empty()) {
      if (!params.feasible_point) {
        params.feasible_point = uniform_vector(gen, n, -0.5 * scale, 0.5 * scale);
      }
      for (Index i = 0; i < m; ++i) {
        Vector g = uniform_vector(gen, n, -1.0, 1.0);
        if (g.norm() < 1e-3) g = Vector::Ones(n);
        g.normalize();
        params.normals.push_back(g);
        params.offsets.push_back(g.dot(*params.feasible_point) + uniform(gen, 0.0, 1.0));
      }
    } else {
      for (const auto& g : p.normals) params.normals.push_back(to_vector(g));
      params.offsets = p.offsets;
    }
    return make_builtin(sys, params);
  } catch (const InvalidArgument& e) {
    fail("problem", e.what());
  } catch (const DimensionError& e) {
    fail("problem", e.what());
  }
}

void check_vector_list(const std::vector<std::vector<double>>& list, Index m, Index n,
                       const std::string& field) {
  if (list.empty()) return;
  if (static_cast<Index>(list.size()) != m) {
    fail(field, "expected " + std::to_string(m) + " entries, got " + std::to_string(list.size()));
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (static_cast<Index>(list[i].size()) != n) {
      fail(field + "[" + std::to_string(i) + "]", "expected length n = " + std::to_string(n));
    }
  }
}

json vector_json(const BlockVector& x) {
  json out = json::array();
  for (Index i = 0; i < x.blocks(); ++i) {
    json block = json::array();
    for (Index j = 0; j < x.block_size(); ++j) block.push_back(x.block(i)[j]);
    out.push_back(block);
  }
  return out;
}

json summary_json(const std::string& engine, const RunResult& r) {
  const auto& last = r.trace.back();
  json s = {{"engine", engine},
            {"stop_reason", to_string(r.reason)},
            {"iterations", r.trace.size()},
            {"final_x", vector_json(r.state.x)},
            {"final_objective", last.objective},
            {"final_full_residual", last.full_residual},
            {"final_primal_residual", last.primal_residual},
            {"final_step_norm", last.step_norm},
            {"final_lambda", last.lambda},
            {"final_active", r.state.active.members()}};
  if (!std::isnan(last.dist_to_ref)) s["final_dist_to_ref"] = last.dist_to_ref;
  return s;
}

void write_file(const std::string& path, const std::string& what,
                const std::function<void(std::ostream&)>& body) {
  std::ofstream file(path);
  if (!file) throw Error("cannot open " + what + " file '" + path + "' for writing");
  body(file);
}

std::string pdmi_trace_path(const std::string& trace) {
  const auto dot = trace.rfind('.');
  const auto slash = trace.find_last_of('/');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) {
    return trace + ".pdmi";
  }
  return trace.substr(0, dot) + ".pdmi" + trace.substr(dot);
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  if (engine != "pdm" && engine != "pdmi" && engine != "both") {
    fail("engine", "must be pdm, pdmi or both");
  }
  const auto& p = problem;
  if (p.kind != "quadratic_consensus" && p.kind != "penalized_feasibility" &&
      p.kind != "constrained_least_squares") {
    fail("problem.kind",
         "must be quadratic_consensus, penalized_feasibility or constrained_least_squares");
  }
  if (p.m < 1) fail("problem.m", "must be >= 1");
  if (p.n < 1) fail("problem.n", "must be >= 1");
  check_vector_list(p.centers, p.m, p.n, "problem.centers");
  check_vector_list(p.normals, p.m, p.n, "problem.normals");
  if (!p.weights.empty() && static_cast<Index>(p.weights.size()) != p.m) {
    fail("problem.weights", "expected one weight per agent");
  }
  for (double a : p.weights) {
    if (!(a >= 0.0)) fail("problem.weights", "negative curvature: weights must be >= 0");
  }
  if (!p.boxes.empty()) {
    if (static_cast<Index>(p.boxes.size()) != p.m) fail("problem.boxes", "expected one box per agent");
    for (std::size_t i = 0; i < p.boxes.size(); ++i) {
      const auto& b = p.boxes[i];
      const std::string f = "problem.boxes[" + std::to_string(i) + "]";
      if (static_cast<Index>(b.lower.size()) != p.n || static_cast<Index>(b.upper.size()) != p.n) {
        fail(f, "lower and upper need length n");
      }
      for (Index j = 0; j < p.n; ++j) {
        if (!(b.lower[static_cast<std::size_t>(j)] <= b.upper[static_cast<std::size_t>(j)])) {
          fail(f, "malformed box: lower > upper");
        }
      }
    }
  }
  if (p.kind == "penalized_feasibility") {
    if (p.power != 1 && p.power != 2) fail("problem.power", "must be 1 or 2");
    if (!p.boxes.empty()) fail("problem.boxes", "penalized_feasibility uses X_i = R^n");
    if (!p.normals.empty() && static_cast<Index>(p.offsets.size()) != p.m) {
      fail("problem.offsets", "expected one offset per normal");
    }
  }
  if (!p.feasible_point.empty() && static_cast<Index>(p.feasible_point.size()) != p.n) {
    fail("problem.feasible_point", "expected length n");
  }
  if (!(p.data_scale > 0.0)) fail("problem.data_scale", "must be positive");
  if (p.start != "random" && p.start != "origin") fail("problem.start", "must be random or origin");

  const auto& g = graph;
  if (g.generator != "complete" && g.generator != "ring" && g.generator != "path" &&
      g.generator != "star" && g.generator != "random_gnp" && g.generator != "edges") {
    fail("graph.generator", "must be complete, ring, path, star, random_gnp or edges");
  }
  if (!(g.probability >= 0.0 && g.probability <= 1.0)) fail("graph.probability", "must lie in [0, 1]");

  const auto& s = schedule;
  if (s.kind != "static" && s.kind != "cyclic" && s.kind != "random_with_core" &&
      s.kind != "adversarial") {
    fail("schedule.kind", "must be static, cyclic, random_with_core or adversarial");
  }
  if (s.sets.empty() && s.kind != "random_with_core") fail("schedule.sets", "needs at least one set");
  if (s.kind == "static" && s.sets.size() != 1) fail("schedule.sets", "static takes exactly one set");
  if (!(s.extra_probability >= 0.0 && s.extra_probability <= 1.0)) {
    fail("schedule.extra_probability", "must lie in [0, 1]");
  }

  const auto& st = stepsize;
  if (!(st.tau > 0.0 && st.tau < 1.0)) fail("stepsize.tau", "must lie in (0, 1)");
  if (st.mode != "per_iteration_norm" && st.mode != "fixed_upper_bound" && st.mode != "constant") {
    fail("stepsize.mode", "must be per_iteration_norm, fixed_upper_bound or constant");
  }
  if (st.mode == "constant" && !(st.value > 0.0)) fail("stepsize.value", "must be positive");
  if (!(st.degree_bound >= 0.0)) fail("stepsize.degree_bound", "must be >= 0");
  if (!(st.scale > 0.0)) fail("stepsize.scale", "must be positive");

  if (stopping.budget < 1) fail("stopping.budget", "must be >= 1");
  if (!(stopping.epsilon >= 0.0)) fail("stopping.epsilon", "must be >= 0");
  if (verify.samples < 0) fail("verify.samples", "must be >= 0");
  if (verify.warmup < 0) fail("verify.warmup", "must be >= 0");
  if (!(verify.slack >= 0.0)) fail("verify.slack", "must be >= 0");
  if (bench.rounds < 1) fail("bench.rounds", "must be >= 1");
  for (Index m : bench.agents) {
    if (m < 2) fail("bench.agents", "agent counts must be >= 2");
  }
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into line/column.
    const std::size_t at = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(at), '\n');
    const auto nl = text.rfind('\n', at == 0 ? 0 : at - 1);
    const auto column = nl == std::string::npos ? at + 1 : at - nl;
    throw ConfigError("line " + std::to_string(line) + ", column " + std::to_string(column) +
                      ": invalid JSON (" + e.what() + ")");
  }

  ExperimentConfig c;
  Reader r(root, "");
  r.read("seed", c.seed);
  r.read("engine", c.engine);
  if (const json* j = r.child("problem")) {
    Reader p(*j, "problem");
    auto& pc = c.problem;
    p.read("kind", pc.kind);
    p.read("m", pc.m);
    p.read("n", pc.n);
    p.read("centers", pc.centers);
    p.read("weights", pc.weights);
    p.read_boxes("boxes", pc.boxes);
    p.read("normals", pc.normals);
    p.read("offsets", pc.offsets);
    p.read("power", pc.power);
    p.read("feasible_point", pc.feasible_point);
    p.read("data_scale", pc.data_scale);
    p.read("start", pc.start);
    p.finish();
  }
  if (const json* j = r.child("graph")) {
    Reader g(*j, "graph");
    g.read("generator", c.graph.generator);
    g.read("probability", c.graph.probability);
    g.read("edges", c.graph.edges);
    g.finish();
  }
  if (const json* j = r.child("schedule")) {
    Reader s(*j, "schedule");
    s.read("kind", c.schedule.kind);
    s.read_sets("sets", c.schedule.sets);
    s.read_set("core", c.schedule.core);
    s.read("extra_probability", c.schedule.extra_probability);
    s.finish();
  }
  if (const json* j = r.child("stepsize")) {
    Reader s(*j, "stepsize");
    s.read("tau", c.stepsize.tau);
    s.read("mode", c.stepsize.mode);
    s.read("degree_bound", c.stepsize.degree_bound);
    s.read("value", c.stepsize.value);
    s.read("scale", c.stepsize.scale);
    s.finish();
  }
  if (const json* j = r.child("stopping")) {
    Reader s(*j, "stopping");
    s.read("epsilon", c.stopping.epsilon);
    s.read("budget", c.stopping.budget);
    s.finish();
  }
  if (const json* j = r.child("outputs")) {
    Reader o(*j, "outputs");
    o.read("trace", c.outputs.trace);
    o.read("ledger", c.outputs.ledger);
    o.read("summary", c.outputs.summary);
    o.read("compare", c.outputs.compare);
    o.read("bench", c.outputs.bench);
    o.finish();
  }
  if (const json* j = r.child("verify")) {
    Reader v(*j, "verify");
    v.read("samples", c.verify.samples);
    v.read("warmup", c.verify.warmup);
    v.read("slack", c.verify.slack);
    v.finish();
  }
  if (const json* j = r.child("bench")) {
    Reader b(*j, "bench");
    b.read("agents", c.bench.agents);
    b.read("rounds", c.bench.rounds);
    b.finish();
  }
  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buffer;
  buffer << file.rdbuf();
  return parse_config(buffer.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json boxes = json::array();
  for (const auto& b : c.problem.boxes) boxes.push_back({{"lower", b.lower}, {"upper", b.upper}});
  json sets = json::array();
  for (const auto& s : c.schedule.sets) sets.push_back(set_to_json(s));
  json root = {
      {"seed", c.seed},
      {"engine", c.engine},
      {"problem",
       {{"kind", c.problem.kind},
        {"m", c.problem.m},
        {"n", c.problem.n},
        {"centers", c.problem.centers},
        {"weights", c.problem.weights},
        {"boxes", boxes},
        {"normals", c.problem.normals},
        {"offsets", c.problem.offsets},
        {"power", c.problem.power},
        {"feasible_point", c.problem.feasible_point},
        {"data_scale", c.problem.data_scale},
        {"start", c.problem.start}}},
      {"graph",
       {{"generator", c.graph.generator},
        {"probability", c.graph.probability},
        {"edges", c.graph.edges}}},
      {"schedule",
       {{"kind", c.schedule.kind},
        {"sets", sets},
        {"core", set_to_json(c.schedule.core)},
        {"extra_probability", c.schedule.extra_probability}}},
      {"stepsize",
       {{"tau", c.stepsize.tau},
        {"mode", c.stepsize.mode},
        {"degree_bound", c.stepsize.degree_bound},
        {"value", c.stepsize.value},
        {"scale", c.stepsize.scale}}},
      {"stopping", {{"epsilon", c.stopping.epsilon}, {"budget", c.stopping.budget}}},
      {"outputs",
       {{"trace", c.outputs.trace},
        {"ledger", c.outputs.ledger},
        {"summary", c.outputs.summary},
        {"compare", c.outputs.compare},
        {"bench", c.outputs.bench}}},
      {"verify",
       {{"samples", c.verify.samples}, {"warmup", c.verify.warmup}, {"slack", c.verify.slack}}},
      {"bench", {{"agents", c.bench.agents}, {"rounds", c.bench.rounds}}},
  };
  return root.dump(2);
}

Experiment build_experiment(const ExperimentConfig& config) {
  config.validate();
  CommGraph graph = build_graph(config.graph, config.problem.m, config.seed);
  ProblemInstance problem = build_problem(config.problem, graph, config.seed);

  const auto& sc = config.schedule;
  const Index l = graph.arc_count();
  auto resolve_all = [&](const char* field) {
    std::vector<IndexSet> sets;
    for (std::size_t i = 0; i < sc.sets.size(); ++i) {
      sets.push_back(resolve_set(sc.sets[i], graph,
                                 std::string(field) + "[" + std::to_string(i) + "]"));
    }
    return sets;
  };
  ScheduleKind kind;
  if (sc.kind == "static") {
    kind = StaticSchedule{resolve_all("schedule.sets").front()};
  } else if (sc.kind == "cyclic") {
    kind = CyclicSchedule{resolve_all("schedule.sets")};
  } else if (sc.kind == "adversarial") {
    kind = AdversarialSchedule{resolve_all("schedule.sets")};
  } else {
    kind = RandomWithCoreSchedule{resolve_set(sc.core, graph, "schedule.core"),
                                  sc.extra_probability, config.seed ^ kScheduleSalt};
  }
  TopologySchedule schedule(std::move(kind), l);

  StepsizePolicy policy;
  policy.tau = config.stepsize.tau;
  policy.scale = config.stepsize.scale;
  if (config.stepsize.mode == "per_iteration_norm") {
    policy.mode = PerIterationNorm{};
  } else if (config.stepsize.mode == "constant") {
    policy.mode = ConstantStep{config.stepsize.value};
  } else {
    double v = config.stepsize.degree_bound;
    if (v == 0.0) v = static_cast<double>(std::max<Index>(1, schedule_degree_bound(graph, schedule)));
    policy.mode = FixedUpperBound{v};
  }
  RunOptions options;
  if (config.problem.start == "random") {
    std::mt19937_64 gen(config.seed ^ kStartSalt);
    const Index size = problem.agents() * problem.block_size();
    const double scale = config.problem.data_scale;
    options.x0 = BlockVector(problem.agents(), problem.block_size(),
                             uniform_vector(gen, size, -scale, scale));
  }
  return Experiment{std::move(graph), std::move(problem), std::move(schedule), policy,
                    StoppingRule{config.stopping.epsilon}, config.stopping.budget, options};
}

void write_trace_csv(std::ostream& out, const std::vector<IterationRecord>& trace) {
  out << "k,lambda,objective,primal_residual,full_residual,step_norm,p_minus_y,p_minus_yprev,"
         "dist_to_ref,active_count\n";
  out << std::setprecision(17);
  for (const auto& r : trace) {
    out << r.k << ',' << r.lambda << ',' << r.objective << ',' << r.primal_residual << ','
        << r.full_residual << ',' << r.step_norm << ',' << r.p_minus_y << ',' << r.p_minus_yprev
        << ',';
    if (!std::isnan(r.dist_to_ref)) out << r.dist_to_ref;
    out << ',' << r.active_count << '\n';
  }
}

void apply_flags(ExperimentConfig& config, const GlobalFlags& flags) {
  if (flags.trace) config.outputs.trace = *flags.trace;
  if (flags.seed) config.seed = *flags.seed;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_solve(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
  try {
    const Experiment ex = build_experiment(config);
    const bool use_pdm = config.engine != "pdmi";
    const bool use_pdmi = config.engine != "pdm";
    RunOptions options = ex.options;
    options.keep_iterates = use_pdm && use_pdmi;

    std::optional<RunResult> pdm_run;
    std::optional<PdmiRunResult> pdmi_run;
    if (use_pdm) pdm_run = run(ex.problem, ex.schedule, ex.policy, ex.stop, ex.budget, options);
    if (use_pdmi) {
      PdmiOptions po;
      po.run = options;
      po.record_messages = !config.outputs.ledger.empty();
      pdmi_run = run_pdmi(ex.problem, ex.schedule, ex.policy, ex.stop, ex.budget, po);
    }

    const RunResult& primary = pdm_run ? *pdm_run : pdmi_run->run;
    json summary = summary_json(use_pdm ? "pdm" : "pdmi", primary);
    summary["problem"] = ex.problem.kind();
    bool ok = primary.reason == StopReason::Converged;
    if (pdm_run && pdmi_run) {
      ok = ok && pdmi_run->run.reason == StopReason::Converged;
      const CompareReport cmp = compare_runs(*pdm_run, pdmi_run->run);
      json report = {{"iterations", cmp.iterations},
                     {"max_x_difference", cmp.max_x_difference},
                     {"max_y_difference", cmp.max_y_difference},
                     {"tolerance", cmp.tolerance},
                     {"passed", cmp.passed()}};
      summary["pdmi"] = summary_json("pdmi", pdmi_run->run);
      summary["compare"] = report;
      if (!config.outputs.compare.empty()) {
        write_file(config.outputs.compare, "compare report",
                   [&](std::ostream& f) { f << report.dump(2) << '\n'; });
      }
      if (!cmp.passed()) {
        err << "PDM and PDMI iterates differ by more than " << cmp.tolerance << '\n';
        ok = false;
      }
    }

    if (!config.outputs.trace.empty()) {
      write_file(config.outputs.trace, "trace",
                 [&](std::ostream& f) { write_trace_csv(f, primary.trace); });
      if (pdm_run && pdmi_run) {
        write_file(pdmi_trace_path(config.outputs.trace), "trace",
                   [&](std::ostream& f) { write_trace_csv(f, pdmi_run->run.trace); });
      }
    }
    if (pdmi_run && !config.outputs.ledger.empty()) {
      write_file(config.outputs.ledger, "ledger",
                 [&](std::ostream& f) { pdmi_run->ledger.write_jsonl(f); });
    }
    if (!config.outputs.summary.empty()) {
      write_file(config.outputs.summary, "summary",
                 [&](std::ostream& f) { f << summary.dump(2) << '\n'; });
    }
    out << summary.dump(2) << '\n';
    if (ok) return 0;
    return primary.reason == StopReason::BudgetExhausted ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int cmd_verify(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
  try {
    const Experiment ex = build_experiment(config);
    if (!ex.problem.reference()) {
      err << "error: verify needs a reference saddle point w* = (x*, y*). Quadratic instances "
             "get one when the graph is connected and every box holds the weighted mean; for "
             "feasibility-type instances give problem.feasible_point, since a common feasible "
             "point x* with zero duals is a saddle point for every active set.\n";
      return 1;
    }
    const auto& sys = ex.problem.constraints();
    const RunResult result = run(ex.problem, ex.schedule, ex.policy, ex.stop, ex.budget, ex.options);

    struct Row {
      std::string check;
      bool passed;
      std::string detail;
    };
    std::vector<Row> rows;
    auto fmt = [](double v) {
      std::ostringstream s;
      s << std::setprecision(3) << std::scientific << v;
      return s.str();
    };

    const FejerReport fejer = check_fejer(result, config.stepsize.tau, config.verify.warmup,
                                          config.verify.slack);
    rows.push_back({"fejer_monotonicity", fejer.passed,
                    "steps " + std::to_string(fejer.checked) + ", worst excess " +
                        fmt(fejer.worst_excess) +
                        (fejer.first_violation
                             ? ", first violation at k=" + std::to_string(*fejer.first_violation)
                             : std::string())});

    // Visited active sets (distinct, first 64).
    std::vector<IndexSet> visited;
    std::set<std::vector<Index>> seen;
    for (Index k = 1; k <= static_cast<Index>(result.trace.size()) && visited.size() < 64; ++k) {
      IndexSet I = schedule_next(ex.schedule, k);
      if (seen.insert(I.members()).second) visited.push_back(std::move(I));
    }

    // Stepsizes inside [tau, sqrt(1 - tau) / (sqrt(2) ||A_I||)].
    bool in_interval = true;
    double worst_ratio = 0.0;
    for (const auto& r : result.trace) {
      const IndexSet I = schedule_next(ex.schedule, r.k);
      if (I.empty()) continue;
      const double upper =
          std::sqrt(1.0 - config.stepsize.tau) / (std::sqrt(2.0) * operator_norm(sys, I));
      worst_ratio = std::max(worst_ratio, r.lambda / upper);
      if (r.lambda > upper * (1.0 + 1e-12) || r.lambda < config.stepsize.tau) in_interval = false;
      if (r.k > 256) break;
    }
    rows.push_back({"stepsize_interval", in_interval, "max lambda/upper " + fmt(worst_ratio)});

    // Prox three-point inequality on random tuples.
    std::mt19937_64 gen(config.seed ^ kVerifySalt);
    const double scale = config.problem.data_scale;
    double worst = -std::numeric_limits<double>::infinity();
    bool prox_ok = true;
    const Index n = ex.problem.block_size();
    for (Index s = 0; s < config.verify.samples; ++s) {
      const Index block = s % ex.problem.agents();
      const double lambda = std::pow(10.0, uniform(gen, -2.0, 1.0));
      const Vector u = uniform_vector(gen, n, -scale, scale);
      const Vector linear = uniform_vector(gen, n, -1.0, 1.0);
      const Vector z = project(ex.problem.set(block), uniform_vector(gen, n, -scale, scale));
      const Vector v =
          block_prox(ex.problem.term(block), ex.problem.set(block), linear, u, lambda, 1e-12, block);
      auto phi = [&](const Vector& w) { return term_value(ex.problem.term(block), w) + linear.dot(w); };
      const double lhs = 2.0 * lambda * (phi(v) - phi(z));
      const double rhs = (z - u).squaredNorm() - (z - v).squaredNorm() - (v - u).squaredNorm();
      const double excess = (lhs - rhs) / (1.0 + (z - u).squaredNorm());
      worst = std::max(worst, excess);
      if (excess > 1e-9) prox_ok = false;
    }
    rows.push_back({"prox_three_point", prox_ok,
                    std::to_string(config.verify.samples) + " samples, worst relative excess " +
                        fmt(worst)});

    // Power iteration against a dense eigensolve, and the Gershgorin bound.
    bool norms_ok = true;
    double worst_gap = 0.0;
    for (const auto& I : visited) {
      if (I.empty()) continue;
      const double estimate = operator_norm(sys, I);
      const Eigen::SelfAdjointEigenSolver<Matrix> eig(kirchhoff(ex.graph, I),
                                                      Eigen::EigenvaluesOnly);
      const double exact = std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0));
      worst_gap = std::max(worst_gap, std::abs(estimate - exact));
      const double bound = std::sqrt(2.0 * static_cast<double>(max_degree(ex.graph, I)));
      if (std::abs(estimate - exact) > 1e-8 || estimate > bound + 1e-12) norms_ok = false;
    }
    rows.push_back({"norm_bounds", norms_ok,
                    std::to_string(visited.size()) + " sets, worst |power - eig| " + fmt(worst_gap)});

    bool basic_ok = true;
    Index basic_count = 0;
    for (const auto& I : visited) {
      const bool basic = is_basic_index_set(sys, I, IndexSet::full(sys.arcs()));
      basic_count += basic ? 1 : 0;
      if (basic != is_connected(ex.graph, I)) basic_ok = false;
    }
    rows.push_back({"basic_set_connectivity", basic_ok,
                    std::to_string(basic_count) + " of " + std::to_string(visited.size()) +
                        " visited sets basic"});

    bool all = true;
    out << std::left << std::setw(26) << "check" << std::setw(8) << "result" << "detail\n";
    for (const auto& row : rows) {
      out << std::left << std::setw(26) << row.check << std::setw(8)
          << (row.passed ? "PASS" : "FAIL") << row.detail << '\n';
      all = all && row.passed;
    }
    return all ? 0 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int cmd_bench(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
  try {
    if (config.bench.agents.empty()) fail("bench.agents", "needs at least one agent count");
    config.validate();
    std::ostringstream csv;
    csv << "m,arcs,rounds,seconds,rounds_per_second,sync_us,phase1_us,phase2_us,phase3_us,"
           "messages_per_round\n";
    for (Index m : config.bench.agents) {
      ExperimentConfig c = config;
      c.problem.kind = "quadratic_consensus";
      c.problem.m = m;
      c.problem.centers.clear();
      c.problem.weights.clear();
      c.problem.boxes.clear();
      c.stopping.epsilon = 0.0;
      c.stopping.budget = config.bench.rounds;
      const Experiment ex = build_experiment(c);

      PdmiOptions po;
      po.run = ex.options;
      const auto start = std::chrono::steady_clock::now();
      const PdmiRunResult r =
          run_pdmi(ex.problem, ex.schedule, ex.policy, ex.stop, ex.budget, po);
      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      const double rounds = static_cast<double>(r.run.trace.size());
      const double messages =
          static_cast<double>(r.ledger.size() - r.ledger.count_in_round(0)) / rounds;
      csv << m << ',' << ex.graph.arc_count() << ',' << r.run.trace.size() << ',' << seconds << ','
          << rounds / seconds;
      for (double ph : r.phase_seconds) csv << ',' << 1e6 * ph / rounds;
      csv << ',' << messages << '\n';
    }
    if (config.outputs.bench.empty()) {
      out << csv.str();
    } else {
      write_file(config.outputs.bench, "bench", [&](std::ostream& f) { f << csv.str(); });
      out << "wrote " << config.outputs.bench << '\n';
    }
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

int run_command(Command command, const std::string& config_path, const GlobalFlags& flags,
                std::ostream& out, std::ostream& err) {
  ExperimentConfig config;
  try {
    config = load_config(config_path);
    apply_flags(config, flags);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  std::ostringstream sink;
  std::ostream& target = flags.quiet ? sink : out;
  switch (command) {
    case Command::Solve: return cmd_solve(config, target, err);
    case Command::Verify: return cmd_verify(config, target, err);
    case Command::Bench: return cmd_bench(config, target, err);
  }
  return 1;
}

}  // namespace pdm
