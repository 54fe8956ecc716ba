#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "oracles.hpp"
#include "pdm/multiagent.hpp"

using namespace pdm;

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index j = 0;
  for (double x : values) v[j++] = x;
  return v;
}

ProblemInstance random_quadratic(const CommGraph& g, Index n, std::mt19937_64& gen) {
  std::vector<Vector> centers;
  for (Index i = 0; i < g.agents(); ++i) centers.push_back(oracles::uniform_vector(gen, n, -5, 5));
  return make_builtin(g.constraints(n), QuadraticConsensusParams{centers, {}, std::nullopt});
}

BlockVector random_point(const ProblemInstance& prob, std::mt19937_64& gen) {
  return BlockVector(prob.agents(), prob.block_size(),
                     oracles::uniform_vector(gen, prob.agents() * prob.block_size(), -5, 5));
}

std::size_t count_kind(const std::vector<Message>& msgs, int phase) {
  return static_cast<std::size_t>(
      std::count_if(msgs.begin(), msgs.end(), [&](const Message& m) { return m.phase == phase; }));
}

}  // namespace

TEST_CASE("one round matches one centralised step exactly") {
  const auto sys = ArcConstraintSystem::consensus(2, 1, {{0, 1}});
  const auto prob =
      make_builtin(sys, QuadraticConsensusParams{{vec({0.0}), vec({2.0})}, {}, std::nullopt});
  const IndexSet I = IndexSet::full(1);
  const BlockVector x0(2, 1, vec({0.0, 2.0}));
  const auto agents = make_agents(prob, I, x0);
  const RoundOutput out = pdmi_round(agents, 1, I, 0.4, 1e-10);
  const PdmState central = pdm_step(prob, initial_state(prob, I, x0), I, 0.4);
  const PdmState gathered = gather_state(out.agents, I, 1, 0.4, 1);
  CHECK(gathered.x == central.x);
  CHECK(gathered.y == central.y);
  CHECK(gathered.p == central.p);
  CHECK(gathered.x.data()[0] == doctest::Approx(0.8 / 3.5));
  CHECK(gathered.x.data()[1] == doctest::Approx(6.2 / 3.5));
}

TEST_CASE("message accounting") {
  const CommGraph g = CommGraph::complete(5);
  std::mt19937_64 gen(1);
  const auto prob = random_quadratic(g, 2, gen);
  const IndexSet I = g.spanning_tree();
  MessageLedger ledger;
  auto agents = make_agents(prob, I, random_point(prob, gen), &ledger);
  const auto a = static_cast<std::size_t>(I.size());
  CHECK(ledger.count_in_round(0) == 3 * a);

  for (Index k = 1; k <= 3; ++k) {
    RoundOutput out = pdmi_round(agents, k, I, 0.3, 1e-10);
    CHECK(out.messages.size() == 4 * a);
    CHECK(count_kind(out.messages, 0) == 0);
    CHECK(count_kind(out.messages, 1) == a);
    CHECK(count_kind(out.messages, 2) == 2 * a);
    CHECK(count_kind(out.messages, 3) == a);
    for (const auto& m : out.messages) {
      CHECK(I.contains(m.arc));
      const auto& arc = g.arc(m.arc);
      CHECK(((m.sender == arc.tail && m.receiver == arc.head) ||
             (m.sender == arc.head && m.receiver == arc.tail)));
      if (m.kind != PayloadKind::XReport) CHECK(m.sender == arc.tail);
    }
    agents = std::move(out.agents);
  }

  SUBCASE("empty active set: no messages, isolated prox steps") {
    const IndexSet none(g.arc_count());
    RoundOutput out = pdmi_round(agents, 4, none, 0.3, 1e-10);
    CHECK(out.messages.empty());
    for (std::size_t s = 0; s < agents.size(); ++s) {
      const Vector expected = block_prox(prob.term(static_cast<Index>(s)), prob.set(static_cast<Index>(s)),
                                         Vector::Zero(2), agents[s].x, 0.3);
      CHECK(out.agents[s].x == expected);
      CHECK(out.agents[s].owned_duals.empty());
      CHECK(out.agents[s].cache.x.empty());
    }
  }

  SUBCASE("newly active arcs cost one sync message each") {
    const IndexSet wider = set_union(I, IndexSet(g.arc_count(), {g.find_arc(3, 4), g.find_arc(1, 4)}));
    const std::size_t added = static_cast<std::size_t>(wider.size() - I.size());
    RoundOutput out = pdmi_round(agents, 4, wider, 0.3, 1e-10);
    CHECK(count_kind(out.messages, 0) == added);
    CHECK(out.messages.size() == added + 4 * static_cast<std::size_t>(wider.size()));
  }
}

TEST_CASE("inactive arcs keep no duals and no cached values") {
  const CommGraph g = CommGraph::complete(4);
  std::mt19937_64 gen(2);
  const auto prob = random_quadratic(g, 1, gen);
  const TopologySchedule sched(RandomWithCoreSchedule{g.spanning_tree(), 0.5, 5}, g.arc_count());
  auto agents = make_agents(prob, schedule_next(sched, 1), random_point(prob, gen));
  for (Index k = 1; k <= 30; ++k) {
    const IndexSet I = schedule_next(sched, k);
    agents = pdmi_round(agents, k, I, 0.2, 1e-10).agents;
    for (const auto& a : agents) {
      for (const auto& [arc, y] : a.owned_duals) {
        CHECK(I.contains(arc));
        CHECK(g.arc(arc).tail == a.id);
      }
      for (const auto* slot : {&a.cache.x, &a.cache.p, &a.cache.y}) {
        for (const auto& [arc, v] : *slot) {
          CHECK(I.contains(arc));
          CHECK((g.arc(arc).tail == a.id || g.arc(arc).head == a.id));
        }
      }
    }
  }
}

TEST_CASE("a reactivated arc restarts its dual from zero") {
  const CommGraph g = CommGraph::complete(3);
  std::mt19937_64 gen(3);
  const auto prob = random_quadratic(g, 2, gen);
  const IndexSet all = g.all_arcs();
  const IndexSet without(3, {0, 1});
  auto agents = make_agents(prob, all, random_point(prob, gen));
  agents = pdmi_round(agents, 1, all, 0.25, 1e-10).agents;
  agents = pdmi_round(agents, 2, without, 0.25, 1e-10).agents;
  const ConsensusArc arc = g.arc(2);
  const Vector xs = agents[static_cast<std::size_t>(arc.tail)].x;
  const Vector xt = agents[static_cast<std::size_t>(arc.head)].x;
  const RoundOutput out = pdmi_round(agents, 3, all, 0.25, 1e-10);
  const Vector p = out.agents[static_cast<std::size_t>(arc.tail)].owned_p.at(2);
  CHECK((p - 0.25 * (xs - xt)).norm() == 0.0);
}

TEST_CASE("stale cache is a protocol error naming the agent") {
  const CommGraph g = CommGraph::path(3);
  std::mt19937_64 gen(4);
  const auto prob = random_quadratic(g, 1, gen);
  const IndexSet I = g.all_arcs();
  auto agents = make_agents(prob, I, random_point(prob, gen));
  agents[0].cache.x.erase(0);
  try {
    pdmi_round(agents, 1, I, 0.3, 1e-10);
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(e.agent() == 0);
    CHECK(std::string(e.what()).find("stale") != std::string::npos);
  }
}

TEST_CASE("phase-2 updates are local") {
  // Changing agents that share no active arc with s leaves x_s unchanged.
  const CommGraph g = CommGraph::path(5);
  std::mt19937_64 gen(5);
  const auto prob = random_quadratic(g, 2, gen);
  const IndexSet I = g.all_arcs();
  const auto base = make_agents(prob, I, random_point(prob, gen));
  const auto ref = pdmi_round(base, 1, I, 0.3, 1e-10).agents;
  auto changed = base;
  changed[4].x += Vector::Constant(2, 10.0);
  changed[4].cache.x[3] += Vector::Constant(2, 1.0);
  const auto out = pdmi_round(changed, 1, I, 0.3, 1e-10).agents;
  CHECK(out[0].x == ref[0].x);
  CHECK(out[1].x == ref[1].x);
  CHECK(out[2].x == ref[2].x);
  CHECK(out[4].x != ref[4].x);
}

TEST_CASE("agent order within a phase does not change results") {
  const CommGraph g = CommGraph::random_gnp(7, 0.5, 17);
  std::mt19937_64 gen(6);
  const auto prob = random_quadratic(g, 2, gen);
  const TopologySchedule sched(RandomWithCoreSchedule{g.spanning_tree(), 0.5, 8}, g.arc_count());
  StepsizePolicy policy;
  PdmiOptions forward;
  forward.run.keep_iterates = true;
  PdmiOptions backward = forward;
  backward.order.resize(7);
  std::iota(backward.order.rbegin(), backward.order.rend(), 0);
  const auto a = run_pdmi(prob, sched, policy, StoppingRule{0.0}, 60, forward);
  const auto b = run_pdmi(prob, sched, policy, StoppingRule{0.0}, 60, backward);
  const CompareReport cmp = compare_runs(a.run, b.run, 0.0);
  CHECK(cmp.max_x_difference == 0.0);
  CHECK(cmp.max_y_difference == 0.0);
  CHECK(cmp.iterations == 61);

  PdmiOptions bad;
  bad.order = {0, 1, 1, 2, 3, 4, 5};
  CHECK_THROWS_AS(run_pdmi(prob, sched, policy, StoppingRule{0.0}, 2, bad), InvalidArgument);
}

TEST_CASE("run_pdmi reproduces run on builtin instances") {
  std::mt19937_64 gen(7);
  const CommGraph g = CommGraph::complete(4);
  const auto prob = random_quadratic(g, 2, gen);
  const TopologySchedule sched(CyclicSchedule{{g.spanning_tree(), g.all_arcs()}}, g.arc_count());
  RunOptions options;
  options.keep_iterates = true;
  options.x0 = random_point(prob, gen);
  const RunResult central = run(prob, sched, StepsizePolicy{}, StoppingRule{}, 5000, options);
  PdmiOptions po;
  po.run = options;
  const PdmiRunResult dist = run_pdmi(prob, sched, StepsizePolicy{}, StoppingRule{}, 5000, po);
  CHECK(central.reason == dist.run.reason);
  CHECK(central.trace.size() == dist.run.trace.size());
  CHECK(distance(central.state.x, dist.run.state.x) <= 1e-12);
  CHECK(compare_runs(central, dist.run).passed());
  CHECK(central.trace.back().objective == dist.run.trace.back().objective);
}

TEST_CASE("single agent without arcs runs the proximal point method") {
  const auto sys = ArcConstraintSystem::consensus(1, 2, {});
  const ProblemInstance prob({QuadraticTerm{2.0, vec({1.0, -1.0})}}, {}, sys);
  const TopologySchedule sched(StaticSchedule{IndexSet(0)}, 0);
  RunOptions options;
  options.x0 = BlockVector(1, 2, vec({5.0, 5.0}));
  PdmiOptions po;
  po.run = options;
  const auto r = run_pdmi(prob, sched, StepsizePolicy{}, StoppingRule{0.0}, 10, po);
  Vector x = vec({5.0, 5.0});
  for (int k = 0; k < 10; ++k) {
    // lambda = tau for the empty set.
    x = (x / 0.1 + 2.0 * vec({1.0, -1.0})) / (2.0 + 1.0 / 0.1);
  }
  CHECK((r.run.state.x.data() - x).norm() <= 1e-14);
  CHECK(r.ledger.size() == 0);
}

TEST_CASE("compare_runs reports differences") {
  std::mt19937_64 gen(9);
  const CommGraph g = CommGraph::ring(4);
  const auto prob = random_quadratic(g, 1, gen);
  const TopologySchedule sched(StaticSchedule{g.all_arcs()}, g.arc_count());
  RunOptions options;
  options.keep_iterates = true;
  const RunResult a = run(prob, sched, StepsizePolicy{}, StoppingRule{0.0}, 20, options);
  CHECK(compare_runs(a, a).max_x_difference == 0.0);
  StepsizePolicy perturbed;
  perturbed.scale = 0.99;
  const RunResult b = run(prob, sched, perturbed, StoppingRule{0.0}, 20, options);
  const CompareReport cmp = compare_runs(a, b);
  CHECK_FALSE(cmp.passed());
  CHECK(cmp.max_x_difference > 1e-6);
  const RunResult c = run(prob, sched, StepsizePolicy{}, StoppingRule{0.0}, 10, options);
  CHECK_THROWS_AS(compare_runs(a, c), InvalidArgument);
  const RunResult d = run(prob, sched, StepsizePolicy{}, StoppingRule{0.0}, 20);
  CHECK_THROWS_AS(compare_runs(a, d), InvalidArgument);
}

TEST_CASE("ledger export") {
  std::mt19937_64 gen(10);
  const CommGraph g = CommGraph::path(3);
  const auto prob = random_quadratic(g, 1, gen);
  const TopologySchedule sched(StaticSchedule{g.all_arcs()}, g.arc_count());
  const auto r = run_pdmi(prob, sched, StepsizePolicy{}, StoppingRule{0.0}, 2);
  CHECK(r.ledger.size() == 3 * 2 + 2 * 4 * 2);
  std::ostringstream out;
  r.ledger.write_jsonl(out);
  std::istringstream in(out.str());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"round", "phase", "kind", "sender", "receiver", "arc", "payload_hash"}) {
      CHECK(j.contains(key));
    }
    CHECK(j["payload_hash"].get<std::string>().size() == 16);
    ++lines;
  }
  CHECK(lines == r.ledger.size());
  CHECK(payload_hash(vec({1.0})) == payload_hash(vec({1.0})));
  CHECK(payload_hash(vec({1.0})) != payload_hash(vec({-1.0})));
  CHECK(to_string(PayloadKind::PReport) == "p-report");
}

TEST_CASE("non-consensus systems are rejected") {
  Matrix row(1, 2);
  row << 1.0, 1.0;
  const ArcConstraintSystem sys(2, 1, {row}, BlockVector(1, 1));
  const ProblemInstance prob({QuadraticTerm{1.0, vec({0})}, QuadraticTerm{1.0, vec({0})}}, {}, sys);
  CHECK_THROWS_AS(make_agents(prob, IndexSet::full(1), BlockVector(2, 1)), InvalidArgument);
}
