#include "pdm/multiagent.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace pdm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

const LocalArc* find_local(const AgentState& agent, Index arc) {
  auto it = std::lower_bound(agent.arcs.begin(), agent.arcs.end(), arc,
                             [](const LocalArc& a, Index i) { return a.arc < i; });
  return it != agent.arcs.end() && it->arc == arc ? &*it : nullptr;
}

// Information-flow guard: an agent may only read cached values of incident active arcs.
const Vector& read_cache(const AgentState& agent, const std::map<Index, Vector>& slot,
                         Index arc, const IndexSet& active, const char* what) {
  if (find_local(agent, arc) == nullptr) {
    throw ProtocolError(static_cast<int>(agent.id),
                        "read of " + std::string(what) + " on non-incident arc " +
                            std::to_string(arc));
  }
  if (!active.contains(arc)) {
    throw ProtocolError(static_cast<int>(agent.id),
                        "read of " + std::string(what) + " on inactive arc " + std::to_string(arc));
  }
  auto it = slot.find(arc);
  if (it == slot.end()) {
    throw ProtocolError(static_cast<int>(agent.id),
                        "stale cache: no " + std::string(what) + " for arc " + std::to_string(arc));
  }
  return it->second;
}

void deliver(std::vector<AgentState>& agents, const std::vector<Message>& batch,
             std::size_t from) {
  for (std::size_t k = from; k < batch.size(); ++k) {
    const Message& msg = batch[k];
    auto& cache = agents[static_cast<std::size_t>(msg.receiver)].cache;
    switch (msg.kind) {
      case PayloadKind::XReport: cache.x[msg.arc] = msg.payload; break;
      case PayloadKind::PReport: cache.p[msg.arc] = msg.payload; break;
      case PayloadKind::YReport: cache.y[msg.arc] = msg.payload; break;
    }
  }
}

std::vector<Index> resolve_order(const std::vector<Index>& order, std::size_t m) {
  if (order.empty()) {
    std::vector<Index> identity(m);
    std::iota(identity.begin(), identity.end(), Index{0});
    return identity;
  }
  std::vector<Index> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < m; ++i) {
    if (sorted.size() != m || sorted[i] != static_cast<Index>(i)) {
      throw InvalidArgument("agent order must be a permutation of 0..m-1");
    }
  }
  return order;
}

}  // namespace

std::string to_string(PayloadKind kind) {
  switch (kind) {
    case PayloadKind::PReport: return "p-report";
    case PayloadKind::XReport: return "x-report";
    case PayloadKind::YReport: return "y-report";
  }
  return "unknown";
}

std::string payload_hash(const Vector& payload) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (Index i = 0; i < payload.size(); ++i) {
    unsigned char bytes[sizeof(double)];
    const double v = payload[i];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void MessageLedger::append(const std::vector<Message>& batch) {
  messages_.insert(messages_.end(), batch.begin(), batch.end());
}

std::size_t MessageLedger::count_in_round(Index round) const {
  return static_cast<std::size_t>(std::count_if(
      messages_.begin(), messages_.end(), [&](const Message& m) { return m.round == round; }));
}

void MessageLedger::write_jsonl(std::ostream& out) const {
  for (const auto& m : messages_) {
    nlohmann::json line = {{"round", m.round},   {"phase", m.phase},
                           {"kind", to_string(m.kind)}, {"sender", m.sender},
                           {"receiver", m.receiver}, {"arc", m.arc},
                           {"payload_hash", payload_hash(m.payload)}};
    out << line.dump() << '\n';
  }
}

std::vector<AgentState> make_agents(const ProblemInstance& prob, const IndexSet& initial_active,
                                    const BlockVector& x0, MessageLedger* ledger) {
  const auto& sys = prob.constraints();
  if (!sys.is_consensus()) {
    throw InvalidArgument("the distributed method needs a consensus constraint system");
  }
  if (initial_active.universe_size() != sys.arcs()) throw DimensionError("l", "initial active set");
  if (x0.blocks() != prob.agents() || x0.block_size() != prob.block_size()) {
    throw DimensionError("m", "initial point shape");
  }
  const Index n = prob.block_size();

  std::vector<AgentState> agents(static_cast<std::size_t>(prob.agents()));
  for (Index s = 0; s < prob.agents(); ++s) {
    auto& a = agents[static_cast<std::size_t>(s)];
    a.id = s;
    a.x = x0.block(s);
    a.term = prob.term(s);
    a.set = prob.set(s);
  }
  for (Index i = 0; i < sys.arcs(); ++i) {
    const auto arc = *sys.consensus_arc(i);
    agents[static_cast<std::size_t>(arc.tail)].arcs.push_back({i, arc.head, true});
    agents[static_cast<std::size_t>(arc.head)].arcs.push_back({i, arc.tail, false});
  }

  // Initial exchange over I_0: x both ways, y from the owner.
  std::vector<Message> batch;
  for (auto& a : agents) {
    for (const auto& la : a.arcs) {
      if (!initial_active.contains(la.arc)) continue;
      a.active_arcs.push_back(la.arc);
      batch.push_back({0, 0, a.id, la.neighbor, la.arc, PayloadKind::XReport, a.x});
      if (la.owned) {
        a.owned_duals[la.arc] = Vector::Zero(n);
        batch.push_back({0, 0, a.id, la.neighbor, la.arc, PayloadKind::YReport, Vector::Zero(n)});
      }
    }
  }
  deliver(agents, batch, 0);
  if (ledger != nullptr) ledger->append(batch);
  return agents;
}

RoundOutput pdmi_round(const std::vector<AgentState>& agents, Index round, const IndexSet& active,
                       double lambda, double tol, const std::vector<Index>& order) {
  if (!(lambda > 0.0)) throw InvalidArgument("stepsize must be positive");
  RoundOutput out;
  out.agents = agents;
  auto& state = out.agents;
  auto& messages = out.messages;
  const std::vector<Index> sequence = resolve_order(order, state.size());

  // Sync: newly active arcs need x_t^{k-1} at the owner. Inactive arcs lose
  // their duals and cached values.
  auto t0 = Clock::now();
  std::size_t mark = messages.size();
  for (Index s : sequence) {
    auto& a = state[static_cast<std::size_t>(s)];
    std::vector<Index> now_active;
    for (const auto& la : a.arcs) {
      if (!active.contains(la.arc)) continue;
      now_active.push_back(la.arc);
      const bool was_active =
          std::binary_search(a.active_arcs.begin(), a.active_arcs.end(), la.arc);
      if (!was_active && !la.owned) {
        messages.push_back({round, 0, a.id, la.neighbor, la.arc, PayloadKind::XReport, a.x});
      }
    }
    for (auto it = a.owned_duals.begin(); it != a.owned_duals.end();) {
      it = active.contains(it->first) ? std::next(it) : a.owned_duals.erase(it);
    }
    for (auto* slot : {&a.cache.x, &a.cache.p, &a.cache.y}) {
      for (auto it = slot->begin(); it != slot->end();) {
        it = active.contains(it->first) ? std::next(it) : slot->erase(it);
      }
    }
    a.owned_p.clear();
    a.active_arcs = std::move(now_active);
  }
  deliver(state, messages, mark);
  out.phase_seconds[0] = seconds_since(t0);

  // Phase 1: owners form p_i.
  t0 = Clock::now();
  mark = messages.size();
  for (Index s : sequence) {
    auto& a = state[static_cast<std::size_t>(s)];
    for (Index i : a.active_arcs) {
      const LocalArc& la = *find_local(a, i);
      if (!la.owned) continue;
      const Vector& xt = read_cache(a, a.cache.x, i, active, "x");
      auto y = a.owned_duals.find(i);
      const Vector yi = y == a.owned_duals.end() ? Vector::Zero(a.x.size()) : y->second;
      const Vector diff = a.x - xt;
      Vector p = yi + lambda * diff;
      messages.push_back({round, 1, a.id, la.neighbor, i, PayloadKind::PReport, p});
      a.owned_p[i] = std::move(p);
    }
  }
  deliver(state, messages, mark);
  out.phase_seconds[1] = seconds_since(t0);

  // Phase 2: local prox against the aggregated p values.
  t0 = Clock::now();
  mark = messages.size();
  for (Index s : sequence) {
    auto& a = state[static_cast<std::size_t>(s)];
    Vector v = Vector::Zero(a.x.size());
    for (Index i : a.active_arcs) {
      if (find_local(a, i)->owned) {
        v += a.owned_p.at(i);
      } else {
        v -= read_cache(a, a.cache.p, i, active, "p");
      }
    }
    try {
      a.x = block_prox(a.term, a.set, v, a.x, lambda, tol, a.id);
    } catch (const ProxNotConverged& e) {
      throw ProtocolError(static_cast<int>(a.id), e.what());
    }
    for (Index i : a.active_arcs) {
      messages.push_back(
          {round, 2, a.id, find_local(a, i)->neighbor, i, PayloadKind::XReport, a.x});
    }
  }
  deliver(state, messages, mark);
  out.phase_seconds[2] = seconds_since(t0);

  // Phase 3: owners correct y_i.
  t0 = Clock::now();
  mark = messages.size();
  for (Index s : sequence) {
    auto& a = state[static_cast<std::size_t>(s)];
    for (Index i : a.active_arcs) {
      const LocalArc& la = *find_local(a, i);
      if (!la.owned) continue;
      const Vector& xt = read_cache(a, a.cache.x, i, active, "x");
      auto y = a.owned_duals.find(i);
      const Vector yi = y == a.owned_duals.end() ? Vector::Zero(a.x.size()) : y->second;
      const Vector diff = a.x - xt;
      Vector next = yi + lambda * diff;
      messages.push_back({round, 3, a.id, la.neighbor, i, PayloadKind::YReport, next});
      a.owned_duals[i] = std::move(next);
    }
  }
  deliver(state, messages, mark);
  out.phase_seconds[3] = seconds_since(t0);
  return out;
}

PdmState gather_state(const std::vector<AgentState>& agents, const IndexSet& active, Index k,
                      double lambda, Index arc_count) {
  if (agents.empty()) throw InvalidArgument("no agents");
  const Index n = agents.front().x.size();
  PdmState s;
  s.k = k;
  s.lambda = lambda;
  s.active = active;
  s.x = BlockVector(static_cast<Index>(agents.size()), n);
  for (const auto& a : agents) s.x.block(a.id) = a.x;

  std::map<Index, const AgentState*> owner;
  for (const auto& a : agents)
    for (const auto& la : a.arcs)
      if (la.owned) owner[la.arc] = &a;

  auto collect = [&](auto member) {
    Vector packed(active.size() * n);
    Index pos = 0;
    for (Index i : active) {
      const auto& store = owner.at(i)->*member;
      auto it = store.find(i);
      packed.segment(pos++ * n, n) = it == store.end() ? Vector::Zero(n) : it->second;
    }
    return DualVector(active, n, std::move(packed));
  };
  if (active.universe_size() != arc_count) throw DimensionError("l", "active set universe");
  s.y = collect(&AgentState::owned_duals);
  s.p = collect(&AgentState::owned_p);
  return s;
}

PdmiRunResult run_pdmi(const ProblemInstance& prob, const TopologySchedule& schedule,
                       const StepsizePolicy& policy, const StoppingRule& stop, Index budget,
                       const PdmiOptions& options) {
  if (budget < 1) throw InvalidArgument("iteration budget must be at least 1");
  if (schedule.arcs != prob.arcs()) throw DimensionError("l", "schedule arc universe");
  policy.validate();

  PdmiRunResult out;
  const RunOptions& ro = options.run;
  const IndexSet initial = ro.initial_active.value_or(schedule_next(schedule, 1));
  const BlockVector x0 =
      project_feasible(prob, ro.x0 ? *ro.x0 : BlockVector(prob.agents(), prob.block_size()));
  out.agents = make_agents(prob, initial, x0, options.record_messages ? &out.ledger : nullptr);

  RunResult& result = out.run;
  result.state = gather_state(out.agents, initial, 0, 0.0, prob.arcs());
  result.state.p = DualVector(prob.arcs(), prob.block_size());
  result.initial_dist_to_ref = distance_to_reference(prob, result.state.x, result.state.y);
  if (ro.keep_iterates) result.iterates.push_back(snapshot(result.state));

  std::optional<IndexSet> cached_set;
  double cached_lambda = 0.0;
  std::optional<double> last_step;
  for (Index k = 1; k <= budget; ++k) {
    IndexSet active = schedule_next(schedule, k);
    if (!cached_set || *cached_set != active) {
      cached_lambda = stepsize(policy, prob.constraints(), active);
      cached_set = active;
    }
    const double tol = coupled_inner_tol(ro.inner_tol, last_step);
    RoundOutput round = pdmi_round(out.agents, k, active, cached_lambda, tol, options.order);
    for (std::size_t ph = 0; ph < 4; ++ph) out.phase_seconds[ph] += round.phase_seconds[ph];
    if (options.record_messages) out.ledger.append(round.messages);
    out.agents = std::move(round.agents);

    PdmState next = gather_state(out.agents, active, k, cached_lambda, prob.arcs());
    const IterationRecord record = make_record(prob, result.state, next);
    last_step = record.step_norm;
    result.trace.push_back(record);
    result.state = std::move(next);
    if (ro.keep_iterates) result.iterates.push_back(snapshot(result.state));
    if (stop.satisfied(record)) {
      result.reason = StopReason::Converged;
      return out;
    }
  }
  result.reason = StopReason::BudgetExhausted;
  return out;
}

CompareReport compare_runs(const RunResult& a, const RunResult& b, double tolerance) {
  if (a.iterates.size() != b.iterates.size()) {
    throw InvalidArgument("compared runs have different lengths (" +
                          std::to_string(a.iterates.size()) + " vs " +
                          std::to_string(b.iterates.size()) + ")");
  }
  if (a.iterates.empty()) throw InvalidArgument("compared runs kept no iterates");
  CompareReport report;
  report.tolerance = tolerance;
  report.iterations = a.iterates.size();
  for (std::size_t k = 0; k < a.iterates.size(); ++k) {
    report.max_x_difference =
        std::max(report.max_x_difference, distance(a.iterates[k].x, b.iterates[k].x));
    report.max_y_difference =
        std::max(report.max_y_difference, distance(a.iterates[k].y, b.iterates[k].y));
  }
  return report;
}

}  // namespace pdm
