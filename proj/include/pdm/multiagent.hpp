#pragma once

// Round-synchronous simulation of the decentralised method. Agent s owns x_s
// and the duals y_i, p_i of its outgoing arcs i = (s, t); everything else it
// learns from messages sent over active arcs.
//
// Round k (I_k and lambda_k are global round metadata):
//   sync     head t sends x_t^{k-1} to owner s for every arc newly active in I_k
//   phase 1  owner: p_i = y_i + lambda (x_s - x_t); p_i -> t
//   phase 2  every agent: v_s = sum_out p_i - sum_in p_i, local prox; x_s -> active neighbours
//   phase 3  owner: y_i = y_i + lambda (x_s - x_t); y_i -> t

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pdm/solver.hpp"

namespace pdm {

enum class PayloadKind { PReport, XReport, YReport };
std::string to_string(PayloadKind kind);

struct Message {
  Index round = 0;
  int phase = 0;  // 0 = sync / initial exchange
  Index sender = 0;
  Index receiver = 0;
  Index arc = 0;
  PayloadKind kind = PayloadKind::XReport;
  Vector payload;
};

/// FNV-1a over the payload's IEEE-754 bytes, as 16 hex digits.
std::string payload_hash(const Vector& payload);

class MessageLedger {
 public:
  void append(Message m) { messages_.push_back(std::move(m)); }
  void append(const std::vector<Message>& batch);
  const std::vector<Message>& messages() const noexcept { return messages_; }
  std::size_t count_in_round(Index round) const;
  std::size_t size() const noexcept { return messages_.size(); }

  /// One JSON object per line: round, phase, kind, sender, receiver, arc, payload_hash.
  void write_jsonl(std::ostream& out) const;

 private:
  std::vector<Message> messages_;
};

/// Arc incident to an agent in the full graph.
struct LocalArc {
  Index arc = 0;
  Index neighbor = 0;
  bool owned = false;  // agent is the tail of the arc
};

/// Values last received from neighbours, keyed by arc.
struct NeighborCache {
  std::map<Index, Vector> x;
  std::map<Index, Vector> p;
  std::map<Index, Vector> y;
};

struct AgentState {
  Index id = 0;
  Vector x;
  std::map<Index, Vector> owned_duals;  // y_i for owned arcs active in the last round
  std::map<Index, Vector> owned_p;      // p_i from the last round
  std::vector<LocalArc> arcs;           // incident arcs of the full graph, ascending
  std::vector<Index> active_arcs;       // incident arcs active in the last round, ascending
  NeighborCache cache;
  BlockTerm term;
  BlockSet set;
};

/// Builds one agent per block of a consensus problem, with x = x0 and zero duals on
/// `initial_active`. Fills `ledger` with the initial exchange (round 0).
std::vector<AgentState> make_agents(const ProblemInstance& prob, const IndexSet& initial_active,
                                    const BlockVector& x0, MessageLedger* ledger = nullptr);

struct RoundOutput {
  std::vector<AgentState> agents;
  std::vector<Message> messages;
  std::array<double, 4> phase_seconds{};  // sync, 1, 2, 3
};

/// One synchronous round. `order` permutes the agents within each phase (empty: 0..m-1);
/// results do not depend on it.
RoundOutput pdmi_round(const std::vector<AgentState>& agents, Index round, const IndexSet& active,
                       double lambda, double tol, const std::vector<Index>& order = {});

/// Reassembles (x, y, p, I) from the agents.
PdmState gather_state(const std::vector<AgentState>& agents, const IndexSet& active, Index k,
                      double lambda, Index arc_count);

struct PdmiOptions {
  RunOptions run;
  std::vector<Index> order;
  bool record_messages = true;
};

struct PdmiRunResult {
  RunResult run;
  std::vector<AgentState> agents;
  MessageLedger ledger;
  std::array<double, 4> phase_seconds{};
};

PdmiRunResult run_pdmi(const ProblemInstance& prob, const TopologySchedule& schedule,
                       const StepsizePolicy& policy, const StoppingRule& stop, Index budget,
                       const PdmiOptions& options = {});

struct CompareReport {
  std::size_t iterations = 0;
  double max_x_difference = 0.0;
  double max_y_difference = 0.0;
  double tolerance = 1e-12;
  bool passed() const { return max_x_difference <= tolerance && max_y_difference <= tolerance; }
};

/// Max over kept iterates of ||x_a - x_b|| and ||y_a - y_b||. Both runs must keep iterates.
CompareReport compare_runs(const RunResult& a, const RunResult& b, double tolerance = 1e-12);

}  // namespace pdm
