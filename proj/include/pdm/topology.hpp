#pragma once

// Communication graphs over agents, Kirchhoff matrices and active-arc schedules.

#include <cstdint>
#include <variant>
#include <vector>

#include "pdm/block_linalg.hpp"

namespace pdm {

/// Undirected graph with each edge stored once as an oriented arc (s, t), s < t.
/// Arcs are indexed lexicographically by (s, t).
class CommGraph {
 public:
  CommGraph() = default;
  /// Pairs may come in either orientation; duplicates and self-loops are rejected.
  CommGraph(Index agents, std::vector<ConsensusArc> edges);

  static CommGraph complete(Index agents);
  static CommGraph ring(Index agents);
  static CommGraph path(Index agents);
  static CommGraph star(Index agents, Index center = 0);
  /// Erdos-Renyi G(m, p), deterministic in `seed`.
  static CommGraph random_gnp(Index agents, double probability, std::uint64_t seed);

  Index agents() const noexcept { return m_; }
  Index arc_count() const noexcept { return static_cast<Index>(arcs_.size()); }
  const std::vector<ConsensusArc>& arcs() const noexcept { return arcs_; }
  const ConsensusArc& arc(Index i) const { return arcs_.at(static_cast<std::size_t>(i)); }

  /// Index of the arc joining s and t (either order), or -1.
  Index find_arc(Index s, Index t) const;

  /// Arcs incident to vertex v, ascending.
  const std::vector<Index>& incident(Index v) const {
    return incident_.at(static_cast<std::size_t>(v));
  }

  IndexSet all_arcs() const { return IndexSet::full(arc_count()); }
  /// Breadth-first spanning forest from vertex 0, scanning incident arcs in index order.
  IndexSet spanning_tree() const;

  /// x_s - x_t = 0 for every arc.
  ArcConstraintSystem constraints(Index block_size) const;

  friend bool operator==(const CommGraph& a, const CommGraph& b) {
    return a.m_ == b.m_ && a.arcs_ == b.arcs_;
  }

 private:
  Index m_ = 0;
  std::vector<ConsensusArc> arcs_;
  std::vector<std::vector<Index>> incident_;
};

/// Laplacian of the active subgraph: degrees on the diagonal, -1 per active edge.
Matrix kirchhoff(const CommGraph& graph, const IndexSet& I);

/// Largest number of active arcs at one vertex; 0 for I = ∅.
Index max_degree(const CommGraph& graph, const IndexSet& I);

/// Whether the active arcs connect all agents.
bool is_connected(const CommGraph& graph, const IndexSet& I);

struct StaticSchedule {
  IndexSet active;
};

/// I_k = sets[(k - 1) mod len].
struct CyclicSchedule {
  std::vector<IndexSet> sets;
};

/// I_k = core ∪ {non-core arcs kept independently with extra_probability}.
struct RandomWithCoreSchedule {
  IndexSet core;
  double extra_probability = 0.0;
  std::uint64_t seed = 0;
};

/// Scripted sets; the last one repeats forever.
struct AdversarialSchedule {
  std::vector<IndexSet> sets;
};

using ScheduleKind =
    std::variant<StaticSchedule, CyclicSchedule, RandomWithCoreSchedule, AdversarialSchedule>;

struct TopologySchedule {
  ScheduleKind kind;
  Index arcs = 0;  // size of L

  TopologySchedule(ScheduleKind kind, Index arcs);
};

/// Active set at iteration k >= 1. Random schedules are random-access in k.
IndexSet schedule_next(const TopologySchedule& schedule, Index k);

/// Largest max_degree over the sets a schedule can emit (all non-core arcs for
/// random schedules).
Index schedule_degree_bound(const CommGraph& graph, const TopologySchedule& schedule);

}  // namespace pdm
