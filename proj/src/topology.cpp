#include "pdm/topology.hpp"

#include <algorithm>
#include <deque>
#include <random>
#include <string>

#include "pdm/union_find.hpp"

namespace pdm {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Uniform double in [0, 1) from the top 53 bits; portable across standard libraries.
double unit_draw(std::mt19937_64& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

std::mt19937_64 keyed_generator(std::uint64_t seed, std::uint64_t counter) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(counter),
                    static_cast<std::uint32_t>(counter >> 32)};
  return std::mt19937_64(seq);
}

void check_set(const TopologySchedule& s, const IndexSet& I, const char* what) {
  if (I.universe_size() != s.arcs) {
    throw DimensionError("l", std::string(what) + " has the wrong arc universe");
  }
}

}  // namespace

CommGraph::CommGraph(Index agents, std::vector<ConsensusArc> edges) : m_(agents) {
  if (agents < 1) throw InvalidArgument("graph needs at least one agent");
  for (auto& e : edges) {
    if (e.tail == e.head) throw InvalidArgument("self-loop at vertex " + std::to_string(e.tail));
    if (e.tail > e.head) std::swap(e.tail, e.head);
    if (e.tail < 0 || e.head >= agents) {
      throw InvalidArgument("edge (" + std::to_string(e.tail) + ", " + std::to_string(e.head) +
                            ") outside 0.." + std::to_string(agents - 1));
    }
  }
  std::sort(edges.begin(), edges.end(), [](const ConsensusArc& a, const ConsensusArc& b) {
    return a.tail != b.tail ? a.tail < b.tail : a.head < b.head;
  });
  if (std::adjacent_find(edges.begin(), edges.end()) != edges.end()) {
    throw InvalidArgument("duplicate edge in graph");
  }
  arcs_ = std::move(edges);
  incident_.resize(static_cast<std::size_t>(agents));
  for (Index i = 0; i < arc_count(); ++i) {
    incident_[static_cast<std::size_t>(arcs_[i].tail)].push_back(i);
    incident_[static_cast<std::size_t>(arcs_[i].head)].push_back(i);
  }
}

CommGraph CommGraph::complete(Index agents) {
  std::vector<ConsensusArc> edges;
  for (Index s = 0; s < agents; ++s)
    for (Index t = s + 1; t < agents; ++t) edges.push_back({s, t});
  return CommGraph(agents, std::move(edges));
}

CommGraph CommGraph::ring(Index agents) {
  std::vector<ConsensusArc> edges;
  for (Index s = 0; s + 1 < agents; ++s) edges.push_back({s, s + 1});
  if (agents > 2) edges.push_back({0, agents - 1});
  return CommGraph(agents, std::move(edges));
}

CommGraph CommGraph::path(Index agents) {
  std::vector<ConsensusArc> edges;
  for (Index s = 0; s + 1 < agents; ++s) edges.push_back({s, s + 1});
  return CommGraph(agents, std::move(edges));
}

CommGraph CommGraph::star(Index agents, Index center) {
  if (center < 0 || center >= agents) throw InvalidArgument("star center out of range");
  std::vector<ConsensusArc> edges;
  for (Index v = 0; v < agents; ++v)
    if (v != center) edges.push_back({center, v});
  return CommGraph(agents, std::move(edges));
}

CommGraph CommGraph::random_gnp(Index agents, double probability, std::uint64_t seed) {
  if (!(probability >= 0.0 && probability <= 1.0)) {
    throw InvalidArgument("edge probability must lie in [0, 1]");
  }
  std::mt19937_64 gen = keyed_generator(seed, 0);
  std::vector<ConsensusArc> edges;
  for (Index s = 0; s < agents; ++s)
    for (Index t = s + 1; t < agents; ++t)
      if (unit_draw(gen) < probability) edges.push_back({s, t});
  return CommGraph(agents, std::move(edges));
}

Index CommGraph::find_arc(Index s, Index t) const {
  if (s > t) std::swap(s, t);
  auto it = std::lower_bound(arcs_.begin(), arcs_.end(), ConsensusArc{s, t},
                             [](const ConsensusArc& a, const ConsensusArc& b) {
                               return a.tail != b.tail ? a.tail < b.tail : a.head < b.head;
                             });
  if (it == arcs_.end() || !(*it == ConsensusArc{s, t})) return -1;
  return static_cast<Index>(it - arcs_.begin());
}

IndexSet CommGraph::spanning_tree() const {
  std::vector<Index> tree;
  std::vector<bool> seen(static_cast<std::size_t>(m_), false);
  for (Index root = 0; root < m_; ++root) {
    if (seen[static_cast<std::size_t>(root)]) continue;
    seen[static_cast<std::size_t>(root)] = true;
    std::deque<Index> queue{root};
    while (!queue.empty()) {
      const Index v = queue.front();
      queue.pop_front();
      for (Index i : incident(v)) {
        const Index w = arcs_[i].tail == v ? arcs_[i].head : arcs_[i].tail;
        if (seen[static_cast<std::size_t>(w)]) continue;
        seen[static_cast<std::size_t>(w)] = true;
        tree.push_back(i);
        queue.push_back(w);
      }
    }
  }
  return IndexSet(arc_count(), std::move(tree));
}

ArcConstraintSystem CommGraph::constraints(Index block_size) const {
  return ArcConstraintSystem::consensus(m_, block_size, arcs_);
}

Matrix kirchhoff(const CommGraph& graph, const IndexSet& I) {
  if (I.universe_size() != graph.arc_count()) throw DimensionError("l", "index set universe");
  Matrix H = Matrix::Zero(graph.agents(), graph.agents());
  for (Index i : I) {
    const auto& a = graph.arc(i);
    H(a.tail, a.tail) += 1.0;
    H(a.head, a.head) += 1.0;
    H(a.tail, a.head) -= 1.0;
    H(a.head, a.tail) -= 1.0;
  }
  return H;
}

Index max_degree(const CommGraph& graph, const IndexSet& I) {
  if (I.universe_size() != graph.arc_count()) throw DimensionError("l", "index set universe");
  std::vector<Index> degree(static_cast<std::size_t>(graph.agents()), 0);
  for (Index i : I) {
    ++degree[static_cast<std::size_t>(graph.arc(i).tail)];
    ++degree[static_cast<std::size_t>(graph.arc(i).head)];
  }
  return degree.empty() ? 0 : *std::max_element(degree.begin(), degree.end());
}

bool is_connected(const CommGraph& graph, const IndexSet& I) {
  if (I.universe_size() != graph.arc_count()) throw DimensionError("l", "index set universe");
  DisjointSets sets(graph.agents());
  for (Index i : I) sets.unite(graph.arc(i).tail, graph.arc(i).head);
  return sets.components() == 1;
}

TopologySchedule::TopologySchedule(ScheduleKind k, Index l) : kind(std::move(k)), arcs(l) {
  std::visit(overloaded{
                 [&](const StaticSchedule& s) { check_set(*this, s.active, "static set"); },
                 [&](const CyclicSchedule& s) {
                   if (s.sets.empty()) throw InvalidArgument("cyclic schedule needs a set");
                   for (const auto& I : s.sets) check_set(*this, I, "cyclic set");
                 },
                 [&](const RandomWithCoreSchedule& s) {
                   check_set(*this, s.core, "core set");
                   if (!(s.extra_probability >= 0.0 && s.extra_probability <= 1.0)) {
                     throw InvalidArgument("extra_probability must lie in [0, 1]");
                   }
                 },
                 [&](const AdversarialSchedule& s) {
                   if (s.sets.empty()) throw InvalidArgument("adversarial schedule needs a set");
                   for (const auto& I : s.sets) check_set(*this, I, "adversarial set");
                 },
             },
             kind);
}

IndexSet schedule_next(const TopologySchedule& schedule, Index k) {
  if (k < 1) throw InvalidArgument("schedule iterations start at k = 1");
  return std::visit(
      overloaded{
          [&](const StaticSchedule& s) { return s.active; },
          [&](const CyclicSchedule& s) {
            return s.sets[static_cast<std::size_t>((k - 1) % static_cast<Index>(s.sets.size()))];
          },
          [&](const RandomWithCoreSchedule& s) {
            std::mt19937_64 gen = keyed_generator(s.seed, static_cast<std::uint64_t>(k));
            std::vector<Index> members;
            for (Index i = 0; i < schedule.arcs; ++i) {
              // One draw per arc, core or not, so arc i always consumes the same draw.
              const double u = unit_draw(gen);
              if (s.core.contains(i) || u < s.extra_probability) members.push_back(i);
            }
            return IndexSet(schedule.arcs, std::move(members));
          },
          [&](const AdversarialSchedule& s) {
            const auto idx = std::min<std::size_t>(static_cast<std::size_t>(k - 1),
                                                   s.sets.size() - 1);
            return s.sets[idx];
          },
      },
      schedule.kind);
}

Index schedule_degree_bound(const CommGraph& graph, const TopologySchedule& schedule) {
  return std::visit(
      overloaded{
          [&](const StaticSchedule& s) { return max_degree(graph, s.active); },
          [&](const CyclicSchedule& s) {
            Index d = 0;
            for (const auto& I : s.sets) d = std::max(d, max_degree(graph, I));
            return d;
          },
          [&](const RandomWithCoreSchedule& s) {
            return s.extra_probability > 0.0 ? max_degree(graph, graph.all_arcs())
                                             : max_degree(graph, s.core);
          },
          [&](const AdversarialSchedule& s) {
            Index d = 0;
            for (const auto& I : s.sets) d = std::max(d, max_degree(graph, I));
            return d;
          },
      },
      schedule.kind);
}

}  // namespace pdm
