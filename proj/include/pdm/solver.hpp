#pragma once

// Centralised primal-dual proximal iteration under a changing active arc set.
//
// One step with active set I and stepsize lambda:
//   p   = proj_{Y_I}(y + lambda (A x - b))
//   x'  = argmin_{X} f + <p, A . - b> + ||. - x||^2 / (2 lambda)
//   y'  = proj_{Y_I}(y + lambda (A x' - b))

#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pdm/problem.hpp"
#include "pdm/topology.hpp"

namespace pdm {

struct PdmState {
  Index k = 0;
  BlockVector x;
  DualVector y;
  DualVector p;  // dual pre-step of the last iteration (zero at k = 0)
  IndexSet active;
  double lambda = 0.0;
};

/// Zero duals supported on `active`, x = x0 projected onto X (or the projected origin).
PdmState initial_state(const ProblemInstance& prob, IndexSet active,
                       std::optional<BlockVector> x0 = std::nullopt);

/// lambda = sqrt(1 - tau) / (sqrt(2) ||A_I||), recomputed for each active set.
struct PerIterationNorm {};
/// lambda = 0.5 sqrt((1 - tau) / v) for a bound v on the maximal vertex degree.
struct FixedUpperBound {
  double degree_bound = 1.0;
};
struct ConstantStep {
  double value = 0.0;
};

struct StepsizePolicy {
  double tau = 0.1;
  std::variant<PerIterationNorm, FixedUpperBound, ConstantStep> mode = PerIterationNorm{};
  /// Multiplies the selected step after the interval check; 1 leaves it inside the interval.
  double scale = 1.0;

  void validate() const;
};

/// Upper endpoint of the admissible interval for I (times `scale`).
/// Throws StepsizeIntervalEmpty when that endpoint is below tau. For I = ∅ the
/// norm-based mode returns tau.
double stepsize(const StepsizePolicy& policy, const ArcConstraintSystem& sys, const IndexSet& I);

/// One iteration from `state` with active set `next_active`.
PdmState pdm_step(const ProblemInstance& prob, const PdmState& state, const IndexSet& next_active,
                  double lambda, double tol = 1e-10);

struct IterationRecord {
  Index k = 0;
  double lambda = 0.0;
  double objective = 0.0;
  double primal_residual = 0.0;  // ||A_{I_k} x^k - b_{I_k}||
  double full_residual = 0.0;    // ||A x^k - b||
  double step_norm = 0.0;        // ||x^k - x^{k-1}||
  double p_minus_y = 0.0;        // ||p^k - y^k||
  double p_minus_yprev = 0.0;    // ||p^k - y^{k-1}||
  double dist_to_ref = std::numeric_limits<double>::quiet_NaN();  // ||w^k - w*||
  Index active_count = 0;
};

/// Record for the transition prev -> next.
IterationRecord make_record(const ProblemInstance& prob, const PdmState& prev,
                            const PdmState& next);

/// Stop once ||A x - b|| <= epsilon and ||x^k - x^{k-1}|| <= epsilon.
/// epsilon <= 0 disables the rule and the budget alone ends the run.
struct StoppingRule {
  double epsilon = 1e-8;
  bool satisfied(const IterationRecord& r) const {
    return epsilon > 0.0 && r.full_residual <= epsilon && r.step_norm <= epsilon;
  }
};

enum class StopReason { Converged, BudgetExhausted };
std::string to_string(StopReason reason);

/// Snapshot of w^k with duals expanded to l blocks.
struct Iterate {
  BlockVector x;
  BlockVector y;
  BlockVector p;
  IndexSet active;
};

struct RunOptions {
  std::optional<BlockVector> x0;
  /// I_0; defaults to the schedule's first set.
  std::optional<IndexSet> initial_active;
  /// Cap on the prox tolerance; the step uses min(inner_tol, 0.01 ||x^{k-1} - x^{k-2}||).
  double inner_tol = 1e-10;
  bool keep_iterates = false;
};

struct RunResult {
  PdmState state;
  std::vector<IterationRecord> trace;
  StopReason reason = StopReason::BudgetExhausted;
  double initial_dist_to_ref = std::numeric_limits<double>::quiet_NaN();
  std::vector<Iterate> iterates;  // w^0 ... w^K when keep_iterates
};

/// Inner prox tolerance for the step following one with displacement `last_step`.
double coupled_inner_tol(double cap, std::optional<double> last_step);

Iterate snapshot(const PdmState& state);

/// ||w - w*|| against the problem's reference, NaN when there is none.
double distance_to_reference(const ProblemInstance& prob, const BlockVector& x,
                             const DualVector& y);

RunResult run(const ProblemInstance& prob, const TopologySchedule& schedule,
              const StepsizePolicy& policy, const StoppingRule& stop, Index budget,
              const RunOptions& options = {});

struct FejerReport {
  bool passed = true;
  Index checked = 0;
  std::optional<Index> first_violation;  // iteration k
  double worst_excess = -std::numeric_limits<double>::infinity();
};

/// Per-step check of
///   ||w^k - w*||^2 <= ||w^{k-1} - w*||^2 - ||p^k - y^k||^2 - ||p^k - y^{k-1}||^2
///                     - tau ||x^k - x^{k-1}||^2 + slack
/// for iterations k > warmup. A non-finite distance counts as a violation.
/// Throws when the run carried no reference distances.
FejerReport check_fejer(const RunResult& result, double tau, Index warmup = 0,
                        double slack = 1e-9);

/// Max of the three iteration increments over the last `window` records.
double max_increment(const std::vector<IterationRecord>& trace, std::size_t window);

/// Largest pairwise ||w^k - w^{k'}|| among the last `window` kept iterates.
double window_diameter(const std::vector<Iterate>& iterates, std::size_t window);

}  // namespace pdm
