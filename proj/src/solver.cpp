#include "pdm/solver.hpp"

#include <algorithm>
#include <cmath>

namespace pdm {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Index consensus_max_degree(const ArcConstraintSystem& sys, const IndexSet& I) {
  std::vector<Index> degree(static_cast<std::size_t>(sys.agents()), 0);
  for (Index i : I) {
    const auto arc = *sys.consensus_arc(i);
    ++degree[static_cast<std::size_t>(arc.tail)];
    ++degree[static_cast<std::size_t>(arc.head)];
  }
  return *std::max_element(degree.begin(), degree.end());
}

// y_i + lambda (A_i x - b_i) for every i in I.
DualVector dual_ascent(const ArcConstraintSystem& sys, const IndexSet& I, const DualVector& y,
                       const BlockVector& x, double lambda) {
  const Index n = sys.block_size();
  Vector packed(I.size() * n);
  Index k = 0;
  for (Index i : I) {
    const Vector r = sys.apply_row(i, x) - sys.rhs().block(i);
    packed.segment(k++ * n, n) = y.block(i) + lambda * r;
  }
  return DualVector(I, n, std::move(packed));
}

}  // namespace

PdmState initial_state(const ProblemInstance& prob, IndexSet active,
                       std::optional<BlockVector> x0) {
  if (active.universe_size() != prob.arcs()) throw DimensionError("l", "initial active set");
  PdmState s;
  s.k = 0;
  s.x = project_feasible(prob, x0 ? *x0 : BlockVector(prob.agents(), prob.block_size()));
  s.y = DualVector(active, prob.block_size(), Vector::Zero(active.size() * prob.block_size()));
  s.p = DualVector(prob.arcs(), prob.block_size());
  s.active = std::move(active);
  return s;
}

void StepsizePolicy::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidArgument("tau must lie in (0, 1)");
  if (!(scale > 0.0)) throw InvalidArgument("stepsize scale must be positive");
  if (const auto* c = std::get_if<ConstantStep>(&mode); c && !(c->value > 0.0)) {
    throw InvalidArgument("constant stepsize must be positive");
  }
  if (const auto* f = std::get_if<FixedUpperBound>(&mode); f && !(f->degree_bound > 0.0)) {
    throw InvalidArgument("degree bound must be positive");
  }
}

double stepsize(const StepsizePolicy& policy, const ArcConstraintSystem& sys, const IndexSet& I) {
  policy.validate();
  const double tau = policy.tau;
  const double lambda = std::visit(
      overloaded{
          [&](const PerIterationNorm&) {
            if (I.empty()) return tau;
            const double upper =
                std::sqrt(1.0 - tau) / (std::sqrt(2.0) * operator_norm(sys, I));
            if (upper < tau) throw StepsizeIntervalEmpty(tau, upper);
            return upper;
          },
          [&](const FixedUpperBound& f) {
            const double upper = 0.5 * std::sqrt((1.0 - tau) / f.degree_bound);
            if (upper < tau) throw StepsizeIntervalEmpty(tau, upper);
            if (sys.is_consensus() && !I.empty() &&
                static_cast<double>(consensus_max_degree(sys, I)) > f.degree_bound) {
              throw InvalidArgument("active set exceeds the fixed degree bound " +
                                    std::to_string(f.degree_bound));
            }
            return upper;
          },
          [&](const ConstantStep& c) { return c.value; },
      },
      policy.mode);
  return lambda * policy.scale;
}

PdmState pdm_step(const ProblemInstance& prob, const PdmState& state, const IndexSet& next_active,
                  double lambda, double tol) {
  if (!(lambda > 0.0)) throw InvalidArgument("stepsize must be positive");
  const auto& sys = prob.constraints();
  if (next_active.universe_size() != sys.arcs()) throw DimensionError("l", "active set");

  PdmState next;
  next.k = state.k + 1;
  next.active = next_active;
  next.lambda = lambda;
  next.p = dual_ascent(sys, next_active, state.y, state.x, lambda);
  next.x = prox_primal(prob, apply_A_transpose(sys, next_active, next.p), state.x, lambda, tol);
  next.y = dual_ascent(sys, next_active, state.y, next.x, lambda);
  return next;
}

double distance_to_reference(const ProblemInstance& prob, const BlockVector& x,
                             const DualVector& y) {
  if (!prob.reference()) return std::numeric_limits<double>::quiet_NaN();
  const auto& ref = *prob.reference();
  const double dx = distance(x, ref.x);
  const double dy = distance(y, ref.y);
  return std::sqrt(dx * dx + dy * dy);
}

IterationRecord make_record(const ProblemInstance& prob, const PdmState& prev,
                            const PdmState& next) {
  const auto& sys = prob.constraints();
  IterationRecord r;
  r.k = next.k;
  r.lambda = next.lambda;
  r.objective = objective_value(prob, next.x);
  r.primal_residual = constraint_residual(sys, next.active, next.x).norm();
  r.full_residual = constraint_residual(sys, IndexSet::full(sys.arcs()), next.x).norm();
  r.step_norm = distance(next.x, prev.x);
  r.p_minus_y = distance(next.p, next.y);
  r.p_minus_yprev = distance(next.p, prev.y);
  r.dist_to_ref = distance_to_reference(prob, next.x, next.y);
  r.active_count = next.active.size();
  return r;
}

std::string to_string(StopReason reason) {
  return reason == StopReason::Converged ? "converged" : "budget_exhausted";
}

double coupled_inner_tol(double cap, std::optional<double> last_step) {
  if (!last_step) return cap;
  return std::max(std::min(cap, 0.01 * *last_step), 1e-13);
}

Iterate snapshot(const PdmState& state) {
  return Iterate{state.x, state.y.to_full(), state.p.to_full(), state.active};
}

RunResult run(const ProblemInstance& prob, const TopologySchedule& schedule,
              const StepsizePolicy& policy, const StoppingRule& stop, Index budget,
              const RunOptions& options) {
  if (budget < 1) throw InvalidArgument("iteration budget must be at least 1");
  if (schedule.arcs != prob.arcs()) throw DimensionError("l", "schedule arc universe");
  policy.validate();

  RunResult result;
  result.state = initial_state(prob, options.initial_active.value_or(schedule_next(schedule, 1)),
                               options.x0);
  result.initial_dist_to_ref = distance_to_reference(prob, result.state.x, result.state.y);
  if (options.keep_iterates) result.iterates.push_back(snapshot(result.state));
  result.trace.reserve(static_cast<std::size_t>(std::min<Index>(budget, 100000)));

  std::optional<IndexSet> cached_set;
  double cached_lambda = 0.0;
  std::optional<double> last_step;
  for (Index k = 1; k <= budget; ++k) {
    IndexSet active = schedule_next(schedule, k);
    if (!cached_set || *cached_set != active) {
      cached_lambda = stepsize(policy, prob.constraints(), active);
      cached_set = active;
    }
    const double tol = coupled_inner_tol(options.inner_tol, last_step);
    PdmState next = pdm_step(prob, result.state, active, cached_lambda, tol);
    const IterationRecord record = make_record(prob, result.state, next);
    last_step = record.step_norm;
    result.trace.push_back(record);
    result.state = std::move(next);
    if (options.keep_iterates) result.iterates.push_back(snapshot(result.state));
    if (stop.satisfied(record)) {
      result.reason = StopReason::Converged;
      return result;
    }
  }
  result.reason = StopReason::BudgetExhausted;
  return result;
}

FejerReport check_fejer(const RunResult& result, double tau, Index warmup, double slack) {
  if (std::isnan(result.initial_dist_to_ref)) {
    throw InvalidArgument("Fejer check needs a reference saddle point w*");
  }
  FejerReport report;
  double previous = result.initial_dist_to_ref;
  for (const auto& r : result.trace) {
    if (!std::isfinite(r.dist_to_ref)) {
      // Overflowed iterates: the distance can no longer shrink.
      report.worst_excess = std::numeric_limits<double>::infinity();
      if (!report.first_violation) report.first_violation = r.k;
      report.passed = false;
      break;
    }
    if (r.k > warmup) {
      const double rhs = previous * previous - r.p_minus_y * r.p_minus_y -
                         r.p_minus_yprev * r.p_minus_yprev - tau * r.step_norm * r.step_norm;
      const double excess = r.dist_to_ref * r.dist_to_ref - rhs;
      report.worst_excess = std::max(report.worst_excess, excess);
      ++report.checked;
      if (excess > slack && !report.first_violation) {
        report.first_violation = r.k;
        report.passed = false;
      }
    }
    previous = r.dist_to_ref;
  }
  return report;
}

double max_increment(const std::vector<IterationRecord>& trace, std::size_t window) {
  double worst = 0.0;
  const std::size_t start = trace.size() > window ? trace.size() - window : 0;
  for (std::size_t i = start; i < trace.size(); ++i) {
    worst = std::max({worst, trace[i].p_minus_y, trace[i].p_minus_yprev, trace[i].step_norm});
  }
  return worst;
}

double window_diameter(const std::vector<Iterate>& iterates, std::size_t window) {
  const std::size_t start = iterates.size() > window ? iterates.size() - window : 0;
  double worst = 0.0;
  for (std::size_t a = start; a < iterates.size(); ++a) {
    for (std::size_t b = a + 1; b < iterates.size(); ++b) {
      const double dx = distance(iterates[a].x, iterates[b].x);
      const double dy = distance(iterates[a].y, iterates[b].y);
      worst = std::max(worst, std::sqrt(dx * dx + dy * dy));
    }
  }
  return worst;
}

}  // namespace pdm
