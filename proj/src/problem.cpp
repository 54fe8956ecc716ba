#include "pdm/problem.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace pdm {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void validate_set(const BlockSet& set, Index n, Index block) {
  if (const auto* box = std::get_if<Box>(&set)) {
    if (box->lower.size() != n || box->upper.size() != n) {
      throw DimensionError("n", "box for block " + std::to_string(block) + " has wrong size");
    }
    if ((box->lower.array() > box->upper.array()).any() || box->lower.hasNaN() ||
        box->upper.hasNaN()) {
      throw InvalidArgument("malformed box for block " + std::to_string(block) +
                            ": lower bound exceeds upper bound");
    }
  }
}

void validate_term(const BlockTerm& term, Index n, Index block) {
  const std::string where = " (block " + std::to_string(block) + ")";
  std::visit(overloaded{
                 [&](const QuadraticTerm& q) {
                   if (!(q.weight >= 0.0) || !std::isfinite(q.weight)) {
                     throw InvalidArgument("quadratic weight must be finite and >= 0" + where);
                   }
                   if (q.center.size() != n) throw DimensionError("n", "quadratic center" + where);
                 },
                 [&](const PenaltyTerm& p) {
                   if (p.power != 1 && p.power != 2) {
                     throw InvalidArgument("penalty power must be 1 or 2" + where);
                   }
                   if (p.normal.size() != n) throw DimensionError("n", "penalty normal" + where);
                 },
                 [&](const SmoothTerm& s) {
                   if (!s.value || !s.gradient) {
                     throw InvalidArgument("smooth term needs value and gradient" + where);
                   }
                   if (!(s.lipschitz >= 0.0)) {
                     throw InvalidArgument("smooth term Lipschitz constant must be >= 0" + where);
                   }
                 },
             },
             term);
}

// prox of lambda * (1/p) max(<g, v> - h, 0)^p at w.
Vector penalty_prox(const PenaltyTerm& term, const Vector& w, double lambda) {
  const double gg = term.normal.squaredNorm();
  const double excess = term.normal.dot(w) - term.offset;
  if (gg == 0.0 || excess <= 0.0) return w;
  double theta = 0.0;
  if (term.power == 2) {
    theta = excess / (1.0 + lambda * gg);
  } else {
    theta = std::min(1.0, excess / (lambda * gg));
  }
  return w - (lambda * theta) * term.normal;
}

Vector smooth_prox(const SmoothTerm& term, const BlockSet& set, const Vector& linear,
                   const Vector& u, double lambda, double tol, Index block) {
  const double step = 1.0 / (term.lipschitz + 1.0 / lambda);
  Vector v = project(set, u);
  Vector best = v;
  double best_residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < kProxInnerCap; ++it) {
    const Vector grad = term.gradient(v) + linear + (v - u) / lambda;
    Vector next = project(set, v - step * grad);
    const double mapping = (v - next).norm() / step;
    if (mapping < best_residual) {
      best_residual = mapping;
      best = next;
    }
    if (mapping <= tol) return next;
    v = std::move(next);
  }
  throw ProxNotConverged(best, best_residual, block);
}

}  // namespace

Vector project(const BlockSet& set, const Vector& v) {
  if (const auto* box = std::get_if<Box>(&set)) {
    return v.cwiseMax(box->lower).cwiseMin(box->upper);
  }
  return v;
}

bool contains(const BlockSet& set, const Vector& v, double tol) {
  if (const auto* box = std::get_if<Box>(&set)) {
    return ((v - box->lower).array() >= -tol).all() && ((box->upper - v).array() >= -tol).all();
  }
  return true;
}

double term_value(const BlockTerm& term, const Vector& v) {
  return std::visit(overloaded{
                        [&](const QuadraticTerm& q) {
                          return 0.5 * q.weight * (v - q.center).squaredNorm();
                        },
                        [&](const PenaltyTerm& p) {
                          const double e = std::max(p.normal.dot(v) - p.offset, 0.0);
                          return p.power == 1 ? e : 0.5 * e * e;
                        },
                        [&](const SmoothTerm& s) { return s.value(v); },
                    },
                    term);
}

Vector block_prox(const BlockTerm& term, const BlockSet& set, const Vector& linear,
                  const Vector& u, double lambda, double tol, Index block) {
  if (!(lambda > 0.0)) throw InvalidArgument("prox stepsize lambda must be positive");
  return std::visit(
      overloaded{
          [&](const QuadraticTerm& q) -> Vector {
            // Diagonal separable quadratic: unconstrained solution, then clamp.
            const double denom = q.weight + 1.0 / lambda;
            Vector v = (q.weight * q.center - linear + u / lambda) / denom;
            return project(set, v);
          },
          [&](const PenaltyTerm& p) -> Vector {
            if (!std::holds_alternative<WholeSpace>(set)) {
              throw InvalidArgument("penalty terms support only X_i = R^n");
            }
            return penalty_prox(p, u - lambda * linear, lambda);
          },
          [&](const SmoothTerm& s) -> Vector {
            return smooth_prox(s, set, linear, u, lambda, tol, block);
          },
      },
      term);
}

// ---------------------------------------------------------------------------

ProblemInstance::ProblemInstance(std::vector<BlockTerm> terms, std::vector<BlockSet> sets,
                                 ArcConstraintSystem constraints,
                                 std::optional<ReferenceSolution> reference, std::string kind)
    : terms_(std::move(terms)),
      sets_(std::move(sets)),
      constraints_(std::move(constraints)),
      kind_(std::move(kind)) {
  const Index m = constraints_.agents();
  const Index n = constraints_.block_size();
  if (static_cast<Index>(terms_.size()) != m) throw DimensionError("m", "one term per block");
  if (sets_.empty()) sets_.assign(static_cast<std::size_t>(m), WholeSpace{});
  if (static_cast<Index>(sets_.size()) != m) throw DimensionError("m", "one set per block");
  for (Index i = 0; i < m; ++i) {
    validate_term(terms_[static_cast<std::size_t>(i)], n, i);
    validate_set(sets_[static_cast<std::size_t>(i)], n, i);
  }
  set_reference(std::move(reference));
}

void ProblemInstance::set_reference(std::optional<ReferenceSolution> reference) {
  if (reference) {
    if (reference->x.blocks() != agents() || reference->x.block_size() != block_size()) {
      throw DimensionError("m", "reference primal point has the wrong shape");
    }
    if (reference->y.arcs() != arcs() || reference->y.block_size() != block_size()) {
      throw DimensionError("l", "reference dual point has the wrong shape");
    }
  }
  reference_ = std::move(reference);
}

bool ProblemInstance::whole_space() const {
  return std::all_of(sets_.begin(), sets_.end(),
                     [](const BlockSet& s) { return std::holds_alternative<WholeSpace>(s); });
}

namespace {
void check_shape(const ProblemInstance& prob, const BlockVector& x, const char* what) {
  if (x.blocks() != prob.agents()) throw DimensionError("m", std::string(what) + " block count");
  if (x.block_size() != prob.block_size()) {
    throw DimensionError("n", std::string(what) + " block size");
  }
}
}  // namespace

double objective_value(const ProblemInstance& prob, const BlockVector& x) {
  check_shape(prob, x, "objective argument");
  double sum = 0.0;
  for (Index i = 0; i < prob.agents(); ++i) sum += term_value(prob.term(i), x.block(i));
  return sum;
}

BlockVector project_feasible(const ProblemInstance& prob, const BlockVector& x) {
  check_shape(prob, x, "projection argument");
  BlockVector out(prob.agents(), prob.block_size());
  for (Index i = 0; i < prob.agents(); ++i) out.block(i) = project(prob.set(i), x.block(i));
  return out;
}

BlockVector prox_primal(const ProblemInstance& prob, const BlockVector& linear,
                        const BlockVector& u, double lambda, double tol) {
  check_shape(prob, linear, "prox linear term");
  check_shape(prob, u, "prox centre");
  if (!(lambda > 0.0)) throw InvalidArgument("prox stepsize lambda must be positive");
  BlockVector out(prob.agents(), prob.block_size());
  for (Index i = 0; i < prob.agents(); ++i) {
    out.block(i) = block_prox(prob.term(i), prob.set(i), linear.block(i), u.block(i), lambda,
                              tol, i);
  }
  return out;
}

double lagrangian(const ProblemInstance& prob, const BlockVector& x, const DualVector& y) {
  const auto& sys = prob.constraints();
  if (y.arcs() != sys.arcs()) throw DimensionError("l", "dual vector arc count");
  if (y.block_size() != sys.block_size()) throw DimensionError("n", "dual block size");
  double value = objective_value(prob, x);
  Index k = 0;
  for (Index i : y.active()) {
    value += y.packed_block(k++).dot(sys.apply_row(i, x) - sys.rhs().block(i));
  }
  return value;
}

SaddleResidual saddle_residual(const ProblemInstance& prob, const IndexSet& I,
                               const BlockVector& x, const DualVector& y, double tol) {
  if (!y.active().is_subset_of(I)) {
    throw InvalidArgument("saddle residual requires y supported in I");
  }
  const auto& sys = prob.constraints();
  SaddleResidual r;
  r.primal_feasibility = constraint_residual(sys, I, x).norm();
  const BlockVector linear = apply_A_transpose(sys, I, y);
  r.stationarity = distance(x, prox_primal(prob, linear, x, 1.0, tol));
  return r;
}

std::optional<BlockVector> unconstrained_minimizer(const ProblemInstance& prob) {
  BlockVector out(prob.agents(), prob.block_size());
  for (Index i = 0; i < prob.agents(); ++i) {
    const auto* q = std::get_if<QuadraticTerm>(&prob.term(i));
    if (q == nullptr || !(q->weight > 0.0)) return std::nullopt;
    out.block(i) = project(prob.set(i), q->center);
  }
  return out;
}

// ---------------------------------------------------------------------------

DualVector spanning_tree_duals(const ArcConstraintSystem& sys, const BlockVector& residual) {
  if (!sys.is_consensus()) throw InvalidArgument("spanning-tree duals need a consensus system");
  const Index m = sys.agents();
  const Index n = sys.block_size();
  if (residual.blocks() != m || residual.block_size() != n) {
    throw DimensionError("m", "residual must have one block per agent");
  }

  std::vector<std::vector<Index>> incident(static_cast<std::size_t>(m));
  for (Index i = 0; i < sys.arcs(); ++i) {
    const auto arc = *sys.consensus_arc(i);
    incident[static_cast<std::size_t>(arc.tail)].push_back(i);
    incident[static_cast<std::size_t>(arc.head)].push_back(i);
  }

  // BFS from vertex 0; parent_arc[v] is the tree arc joining v to its parent.
  std::vector<Index> parent_arc(static_cast<std::size_t>(m), -1);
  std::vector<bool> seen(static_cast<std::size_t>(m), false);
  std::vector<Index> order;
  std::deque<Index> queue{0};
  seen[0] = true;
  while (!queue.empty()) {
    const Index v = queue.front();
    queue.pop_front();
    order.push_back(v);
    for (Index i : incident[static_cast<std::size_t>(v)]) {
      const auto arc = *sys.consensus_arc(i);
      const Index w = arc.tail == v ? arc.head : arc.tail;
      if (seen[static_cast<std::size_t>(w)]) continue;
      seen[static_cast<std::size_t>(w)] = true;
      parent_arc[static_cast<std::size_t>(w)] = i;
      queue.push_back(w);
    }
  }
  if (static_cast<Index>(order.size()) != m) {
    throw InvalidArgument("spanning-tree duals need a connected arc set");
  }

  // Leaves first: the tree arc of v carries whatever v still needs.
  BlockVector remaining = residual;
  BlockVector y_full(sys.arcs(), n);
  std::vector<Index> tree;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const Index v = *it;
    const Index i = parent_arc[static_cast<std::size_t>(v)];
    if (i < 0) continue;
    tree.push_back(i);
    const auto arc = *sys.consensus_arc(i);
    const Vector need = remaining.block(v);
    // Arc i adds +y_i at its tail and -y_i at its head.
    const Vector yi = arc.tail == v ? need : Vector(-need);
    y_full.block(i) = yi;
    const Index parent = arc.tail == v ? arc.head : arc.tail;
    if (arc.tail == parent) {
      remaining.block(parent) -= yi;
    } else {
      remaining.block(parent) += yi;
    }
  }
  const double imbalance = remaining.block(0).norm();
  if (imbalance > 1e-9 * (1.0 + residual.norm())) {
    throw InvalidArgument("stationarity residuals do not sum to zero");
  }
  return project_Y(IndexSet(sys.arcs(), tree), y_full);
}

namespace {

std::vector<double> resolve_weights(const std::vector<double>& weights, std::size_t m) {
  if (weights.empty()) return std::vector<double>(m, 1.0);
  if (weights.size() != m) throw DimensionError("m", "one weight per agent");
  for (double a : weights) {
    if (!(a >= 0.0) || !std::isfinite(a)) {
      throw InvalidArgument("negative curvature: quadratic weights must be >= 0");
    }
  }
  return weights;
}

ProblemInstance quadratic_instance(const ArcConstraintSystem& sys, const std::vector<Vector>& centers,
                                   const std::vector<double>& raw_weights,
                                   const std::optional<std::vector<Box>>& boxes,
                                   std::string kind) {
  const auto m = static_cast<std::size_t>(sys.agents());
  const Index n = sys.block_size();
  if (!sys.is_consensus()) throw InvalidArgument("built-in instances are consensus problems");
  if (centers.size() != m) throw DimensionError("m", "one center per agent");
  const auto weights = resolve_weights(raw_weights, m);

  std::vector<BlockTerm> terms;
  for (std::size_t i = 0; i < m; ++i) terms.emplace_back(QuadraticTerm{weights[i], centers[i]});
  std::vector<BlockSet> sets(m, WholeSpace{});
  if (boxes) {
    if (boxes->size() != m) throw DimensionError("m", "one box per agent");
    for (std::size_t i = 0; i < m; ++i) sets[i] = (*boxes)[i];
  }
  ProblemInstance prob(std::move(terms), std::move(sets), sys, std::nullopt, std::move(kind));

  // Weighted mean consensus point; it is the solution whenever every box holds it.
  double total = 0.0;
  Vector mean = Vector::Zero(n);
  for (std::size_t i = 0; i < m; ++i) {
    total += weights[i];
    mean += weights[i] * centers[i];
  }
  if (!(total > 0.0)) return prob;
  mean /= total;
  for (std::size_t i = 0; i < m; ++i) {
    if (!contains(prob.set(static_cast<Index>(i)), mean)) return prob;
  }
  BlockVector x_star(static_cast<Index>(m), n);
  BlockVector need(static_cast<Index>(m), n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto b = static_cast<Index>(i);
    x_star.block(b) = mean;
    need.block(b) = weights[i] * (centers[i] - mean);
  }
  if (m == 1) {
    prob.set_reference(ReferenceSolution{x_star, DualVector(sys.arcs(), n)});
    return prob;
  }
  try {
    prob.set_reference(ReferenceSolution{x_star, spanning_tree_duals(sys, need)});
  } catch (const InvalidArgument&) {
    // disconnected graph: no consensus reference
  }
  return prob;
}

}  // namespace

ProblemInstance make_builtin(const ArcConstraintSystem& sys, const BuiltinParams& params) {
  return std::visit(
      overloaded{
          [&](const QuadraticConsensusParams& p) {
            return quadratic_instance(sys, p.centers, p.weights, p.boxes, "quadratic_consensus");
          },
          [&](const ConstrainedLeastSquaresParams& p) {
            return quadratic_instance(sys, p.centers, p.weights, p.boxes,
                                      "constrained_least_squares");
          },
          [&](const PenalizedFeasibilityParams& p) {
            const auto m = static_cast<std::size_t>(sys.agents());
            const Index n = sys.block_size();
            if (!sys.is_consensus()) {
              throw InvalidArgument("built-in instances are consensus problems");
            }
            if (p.normals.size() != m || p.offsets.size() != m) {
              throw DimensionError("m", "one halfspace per agent");
            }
            std::vector<BlockTerm> terms;
            for (std::size_t i = 0; i < m; ++i) {
              terms.emplace_back(PenaltyTerm{p.normals[i], p.offsets[i], p.power});
            }
            ProblemInstance prob(std::move(terms), {}, sys, std::nullopt,
                                 "penalized_feasibility");
            if (p.feasible_point) {
              if (p.feasible_point->size() != n) throw DimensionError("n", "feasible point");
              for (std::size_t i = 0; i < m; ++i) {
                if (p.normals[i].dot(*p.feasible_point) - p.offsets[i] > 1e-12) {
                  throw InvalidArgument("feasible_point violates halfspace " + std::to_string(i));
                }
              }
              BlockVector x_star(static_cast<Index>(m), n);
              for (Index i = 0; i < static_cast<Index>(m); ++i) x_star.block(i) = *p.feasible_point;
              prob.set_reference(ReferenceSolution{x_star, DualVector(sys.arcs(), n)});
            }
            return prob;
          },
      },
      params);
}

}  // namespace pdm
