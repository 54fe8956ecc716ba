#pragma once

// Separable convex objectives over a Cartesian feasible set, the primal
// proximal step, Lagrangian evaluation and saddle-point residuals.

#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pdm/block_linalg.hpp"

namespace pdm {

struct WholeSpace {};

struct Box {
  Vector lower;
  Vector upper;
};

/// Feasible set X_i of one block.
using BlockSet = std::variant<WholeSpace, Box>;

Vector project(const BlockSet& set, const Vector& v);
bool contains(const BlockSet& set, const Vector& v, double tol = 0.0);

/// 0.5 * weight * ||v - center||^2, weight >= 0.
struct QuadraticTerm {
  double weight = 1.0;
  Vector center;
};

/// (1/power) * max(<normal, v> - offset, 0)^power with power in {1, 2}.
struct PenaltyTerm {
  Vector normal;
  double offset = 0.0;
  int power = 2;
};

/// Caller-supplied convex smooth term with a Lipschitz gradient.
struct SmoothTerm {
  std::function<double(const Vector&)> value;
  std::function<Vector(const Vector&)> gradient;
  double lipschitz = 0.0;
};

using BlockTerm = std::variant<QuadraticTerm, PenaltyTerm, SmoothTerm>;

double term_value(const BlockTerm& term, const Vector& v);

/// Thrown when the projected-gradient inner solve for a SmoothTerm hits its cap.
class ProxNotConverged : public Error {
 public:
  ProxNotConverged(Vector best, double residual, Index block)
      : Error("prox inner loop did not converge on block " + std::to_string(block) +
              " (gradient-mapping norm " + std::to_string(residual) + ")"),
        best_(std::move(best)),
        residual_(residual),
        block_(block) {}
  const Vector& best() const noexcept { return best_; }
  double residual() const noexcept { return residual_; }
  Index block() const noexcept { return block_; }

 private:
  Vector best_;
  double residual_;
  Index block_;
};

inline constexpr int kProxInnerCap = 10000;

/// argmin over `set` of term(v) + <linear, v> + ||v - u||^2 / (2 lambda).
Vector block_prox(const BlockTerm& term, const BlockSet& set, const Vector& linear,
                  const Vector& u, double lambda, double tol = 1e-10, Index block = 0);

struct ReferenceSolution {
  BlockVector x;
  DualVector y;
};

/// min sum_i f_i(x_i) subject to x_i in X_i and A x = b.
class ProblemInstance {
 public:
  ProblemInstance(std::vector<BlockTerm> terms, std::vector<BlockSet> sets,
                  ArcConstraintSystem constraints,
                  std::optional<ReferenceSolution> reference = std::nullopt,
                  std::string kind = "custom");

  Index agents() const noexcept { return constraints_.agents(); }
  Index block_size() const noexcept { return constraints_.block_size(); }
  Index arcs() const noexcept { return constraints_.arcs(); }

  const std::vector<BlockTerm>& terms() const noexcept { return terms_; }
  const BlockTerm& term(Index i) const { return terms_.at(static_cast<std::size_t>(i)); }
  const std::vector<BlockSet>& sets() const noexcept { return sets_; }
  const BlockSet& set(Index i) const { return sets_.at(static_cast<std::size_t>(i)); }
  const ArcConstraintSystem& constraints() const noexcept { return constraints_; }
  const std::optional<ReferenceSolution>& reference() const noexcept { return reference_; }
  const std::string& kind() const noexcept { return kind_; }

  bool whole_space() const;

  void set_reference(std::optional<ReferenceSolution> reference);

 private:
  std::vector<BlockTerm> terms_;
  std::vector<BlockSet> sets_;
  ArcConstraintSystem constraints_;
  std::optional<ReferenceSolution> reference_;
  std::string kind_;
};

double objective_value(const ProblemInstance& prob, const BlockVector& x);

/// Projection of x onto X = X_1 x ... x X_m.
BlockVector project_feasible(const ProblemInstance& prob, const BlockVector& x);

/// Blockwise minimiser over X of f(x) + <linear, x> + ||x - u||^2 / (2 lambda).
BlockVector prox_primal(const ProblemInstance& prob, const BlockVector& linear,
                        const BlockVector& u, double lambda, double tol = 1e-10);

/// L(x, y) = f(x) + <y, A x - b>; inactive dual blocks contribute nothing.
double lagrangian(const ProblemInstance& prob, const BlockVector& x, const DualVector& y);

struct SaddleResidual {
  double primal_feasibility = 0.0;
  double stationarity = 0.0;
};

/// (||A_I x - b_I||, ||x - prox(A^T y, x, 1)||). Both vanish exactly at saddle points for I.
SaddleResidual saddle_residual(const ProblemInstance& prob, const IndexSet& I,
                               const BlockVector& x, const DualVector& y, double tol = 1e-10);

/// Minimiser of f over X alone, when it is available in closed form (quadratic blocks
/// with positive weights).
std::optional<BlockVector> unconstrained_minimizer(const ProblemInstance& prob);

// ---------------------------------------------------------------------------
// Built-in instances. All are consensus problems over the arcs of `constraints`.

/// f_i = 0.5 a_i ||v - c_i||^2, X_i = R^n or a box.
struct QuadraticConsensusParams {
  std::vector<Vector> centers;
  std::vector<double> weights;          // empty means all ones
  std::optional<std::vector<Box>> boxes;
};

/// f_i = (1/p) max(<g_i, v> - h_i, 0)^p, X_i = R^n.
struct PenalizedFeasibilityParams {
  std::vector<Vector> normals;
  std::vector<double> offsets;
  int power = 2;
  std::optional<Vector> feasible_point;
};

/// Per-block weighted quadratics restricted to boxes.
struct ConstrainedLeastSquaresParams {
  std::vector<Vector> centers;
  std::vector<double> weights;
  std::vector<Box> boxes;
};

using BuiltinParams = std::variant<QuadraticConsensusParams, PenalizedFeasibilityParams,
                                   ConstrainedLeastSquaresParams>;

ProblemInstance make_builtin(const ArcConstraintSystem& constraints, const BuiltinParams& params);

/// Dual multipliers y on a spanning tree of the consensus arcs with
/// (A^T y)_s = residual_s for every block. Requires a connected arc set and
/// blockwise-summing-to-zero residuals.
DualVector spanning_tree_duals(const ArcConstraintSystem& constraints,
                               const BlockVector& residual);

}  // namespace pdm
