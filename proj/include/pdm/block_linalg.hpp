#pragma once

// Block-structured vectors and arc-indexed equality constraints A_I x = b_I.
//
// A primal point x in R^{m*n} is stored block-major: block i occupies
// coordinates [i*n, i*n + n). Arc indices, vertex indices and block indices
// are zero-based.

#include <Eigen/Dense>

#include <optional>
#include <variant>
#include <vector>

#include "pdm/errors.hpp"

namespace pdm {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class BlockVector {
 public:
  BlockVector() = default;
  BlockVector(Index blocks, Index block_size);
  BlockVector(Index blocks, Index block_size, Vector data);

  static BlockVector from_blocks(const std::vector<Vector>& blocks);

  Index blocks() const noexcept { return blocks_; }
  Index block_size() const noexcept { return block_size_; }

  const Vector& data() const noexcept { return data_; }
  Vector& data() noexcept { return data_; }

  auto block(Index i) { return data_.segment(i * block_size_, block_size_); }
  auto block(Index i) const { return data_.segment(i * block_size_, block_size_); }

  double norm() const { return data_.norm(); }
  double squared_norm() const { return data_.squaredNorm(); }

  bool same_shape(const BlockVector& other) const noexcept {
    return blocks_ == other.blocks_ && block_size_ == other.block_size_;
  }

  BlockVector& operator+=(const BlockVector& rhs);
  BlockVector& operator-=(const BlockVector& rhs);
  BlockVector& operator*=(double s) {
    data_ *= s;
    return *this;
  }

  friend BlockVector operator+(BlockVector lhs, const BlockVector& rhs) { return lhs += rhs; }
  friend BlockVector operator-(BlockVector lhs, const BlockVector& rhs) { return lhs -= rhs; }
  friend BlockVector operator*(double s, BlockVector v) { return v *= s; }

  friend bool operator==(const BlockVector& a, const BlockVector& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

 private:
  Index blocks_ = 0;
  Index block_size_ = 0;
  Vector data_;
};

/// Sorted duplicate-free subset of {0, ..., universe_size - 1}. The empty set is valid.
class IndexSet {
 public:
  explicit IndexSet(Index universe_size = 0) : universe_(universe_size) {}
  IndexSet(Index universe_size, std::vector<Index> members);

  static IndexSet full(Index universe_size);

  Index universe_size() const noexcept { return universe_; }
  Index size() const noexcept { return static_cast<Index>(members_.size()); }
  bool empty() const noexcept { return members_.empty(); }
  bool contains(Index i) const;

  /// Position of `i` within members(), if present.
  std::optional<Index> position(Index i) const;

  const std::vector<Index>& members() const noexcept { return members_; }
  auto begin() const noexcept { return members_.begin(); }
  auto end() const noexcept { return members_.end(); }

  bool is_subset_of(const IndexSet& other) const;

  friend IndexSet set_union(const IndexSet& a, const IndexSet& b);
  friend IndexSet set_intersection(const IndexSet& a, const IndexSet& b);
  friend IndexSet set_difference(const IndexSet& a, const IndexSet& b);

  friend bool operator==(const IndexSet&, const IndexSet&) = default;

 private:
  Index universe_ = 0;
  std::vector<Index> members_;
};

/// Consensus row: A_i x = x_tail - x_head.
struct ConsensusArc {
  Index tail = 0;
  Index head = 0;
  friend bool operator==(const ConsensusArc&, const ConsensusArc&) = default;
};

/// Either a consensus arc or an explicit n x (m*n) block row.
using ArcRow = std::variant<ConsensusArc, Matrix>;

class ArcConstraintSystem {
 public:
  ArcConstraintSystem() = default;
  ArcConstraintSystem(Index m, Index n, std::vector<ArcRow> rows, BlockVector rhs);

  /// x_s - x_t = 0 for each arc, b = 0.
  static ArcConstraintSystem consensus(Index m, Index n, std::vector<ConsensusArc> arcs);

  Index agents() const noexcept { return m_; }
  Index block_size() const noexcept { return n_; }
  Index arcs() const noexcept { return static_cast<Index>(rows_.size()); }

  const ArcRow& row(Index i) const { return rows_.at(static_cast<std::size_t>(i)); }
  const BlockVector& rhs() const noexcept { return rhs_; }

  /// Consensus arc of row `i`, if that row is in consensus form.
  std::optional<ConsensusArc> consensus_arc(Index i) const;

  /// All rows in consensus form and b = 0.
  bool is_consensus() const noexcept { return consensus_; }

  /// A_i x, an n-vector.
  Vector apply_row(Index i, const BlockVector& x) const;
  /// out += A_i^T y_i
  void add_row_transpose(Index i, const Eigen::Ref<const Vector>& y_block, BlockVector& out) const;

  /// Stacked |I|*n x m*n matrix A_I (rows ordered by arc index).
  Matrix dense_rows(const IndexSet& I) const;
  /// Stacked b_I.
  Vector dense_rhs(const IndexSet& I) const;

 private:
  Index m_ = 0;
  Index n_ = 0;
  std::vector<ArcRow> rows_;
  BlockVector rhs_;
  bool consensus_ = false;
};

/// Arc-indexed dual vector in Y_I: only blocks of `active` arcs are stored.
class DualVector {
 public:
  DualVector() = default;
  DualVector(Index arcs, Index block_size);
  DualVector(IndexSet active, Index block_size, Vector packed);

  Index arcs() const noexcept { return active_.universe_size(); }
  Index block_size() const noexcept { return block_size_; }
  const IndexSet& active() const noexcept { return active_; }

  /// Block of arc `i`; the zero block when `i` is inactive.
  Vector block(Index i) const;

  /// k-th stored block (arc active().members()[k]).
  auto packed_block(Index k) { return values_.segment(k * block_size_, block_size_); }
  auto packed_block(Index k) const { return values_.segment(k * block_size_, block_size_); }
  const Vector& packed() const noexcept { return values_; }

  /// Dense l-block representation with zeros on inactive arcs.
  BlockVector to_full() const;

  double norm() const { return values_.norm(); }
  double squared_norm() const { return values_.squaredNorm(); }

  friend bool operator==(const DualVector& a, const DualVector& b) {
    return a.block_size_ == b.block_size_ && a.active_ == b.active_ && a.values_ == b.values_;
  }

 private:
  IndexSet active_;
  Index block_size_ = 0;
  Vector values_;
};

/// ||a - b|| with inactive blocks read as zero.
double distance(const DualVector& a, const DualVector& b);
double distance(const BlockVector& a, const BlockVector& b);

/// One n-block per arc in L: A_i x for i in I, zero elsewhere.
BlockVector apply_A(const ArcConstraintSystem& sys, const IndexSet& I, const BlockVector& x);

/// A_I x - b_I laid out like apply_A.
BlockVector constraint_residual(const ArcConstraintSystem& sys, const IndexSet& I,
                                const BlockVector& x);

/// Sum over active arcs i in I of A_i^T y_i, accumulated in ascending arc order.
BlockVector apply_A_transpose(const ArcConstraintSystem& sys, const IndexSet& I,
                              const DualVector& y);

/// Projection onto Y_I of a sparse dual: keeps blocks of I ∩ y.active().
DualVector project_Y(const IndexSet& I, const DualVector& y);
/// Projection onto Y_I of a dense l-block vector: keeps blocks of I.
DualVector project_Y(const IndexSet& I, const BlockVector& y);

struct PowerIterationResult {
  double norm = 0.0;
  Index iterations = 0;
  bool converged = false;
};

/// Largest singular value of A_I by power iteration on A_I^T A_I.
///
/// The start vector is fixed, so the result is deterministic. Iteration stops
/// once the eigen-residual ||Mv - rho v|| falls below tol * rho; when the cap is
/// hit the estimate is returned inflated by 1%.
PowerIterationResult operator_norm_estimate(const ArcConstraintSystem& sys, const IndexSet& I,
                                            double tol = 1e-10);
double operator_norm(const ArcConstraintSystem& sys, const IndexSet& I, double tol = 1e-10);

/// True iff A_I x = b_I implies A_J x = b_J. Requires I ⊆ J.
bool is_basic_index_set(const ArcConstraintSystem& sys, const IndexSet& I, const IndexSet& J);

}  // namespace pdm
