#include "pdm/block_linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "pdm/union_find.hpp"

namespace pdm {

namespace {

void require(bool ok, const char* axis, const std::string& what) {
  if (!ok) throw DimensionError(axis, what);
}

void check_primal(const ArcConstraintSystem& sys, const BlockVector& x) {
  require(x.blocks() == sys.agents(), "m",
          "primal vector has " + std::to_string(x.blocks()) + " blocks, system expects " +
              std::to_string(sys.agents()));
  require(x.block_size() == sys.block_size(), "n",
          "primal block size " + std::to_string(x.block_size()) + ", system expects " +
              std::to_string(sys.block_size()));
}

void check_index_set(const ArcConstraintSystem& sys, const IndexSet& I) {
  require(I.universe_size() == sys.arcs(), "l",
          "index set universe " + std::to_string(I.universe_size()) + ", system has " +
              std::to_string(sys.arcs()) + " arcs");
}

void check_dual(const ArcConstraintSystem& sys, const DualVector& y) {
  require(y.arcs() == sys.arcs(), "l", "dual vector arc count mismatch");
  require(y.block_size() == sys.block_size(), "n", "dual block size mismatch");
}

}  // namespace

// ---------------------------------------------------------------------------
// BlockVector

BlockVector::BlockVector(Index blocks, Index block_size)
    : BlockVector(blocks, block_size, Vector::Zero(blocks * block_size)) {}

BlockVector::BlockVector(Index blocks, Index block_size, Vector data)
    : blocks_(blocks), block_size_(block_size), data_(std::move(data)) {
  if (blocks < 0 || block_size < 1) {
    throw DimensionError(block_size < 1 ? "n" : "m", "block vector needs m >= 0 and n >= 1");
  }
  require(data_.size() == blocks * block_size, "data",
          "data length " + std::to_string(data_.size()) + " != m*n = " +
              std::to_string(blocks * block_size));
}

BlockVector BlockVector::from_blocks(const std::vector<Vector>& blocks) {
  if (blocks.empty()) throw DimensionError("m", "from_blocks needs at least one block");
  const Index n = blocks.front().size();
  BlockVector out(static_cast<Index>(blocks.size()), n);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    require(blocks[i].size() == n, "n", "blocks of unequal size");
    out.block(static_cast<Index>(i)) = blocks[i];
  }
  return out;
}

BlockVector& BlockVector::operator+=(const BlockVector& rhs) {
  require(same_shape(rhs), "m", "block vector shapes differ");
  data_ += rhs.data_;
  return *this;
}

BlockVector& BlockVector::operator-=(const BlockVector& rhs) {
  require(same_shape(rhs), "m", "block vector shapes differ");
  data_ -= rhs.data_;
  return *this;
}

// ---------------------------------------------------------------------------
// IndexSet

IndexSet::IndexSet(Index universe_size, std::vector<Index> members)
    : universe_(universe_size), members_(std::move(members)) {
  std::sort(members_.begin(), members_.end());
  if (std::adjacent_find(members_.begin(), members_.end()) != members_.end()) {
    throw InvalidArgument("index set contains a duplicate arc");
  }
  if (!members_.empty() && (members_.front() < 0 || members_.back() >= universe_)) {
    throw InvalidArgument("index set member outside [0, " + std::to_string(universe_) + ")");
  }
}

IndexSet IndexSet::full(Index universe_size) {
  IndexSet s(universe_size);
  s.members_.resize(static_cast<std::size_t>(universe_size));
  for (Index i = 0; i < universe_size; ++i) s.members_[static_cast<std::size_t>(i)] = i;
  return s;
}

bool IndexSet::contains(Index i) const {
  return std::binary_search(members_.begin(), members_.end(), i);
}

std::optional<Index> IndexSet::position(Index i) const {
  auto it = std::lower_bound(members_.begin(), members_.end(), i);
  if (it == members_.end() || *it != i) return std::nullopt;
  return static_cast<Index>(it - members_.begin());
}

bool IndexSet::is_subset_of(const IndexSet& other) const {
  return std::includes(other.members_.begin(), other.members_.end(), members_.begin(),
                       members_.end());
}

IndexSet set_union(const IndexSet& a, const IndexSet& b) {
  IndexSet out(std::max(a.universe_, b.universe_));
  std::set_union(a.members_.begin(), a.members_.end(), b.members_.begin(), b.members_.end(),
                 std::back_inserter(out.members_));
  return out;
}

IndexSet set_intersection(const IndexSet& a, const IndexSet& b) {
  IndexSet out(std::max(a.universe_, b.universe_));
  std::set_intersection(a.members_.begin(), a.members_.end(), b.members_.begin(),
                        b.members_.end(), std::back_inserter(out.members_));
  return out;
}

IndexSet set_difference(const IndexSet& a, const IndexSet& b) {
  IndexSet out(a.universe_);
  std::set_difference(a.members_.begin(), a.members_.end(), b.members_.begin(), b.members_.end(),
                      std::back_inserter(out.members_));
  return out;
}

// ---------------------------------------------------------------------------
// ArcConstraintSystem

ArcConstraintSystem::ArcConstraintSystem(Index m, Index n, std::vector<ArcRow> rows,
                                         BlockVector rhs)
    : m_(m), n_(n), rows_(std::move(rows)), rhs_(std::move(rhs)) {
  require(m >= 1, "m", "system needs at least one block");
  require(n >= 1, "n", "block size must be positive");
  require(rhs_.blocks() == arcs() && rhs_.block_size() == n, "l",
          "right-hand side must have one n-block per arc");
  consensus_ = rhs_.data().isZero(0.0);
  for (const auto& row : rows_) {
    if (const auto* arc = std::get_if<ConsensusArc>(&row)) {
      if (arc->tail == arc->head || arc->tail < 0 || arc->head < 0 || arc->tail >= m ||
          arc->head >= m) {
        throw InvalidArgument("consensus arc (" + std::to_string(arc->tail) + ", " +
                              std::to_string(arc->head) + ") invalid for m = " +
                              std::to_string(m));
      }
    } else {
      const auto& dense = std::get<Matrix>(row);
      require(dense.rows() == n && dense.cols() == m * n, "n",
              "dense arc row must be n x (m*n)");
      consensus_ = false;
    }
  }
}

ArcConstraintSystem ArcConstraintSystem::consensus(Index m, Index n,
                                                   std::vector<ConsensusArc> arcs) {
  const Index l = static_cast<Index>(arcs.size());
  std::vector<ArcRow> rows(arcs.begin(), arcs.end());
  return ArcConstraintSystem(m, n, std::move(rows), BlockVector(l, n));
}

std::optional<ConsensusArc> ArcConstraintSystem::consensus_arc(Index i) const {
  if (const auto* arc = std::get_if<ConsensusArc>(&row(i))) return *arc;
  return std::nullopt;
}

Vector ArcConstraintSystem::apply_row(Index i, const BlockVector& x) const {
  if (const auto* arc = std::get_if<ConsensusArc>(&row(i))) {
    return x.block(arc->tail) - x.block(arc->head);
  }
  return std::get<Matrix>(row(i)) * x.data();
}

void ArcConstraintSystem::add_row_transpose(Index i, const Eigen::Ref<const Vector>& y_block,
                                            BlockVector& out) const {
  if (const auto* arc = std::get_if<ConsensusArc>(&row(i))) {
    out.block(arc->tail) += y_block;
    out.block(arc->head) -= y_block;
  } else {
    out.data().noalias() += std::get<Matrix>(row(i)).transpose() * y_block;
  }
}

Matrix ArcConstraintSystem::dense_rows(const IndexSet& I) const {
  check_index_set(*this, I);
  Matrix out = Matrix::Zero(I.size() * n_, m_ * n_);
  Index r = 0;
  for (Index i : I) {
    auto rows = out.middleRows(r * n_, n_);
    if (const auto* arc = std::get_if<ConsensusArc>(&row(i))) {
      rows.middleCols(arc->tail * n_, n_).setIdentity();
      rows.middleCols(arc->head * n_, n_) = -Matrix::Identity(n_, n_);
    } else {
      rows = std::get<Matrix>(row(i));
    }
    ++r;
  }
  return out;
}

Vector ArcConstraintSystem::dense_rhs(const IndexSet& I) const {
  check_index_set(*this, I);
  Vector out(I.size() * n_);
  Index r = 0;
  for (Index i : I) out.segment(n_ * r++, n_) = rhs_.block(i);
  return out;
}

// ---------------------------------------------------------------------------
// DualVector

DualVector::DualVector(Index arcs, Index block_size)
    : active_(arcs), block_size_(block_size), values_(0) {
  require(block_size >= 1, "n", "dual block size must be positive");
}

DualVector::DualVector(IndexSet active, Index block_size, Vector packed)
    : active_(std::move(active)), block_size_(block_size), values_(std::move(packed)) {
  require(block_size >= 1, "n", "dual block size must be positive");
  require(values_.size() == active_.size() * block_size, "l",
          "dual vector must store exactly one block per active arc");
}

Vector DualVector::block(Index i) const {
  if (auto k = active_.position(i)) return packed_block(*k);
  return Vector::Zero(block_size_);
}

BlockVector DualVector::to_full() const {
  BlockVector out(arcs(), block_size_);
  Index k = 0;
  for (Index i : active_) out.block(i) = packed_block(k++);
  return out;
}

double distance(const DualVector& a, const DualVector& b) {
  require(a.arcs() == b.arcs(), "l", "dual vectors have different arc counts");
  require(a.block_size() == b.block_size(), "n", "dual vectors have different block sizes");
  double sum = 0.0;
  for (Index i : set_union(a.active(), b.active())) sum += (a.block(i) - b.block(i)).squaredNorm();
  return std::sqrt(sum);
}

double distance(const BlockVector& a, const BlockVector& b) {
  require(a.same_shape(b), "m", "block vectors have different shapes");
  return (a.data() - b.data()).norm();
}

// ---------------------------------------------------------------------------
// Operations

BlockVector apply_A(const ArcConstraintSystem& sys, const IndexSet& I, const BlockVector& x) {
  check_primal(sys, x);
  check_index_set(sys, I);
  BlockVector out(sys.arcs(), sys.block_size());
  for (Index i : I) out.block(i) = sys.apply_row(i, x);
  return out;
}

BlockVector constraint_residual(const ArcConstraintSystem& sys, const IndexSet& I,
                                const BlockVector& x) {
  BlockVector out = apply_A(sys, I, x);
  for (Index i : I) out.block(i) -= sys.rhs().block(i);
  return out;
}

BlockVector apply_A_transpose(const ArcConstraintSystem& sys, const IndexSet& I,
                              const DualVector& y) {
  check_index_set(sys, I);
  check_dual(sys, y);
  BlockVector out(sys.agents(), sys.block_size());
  const auto& members = y.active().members();
  for (std::size_t k = 0; k < members.size(); ++k) {
    const Index i = members[k];
    if (!I.contains(i)) continue;
    sys.add_row_transpose(i, y.packed_block(static_cast<Index>(k)), out);
  }
  return out;
}

DualVector project_Y(const IndexSet& I, const DualVector& y) {
  require(I.universe_size() == y.arcs(), "l", "index set and dual vector disagree on l");
  IndexSet kept = set_intersection(I, y.active());
  Vector packed(kept.size() * y.block_size());
  Index k = 0;
  for (Index i : kept) packed.segment(y.block_size() * k++, y.block_size()) = y.block(i);
  return DualVector(std::move(kept), y.block_size(), std::move(packed));
}

DualVector project_Y(const IndexSet& I, const BlockVector& y) {
  require(I.universe_size() == y.blocks(), "l", "index set and dual vector disagree on l");
  Vector packed(I.size() * y.block_size());
  Index k = 0;
  for (Index i : I) packed.segment(y.block_size() * k++, y.block_size()) = y.block(i);
  return DualVector(I, y.block_size(), std::move(packed));
}

PowerIterationResult operator_norm_estimate(const ArcConstraintSystem& sys, const IndexSet& I,
                                            double tol) {
  check_index_set(sys, I);
  if (I.empty()) throw InvalidArgument("operator norm of an empty arc set is undefined");
  if (!(tol > 0.0)) throw InvalidArgument("operator norm tolerance must be positive");

  const Index m = sys.agents();
  const Index n = sys.block_size();
  const Index cap = std::max<Index>(10 * m * n, 2000);

  // Fixed pseudorandom start. Structured sequences can satisfy integer
  // relations that make them exactly orthogonal to the top eigenspace.
  BlockVector v(m, n);
  std::mt19937_64 gen(0x5eed);
  for (Index j = 0; j < m * n; ++j) {
    v.data()[j] = 0.5 + static_cast<double>(gen() >> 11) * 0x1.0p-53;
  }
  v.data().normalize();

  auto gram = [&](const BlockVector& u) {
    const BlockVector Au = apply_A(sys, I, u);
    return apply_A_transpose(sys, I, project_Y(I, Au));
  };

  PowerIterationResult result;
  double rho = 0.0;
  for (Index it = 1; it <= cap; ++it) {
    BlockVector w = gram(v);
    rho = v.data().dot(w.data());
    const double residual = (w.data() - rho * v.data()).norm();
    result.iterations = it;
    const double wn = w.norm();
    if (residual <= tol * rho || wn == 0.0) {
      result.converged = true;
      break;
    }
    v = (1.0 / wn) * std::move(w);
  }
  result.norm = std::sqrt(std::max(rho, 0.0));
  if (!result.converged) result.norm *= 1.01;
  return result;
}

double operator_norm(const ArcConstraintSystem& sys, const IndexSet& I, double tol) {
  return operator_norm_estimate(sys, I, tol).norm;
}

bool is_basic_index_set(const ArcConstraintSystem& sys, const IndexSet& I, const IndexSet& J) {
  check_index_set(sys, I);
  check_index_set(sys, J);
  if (!I.is_subset_of(J)) throw InvalidArgument("basic index set test requires I ⊆ J");
  if (I == J) return true;

  if (sys.is_consensus()) {
    // b = 0: I is basic for J iff every arc of J joins two vertices already
    // connected through arcs of I.
    DisjointSets components(sys.agents());
    for (Index i : I) {
      const auto arc = *sys.consensus_arc(i);
      components.unite(arc.tail, arc.head);
    }
    for (Index j : J) {
      const auto arc = *sys.consensus_arc(j);
      if (!components.same(arc.tail, arc.head)) return false;
    }
    return true;
  }

  const Matrix AJ = sys.dense_rows(J);
  const Vector bJ = sys.dense_rhs(J);
  const double scale = std::max(1.0, AJ.cwiseAbs().maxCoeff());
  const double threshold = 1e-10 * scale * static_cast<double>(AJ.cols());

  if (I.empty()) return AJ.isZero(threshold) && bJ.isZero(threshold);

  const Matrix AI = sys.dense_rows(I);
  const Vector bI = sys.dense_rhs(I);

  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(AI);
  cod.setThreshold(threshold / scale);
  const Vector x0 = cod.solve(bI);
  // Infeasible A_I x = b_I implies anything.
  if ((AI * x0 - bI).norm() > 1e-9 * (1.0 + bI.norm())) return true;

  Matrix stacked(AI.rows() + AJ.rows(), AI.cols());
  stacked << AI, AJ;
  Eigen::ColPivHouseholderQR<Matrix> qr_i(AI);
  Eigen::ColPivHouseholderQR<Matrix> qr_stacked(stacked);
  qr_i.setThreshold(threshold / scale);
  qr_stacked.setThreshold(threshold / scale);
  if (qr_i.rank() != qr_stacked.rank()) return false;
  return (AJ * x0 - bJ).norm() <= 1e-9 * (1.0 + bJ.norm());
}

}  // namespace pdm
