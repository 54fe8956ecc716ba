#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pdm/block_linalg.hpp"
#include "pdm/topology.hpp"

using namespace pdm;

namespace {

BlockVector scalars(std::initializer_list<double> values) {
  Vector v(static_cast<Index>(values.size()));
  Index j = 0;
  for (double x : values) v[j++] = x;
  return BlockVector(v.size(), 1, v);
}

ArcConstraintSystem triangle(Index n = 1) {
  return ArcConstraintSystem::consensus(3, n, {{0, 1}, {0, 2}, {1, 2}});
}

DualVector random_dual(const IndexSet& active, Index n, std::mt19937_64& gen) {
  return DualVector(active, n, oracles::uniform_vector(gen, active.size() * n, -1.0, 1.0));
}

}  // namespace

TEST_CASE("BlockVector layout and shape checks") {
  BlockVector x(3, 2);
  CHECK(x.data().size() == 6);
  CHECK(x.norm() == 0.0);
  x.block(1) << 1.0, 2.0;
  CHECK(x.data()[2] == 1.0);
  CHECK(x.data()[3] == 2.0);

  CHECK_THROWS_AS(BlockVector(2, 0), DimensionError);
  CHECK_THROWS_AS(BlockVector(2, 2, Vector::Zero(3)), DimensionError);
  CHECK_THROWS_AS(x + BlockVector(2, 3), DimensionError);

  const auto y = BlockVector::from_blocks({Vector::Constant(2, 1.0), Vector::Constant(2, 2.0)});
  CHECK(y.blocks() == 2);
  CHECK(y.block(1)[0] == 2.0);
}

TEST_CASE("IndexSet keeps members sorted and unique") {
  const IndexSet I(5, {3, 0, 4});
  CHECK(I.members() == std::vector<Index>{0, 3, 4});
  CHECK(I.contains(3));
  CHECK_FALSE(I.contains(1));
  CHECK(*I.position(4) == 2);
  CHECK_FALSE(I.position(2).has_value());
  CHECK(IndexSet(5).empty());
  CHECK_THROWS_AS(IndexSet(5, {1, 1}), InvalidArgument);
  CHECK_THROWS_AS(IndexSet(5, {5}), InvalidArgument);
  CHECK_THROWS_AS(IndexSet(5, {-1}), InvalidArgument);

  const IndexSet J(5, {0, 1});
  CHECK(set_union(I, J).members() == std::vector<Index>{0, 1, 3, 4});
  CHECK(set_intersection(I, J).members() == std::vector<Index>{0});
  CHECK(set_difference(I, J).members() == std::vector<Index>{3, 4});
  CHECK(IndexSet(5, {0}).is_subset_of(J));
  CHECK_FALSE(I.is_subset_of(J));
}

TEST_CASE("apply_A on consensus arcs") {
  SUBCASE("single arc") {
    const auto sys = ArcConstraintSystem::consensus(2, 1, {{0, 1}});
    const auto r = apply_A(sys, IndexSet::full(1), scalars({3, 5}));
    CHECK(r.data()[0] == doctest::Approx(-2.0));
  }
  SUBCASE("empty active set gives zeros") {
    const auto r = apply_A(triangle(), IndexSet(3), scalars({1, 2, 4}));
    CHECK(r.norm() == 0.0);
    CHECK(r.blocks() == 3);
  }
  SUBCASE("triangle with two active arcs") {
    const auto r = apply_A(triangle(), IndexSet(3, {0, 2}), scalars({1, 2, 4}));
    CHECK(r.data()[0] == doctest::Approx(-1.0));
    CHECK(r.data()[1] == 0.0);
    CHECK(r.data()[2] == doctest::Approx(-2.0));
  }
  SUBCASE("dimension mismatch names the axis") {
    try {
      apply_A(triangle(), IndexSet::full(3), scalars({1, 2}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      CHECK(e.axis() == "m");
    }
    CHECK_THROWS_AS(apply_A(triangle(), IndexSet::full(4), scalars({1, 2, 3})), DimensionError);
  }
}

TEST_CASE("apply_A_transpose sums signed incidences") {
  SUBCASE("single arc") {
    const auto sys = ArcConstraintSystem::consensus(2, 1, {{0, 1}});
    const DualVector y(IndexSet::full(1), 1, Vector::Constant(1, 2.0));
    const auto r = apply_A_transpose(sys, IndexSet::full(1), y);
    CHECK(r.data()[0] == doctest::Approx(2.0));
    CHECK(r.data()[1] == doctest::Approx(-2.0));
  }
  SUBCASE("zero duals") {
    const DualVector y(IndexSet::full(3), 1, Vector::Zero(3));
    CHECK(apply_A_transpose(triangle(), IndexSet::full(3), y).norm() == 0.0);
  }
  SUBCASE("triangle with unit duals") {
    const DualVector y(IndexSet::full(3), 1, Vector::Ones(3));
    const auto r = apply_A_transpose(triangle(), IndexSet::full(3), y);
    CHECK(r.data()[0] == doctest::Approx(2.0));
    CHECK(r.data()[1] == doctest::Approx(0.0));
    CHECK(r.data()[2] == doctest::Approx(-2.0));
  }
  SUBCASE("blocks outside I are ignored") {
    const DualVector y(IndexSet::full(3), 1, Vector::Ones(3));
    const auto r = apply_A_transpose(triangle(), IndexSet(3, {0}), y);
    CHECK(r.data()[0] == doctest::Approx(1.0));
    CHECK(r.data()[1] == doctest::Approx(-1.0));
    CHECK(r.data()[2] == 0.0);
  }
}

TEST_CASE("apply_A_transpose is the adjoint of apply_A") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Index m = 2 + trial % 5;
    const Index n = 1 + trial % 3;
    const CommGraph g = CommGraph::random_gnp(m, 0.6, gen());
    if (g.arc_count() == 0) continue;
    const auto sys = g.constraints(n);
    const IndexSet I = oracles::random_subset(g.arc_count(), 0.6, gen);
    const BlockVector x(m, n, oracles::uniform_vector(gen, m * n, -3.0, 3.0));
    const DualVector y = random_dual(I, n, gen);
    const double lhs = apply_A(sys, I, x).data().dot(y.to_full().data());
    const double rhs = x.data().dot(apply_A_transpose(sys, I, y).data());
    CHECK(std::abs(lhs - rhs) <= 1e-12 * (1.0 + std::abs(lhs)));
    // Matches the explicit incidence matrix.
    const Matrix D = oracles::incidence(sys, I);
    CHECK((apply_A_transpose(sys, I, y).data() - D.transpose() * y.packed()).norm() <= 1e-12);
  }
}

TEST_CASE("dense rows carry explicit blocks") {
  Matrix row(1, 3);
  row << 1.0, 2.0, -1.0;
  BlockVector b(1, 1);
  b.data()[0] = 4.0;
  const ArcConstraintSystem sys(3, 1, {row}, b);
  CHECK_FALSE(sys.is_consensus());
  const auto r = constraint_residual(sys, IndexSet::full(1), scalars({1, 2, 1}));
  CHECK(r.data()[0] == doctest::Approx(0.0));
  CHECK_THROWS_AS(ArcConstraintSystem(3, 1, {Matrix(2, 3)}, b), DimensionError);
  CHECK_THROWS_AS(ArcConstraintSystem::consensus(3, 1, {{1, 1}}), InvalidArgument);
}

TEST_CASE("DualVector reads inactive blocks as zero") {
  const DualVector y(IndexSet(4, {1, 3}), 2, (Vector(4) << 1, 2, 3, 4).finished());
  CHECK(y.block(0).isZero());
  CHECK(y.block(3)[1] == 4.0);
  CHECK(y.to_full().data().size() == 8);
  CHECK_THROWS_AS(DualVector(IndexSet(4, {1}), 2, Vector::Zero(3)), DimensionError);
}

TEST_CASE("project_Y zeroes inactive blocks") {
  const DualVector y(IndexSet::full(2), 1, (Vector(2) << 2.0, 3.0).finished());
  SUBCASE("keep the first arc") {
    const auto p = project_Y(IndexSet(2, {0}), y);
    CHECK(p.block(0)[0] == 2.0);
    CHECK(p.block(1)[0] == 0.0);
    CHECK(p.active().size() == 1);
  }
  SUBCASE("empty set gives zero") {
    const auto p = project_Y(IndexSet(2), y);
    CHECK(p.norm() == 0.0);
    CHECK(p.active().empty());
  }
  SUBCASE("idempotent and nonexpansive") {
    std::mt19937_64 gen(3);
    for (int trial = 0; trial < 100; ++trial) {
      const Index l = 1 + trial % 7;
      const Index n = 1 + trial % 2;
      const IndexSet I = oracles::random_subset(l, 0.5, gen);
      const DualVector a = random_dual(oracles::random_subset(l, 0.7, gen), n, gen);
      const DualVector b = random_dual(oracles::random_subset(l, 0.7, gen), n, gen);
      const DualVector pa = project_Y(I, a);
      CHECK(project_Y(I, pa) == pa);
      CHECK(distance(pa, project_Y(I, b)) <= distance(a, b) + 1e-15);
      CHECK(pa.active().is_subset_of(I));
    }
  }
}

TEST_CASE("operator_norm against closed forms") {
  CHECK(operator_norm(ArcConstraintSystem::consensus(2, 1, {{0, 1}}), IndexSet::full(1)) ==
        doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));
  CHECK(operator_norm(triangle(), IndexSet::full(3)) ==
        doctest::Approx(std::sqrt(3.0)).epsilon(1e-10));
  // n > 1 replicates the n = 1 value.
  for (Index n = 2; n <= 4; ++n) {
    CHECK(operator_norm(triangle(n), IndexSet::full(3)) ==
          doctest::Approx(std::sqrt(3.0)).epsilon(1e-10));
  }
  CHECK_THROWS_AS(operator_norm(triangle(), IndexSet(3)), InvalidArgument);
  CHECK_THROWS_AS(operator_norm(triangle(), IndexSet::full(3), 0.0), InvalidArgument);
}

TEST_CASE("operator_norm matches dense SVD and the Gershgorin bound") {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 60; ++trial) {
    const Index m = 2 + trial % 7;
    const CommGraph g = CommGraph::random_gnp(m, 0.5, gen());
    const IndexSet I = oracles::random_subset(g.arc_count(), 0.6, gen);
    if (I.empty()) continue;
    const auto sys = g.constraints(1 + trial % 2);
    const auto est = operator_norm_estimate(sys, I);
    CHECK(est.converged);
    CHECK(std::abs(est.norm - oracles::dense_norm(sys, I)) <= 1e-8);
    CHECK(est.norm <= std::sqrt(2.0 * static_cast<double>(oracles::max_degree(g, I))) + 1e-12);
  }
}

TEST_CASE("operator_norm is deterministic and inflates on a capped run") {
  const auto sys = triangle();
  CHECK(operator_norm(sys, IndexSet::full(3)) == operator_norm(sys, IndexSet::full(3)));
  // A 1e-300 tolerance cannot be met, so the cap is hit.
  const auto est = operator_norm_estimate(sys, IndexSet::full(3), 1e-300);
  CHECK_FALSE(est.converged);
  CHECK(est.norm == doctest::Approx(1.01 * std::sqrt(3.0)).epsilon(1e-9));
}

TEST_CASE("is_basic_index_set examples") {
  const auto sys = triangle();
  const IndexSet L = IndexSet::full(3);
  CHECK(is_basic_index_set(sys, IndexSet(3, {0, 2}), L));
  CHECK_FALSE(is_basic_index_set(sys, IndexSet(3), L));
  CHECK(is_basic_index_set(sys, L, L));
  CHECK(is_basic_index_set(sys, IndexSet(3), IndexSet(3)));
  CHECK_FALSE(is_basic_index_set(sys, IndexSet(3, {0}), L));
  CHECK_THROWS_AS(is_basic_index_set(sys, IndexSet(3, {1}), IndexSet(3, {0})), InvalidArgument);
}

TEST_CASE("is_basic_index_set agrees with the rank oracle") {
  std::mt19937_64 gen(31);
  for (int inst = 0; inst < 15; ++inst) {
    const Index m = 2 + inst % 4;
    const CommGraph g = CommGraph::random_gnp(m, 0.7, gen());
    const auto sys = g.constraints(1 + inst % 2);
    const auto subsets = oracles::all_subsets(g.arc_count());
    for (const auto& J : subsets) {
      if (J.size() > 4) continue;
      for (const auto& I : subsets) {
        if (!I.is_subset_of(J)) continue;
        CHECK(is_basic_index_set(sys, I, J) == oracles::rank_basic(sys, I, J));
      }
    }
  }
}

TEST_CASE("is_basic_index_set on dense systems checks b consistency") {
  // Rows: x0 + x1 = 2, x0 - x1 = 0, 2 x0 = 2 (implied), 2 x0 = 3 (contradicts).
  auto row = [](double a, double b) { return Matrix((Matrix(1, 2) << a, b).finished()); };
  BlockVector b(4, 1, (Vector(4) << 2.0, 0.0, 2.0, 3.0).finished());
  const ArcConstraintSystem sys(2, 1, {row(1, 1), row(1, -1), row(2, 0), row(2, 0)}, b);
  CHECK(is_basic_index_set(sys, IndexSet(4, {0, 1}), IndexSet(4, {0, 1, 2})));
  CHECK_FALSE(is_basic_index_set(sys, IndexSet(4, {0, 1}), IndexSet(4, {0, 1, 3})));
  CHECK_FALSE(is_basic_index_set(sys, IndexSet(4, {0}), IndexSet(4, {0, 1})));
  // An inconsistent I implies everything.
  CHECK(is_basic_index_set(sys, IndexSet(4, {2, 3}), IndexSet(4, {0, 2, 3})));
}
