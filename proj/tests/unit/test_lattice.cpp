#include "stochlq/lattice.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace stochlq;

TEST(Lattice, ChildIdsAppendLowBits) {
  const FiltrationLattice lat(4, 0.25, 2);
  EXPECT_EQ(lat.branching(), 4);
  EXPECT_EQ(lat.nodes(3), 64u);
  EXPECT_EQ(lat.child(5, 3), 23u);
  EXPECT_EQ(lat.parent(23), 5u);
  EXPECT_EQ(lat.total_nodes(), 1u + 4u + 16u + 64u + 256u);
}

TEST(Lattice, IncrementMomentsAreExact) {
  const FiltrationLattice lat(1, 0.04, 2);
  std::vector<double> xi0, xi1, sq0, cross;
  for (int c = 0; c < lat.branching(); ++c) {
    xi0.push_back(lat.increment(c, 0));
    xi1.push_back(lat.increment(c, 1));
    sq0.push_back(lat.increment(c, 0) * lat.increment(c, 0));
    cross.push_back(lat.increment(c, 0) * lat.increment(c, 1));
  }
  EXPECT_DOUBLE_EQ(condexp(xi0, 2), 0.0);
  EXPECT_DOUBLE_EQ(condexp(xi1, 2), 0.0);
  EXPECT_NEAR(condexp(sq0, 2), 0.04, 1e-16);
  EXPECT_DOUBLE_EQ(condexp(cross, 2), 0.0);
}

TEST(Lattice, MartingaleCoefficientRecoversLinearIntegrand) {
  // V = 3 + 2 xi0 - 5 xi1 has integrands (2, -5)
  const FiltrationLattice lat(1, 0.01, 2);
  std::vector<double> v;
  for (int c = 0; c < 4; ++c) v.push_back(3.0 + 2.0 * lat.increment(c, 0) - 5.0 * lat.increment(c, 1));
  EXPECT_NEAR(condexp(v, 2), 3.0, 1e-14);
  EXPECT_NEAR(martingale_coefficient(v, 2, 0, 0.01), 2.0, 1e-12);
  EXPECT_NEAR(martingale_coefficient(v, 2, 1, 0.01), -5.0, 1e-12);
}

TEST(Lattice, MissingChildIsReported) {
  const std::vector<double> three{1.0, 2.0, 3.0};
  try {
    condexp(three, 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::MissingChild);
  }
}

TEST(Lattice, FullFieldsStopAt62Bits) {
  const FiltrationLattice deep(2560, 0.01, 1);
  EXPECT_NO_THROW(AdaptedField<double>::compact(deep.depth(), 0.0));
  EXPECT_THROW(AdaptedField<double>::full(deep, 0.0), Error);
}

TEST(Lattice, StateTracksPathSum) {
  const FiltrationLattice lat(3, 0.25, 1);
  // node 0b101: +, -, + oldest first
  const NodeState s = lat.state(3, 5);
  EXPECT_NEAR(s.path_sum[0], 0.5, 1e-15);
  EXPECT_EQ(s.last_sign[0], 1);
  EXPECT_DOUBLE_EQ(s.t, 0.75);
}

TEST(Lattice, RootExpectationOfLeaves) {
  // E[W_T^2] = T on the tree
  const FiltrationLattice lat(6, 0.1, 1);
  std::vector<double> leaves;
  for (std::size_t i = 0; i < lat.nodes(6); ++i) {
    const double w = lat.state(6, i).path_sum[0];
    leaves.push_back(w * w);
  }
  EXPECT_NEAR(root_expectation(lat, leaves, 6), 0.6, 1e-14);
}
