#include "stochlq/config.hpp"
#include "stochlq/riccati.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace stochlq;

namespace {

CoefficientModel scalar(double a, double b, double c, double d, double s) {
  return CoefficientModel::constant(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, b),
                                    {Matrix::Constant(1, 1, c)}, {Matrix::Constant(1, 1, d)},
                                    Matrix::Constant(1, 1, s), Vector::Zero(1));
}

InfiniteOptions fast(double step = 0.01) {
  InfiniteOptions o;
  o.tol = 1e-10;
  o.max_N = 64;
  o.step = step;
  return o;
}

}  // namespace

TEST(RiccatiInfinite, ScalarAlgebraicOracles) {
  const InfiniteRiccati a = solve_infinite(scalar(-1, 1, 0, 0, 1), fast());
  EXPECT_NEAR(a.solution.P.at(0, 0)(0, 0), std::sqrt(2.0) - 1.0, 1e-9);
  const InfiniteRiccati b = solve_infinite(scalar(-1, 1, 0, 1, 1), fast());
  EXPECT_NEAR(b.solution.P.at(0, 0)(0, 0), (-1.0 + std::sqrt(13.0)) / 6.0, 1e-9);
  // state noise: 2aP + c^2 P + s - P^2 = 0 with a=-1, c=0.5
  const InfiniteRiccati c = solve_infinite(scalar(-1, 1, 0.5, 0, 1), fast());
  EXPECT_NEAR(c.solution.P.at(0, 0)(0, 0), (-1.75 + std::sqrt(1.75 * 1.75 + 4.0)) / 2.0, 1e-9);
}

TEST(RiccatiInfinite, IteratesIncreaseMonotonically) {
  const InfiniteRiccati inf = solve_infinite(scalar(-1, 1, 0.3, 0.4, 1), fast());
  ASSERT_GE(inf.log.size(), 3u);
  for (const auto& rec : inf.log) {
    if (std::isfinite(rec.min_gap)) EXPECT_GE(rec.min_gap, -1e-8);
  }
}

TEST(RiccatiInfinite, UnstableUncontrolledIsRejected) {
  try {
    solve_infinite(scalar(1, 0, 0, 0, 1), fast());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NotStabilizable);
  }
}

TEST(RiccatiFinite, DeterministicOdeMatchesFrozenReference) {
  // scipy solve_ivp, rtol 1e-13: P(0) for P' = 2P - 1 + P^2, P(1) = 0
  const FiltrationLattice grid(10, 0.1, 1);
  const RiccatiSolution ode =
      solve_finite_deterministic(scalar(-1, 1, 0, 0, 1), grid, Matrix::Zero(1, 1));
  EXPECT_NEAR(ode.P.at(0, 0)(0, 0), 0.385818596186332, 1e-9);
  // control noise, P(1) = 1
  const RiccatiSolution noisy =
      solve_finite_deterministic(scalar(-1, 1, 0, 1, 1), grid, Matrix::Identity(1, 1));
  EXPECT_NEAR(noisy.P.at(0, 0)(0, 0), 0.477529533788322, 1e-9);
}

TEST(RiccatiFinite, ExactSchemeMatchesHandRecursion) {
  // Riccati difference equation of the Euler problem, unrolled by hand
  const FiltrationLattice grid(10, 0.1, 1);
  LatticeOptions lo;
  lo.compact = true;
  const RiccatiSolution sol =
      solve_finite_lattice(scalar(-1, 1, 0, 0, 1), grid, Matrix::Identity(1, 1), lo);
  EXPECT_NEAR(sol.P.at(0, 0)(0, 0), 0.468955600339995, 1e-13);
}

TEST(RiccatiFinite, ImplicitConvergesFirstOrder) {
  const CoefficientModel m = scalar(-1, 1, 0.3, 0.5, 1);
  const FiltrationLattice fine(10, 0.1, 1);
  const double ref =
      solve_finite_deterministic(m, fine, Matrix::Identity(1, 1)).P.at(0, 0)(0, 0);
  std::vector<double> err;
  for (int L : {20, 40, 80, 160}) {
    LatticeOptions lo;
    lo.scheme = Scheme::Implicit;
    lo.compact = true;
    const FiltrationLattice g(L, 1.0 / L, 1);
    err.push_back(std::abs(solve_finite_lattice(m, g, Matrix::Identity(1, 1), lo).P.at(0, 0)(0, 0) - ref));
  }
  for (std::size_t i = 1; i < err.size(); ++i) EXPECT_GT(std::log2(err[i - 1] / err[i]), 0.9);
}

TEST(RiccatiFinite, DeterministicOnFullTreeHasNoMartingalePart) {
  const FiltrationLattice grid(8, 0.125, 1);
  LatticeOptions lo;
  const RiccatiSolution sol =
      solve_finite_lattice(scalar(-0.5, 1, 0.3, 0.2, 2), grid, Matrix::Identity(1, 1), lo);
  ASSERT_FALSE(sol.is_compact());
  for (int l = 0; l <= 8; ++l) {
    for (std::size_t i = 0; i < grid.nodes(l); ++i) {
      EXPECT_EQ(sol.Q[0].at(l, i)(0, 0), 0.0);
      EXPECT_EQ(sol.P.at(l, i)(0, 0), sol.P.at(l, 0)(0, 0));
    }
  }
}

TEST(RiccatiFinite, FactorModelPositiveAndAdapted) {
  const ScenarioConfig cfg = load_config_text(R"({
    "dims": {"n": 1, "k": 1, "d": 1},
    "model": {"A": {"base": 0.2, "factor": {"amp": 0.5}}, "B": 1, "C": [0.3], "D": [0.2], "S": 1},
    "horizon": {"T": 1}, "lattice": {"depth": 8}
  })");
  const CoefficientModel m = validate(cfg);
  const RiccatiSolution sol = solve_finite_lattice(m, cfg.lattice_grid(), Matrix::Zero(1, 1));
  EXPECT_GE(sol.min_eigenvalue, 0.0);  // P_T = 0
  EXPECT_GT(sol.P.at(0, 0)(0, 0), 0.0);
  // a positive path raises A and with it P
  const FiltrationLattice& g = sol.lattice;
  EXPECT_GT(sol.P.at(4, g.nodes(4) - 1)(0, 0), sol.P.at(4, 0)(0, 0));
}
