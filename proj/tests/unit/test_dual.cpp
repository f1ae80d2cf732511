#include "stochlq/config.hpp"
#include "stochlq/dual.hpp"
#include "stochlq/riccati.hpp"
#include "stochlq/simulate.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace stochlq;

namespace {

const char* kFactor = R"({
  "dims": {"n": 1, "k": 1, "d": 1},
  "model": {
    "A": {"base": -0.5, "factor": {"amp": 0.4}},
    "B": 1, "C": [0.2], "D": [0.3], "S": 1,
    "f": {"base": [0.5], "factor": {"amp": [0.3], "scale": 2}}
  },
  "x0": [1], "horizon": {"T": 1, "terminal": [[0.5]]}, "lattice": {"depth": 8}
})";

}  // namespace

TEST(DualFinite, ScalarClosedForm) {
  // dr/dt = -(H r + P f) with P, H constant at the stationary point gives
  // r(t) = (P f / -H)(1 - e^{H (T - t)}) when P_T = P-bar
  const double Pbar = std::sqrt(2.0) - 1.0;
  const double H = -1.0 - Pbar;
  CoefficientModel m = CoefficientModel::constant(
      Matrix::Constant(1, 1, -1), Matrix::Constant(1, 1, 1), {Matrix::Zero(1, 1)},
      {Matrix::Zero(1, 1)}, Matrix::Constant(1, 1, 1), Vector::Ones(1));
  const FiltrationLattice grid(2000, 0.001, 1);
  const RiccatiSolution ric =
      solve_finite_deterministic(m, grid, Matrix::Constant(1, 1, Pbar));
  const DualSolution dual = solve_dual_finite(m, feedback_quadratic(ric, m), ric);
  const double oracle = Pbar / -H * (1.0 - std::exp(H * 2.0));
  EXPECT_NEAR(dual.r.at(0, 0)[0], oracle, 1e-5);
}

TEST(DualFinite, DualityRelationHoldsOnFactorModel) {
  const ScenarioConfig cfg = load_config_text(kFactor);
  const CoefficientModel m = validate(cfg);
  const RiccatiSolution ric = solve_finite_lattice(m, cfg.lattice_grid(), cfg.horizon.terminal);
  const FeedbackQuadratic fb = feedback_quadratic(ric, m);
  const DualSolution dual = solve_dual_finite(m, fb, ric);
  VectorField eta = AdaptedField<Vector>::full(ric.lattice, Vector::Ones(1));
  for (int l = 0; l <= 8; ++l) {
    for (std::size_t i = 0; i < ric.lattice.nodes(l); ++i) {
      eta.at(l, i)[0] = std::sin(1.0 + l + 0.1 * static_cast<double>(i));
    }
  }
  const DualityTerms t = duality_residual(dual, m, fb, ric, eta, cfg.x0);
  EXPECT_LT(t.residual, 1e-12);
  // from an interior node as well
  const DualityTerms mid = duality_residual(dual, m, fb, ric, eta, cfg.x0, 3, 5);
  EXPECT_LT(mid.residual, 1e-12);
}

TEST(DualFinite, FundamentalSolutionConvergesToBackwardInduction) {
  // Euler steps of Phi and Psi only invert each other up to O(step^{3/2}) per
  // step, so both the product defect and the gap in r shrink with the step
  std::vector<double> defect, gap;
  for (int L : {3, 6, 12}) {
    ScenarioConfig cfg = load_config_text(kFactor);
    cfg.horizon.terminal = Matrix::Zero(1, 1);
    cfg.lattice.depth = L;
    const CoefficientModel m = validate(cfg);
    const RiccatiSolution ric = solve_finite_lattice(m, cfg.lattice_grid(), cfg.horizon.terminal);
    const FeedbackQuadratic fb = feedback_quadratic(ric, m);
    const DualSolution direct = solve_dual_finite(m, fb, ric);
    const FundamentalDual fund = solve_dual_fundamental(m, fb, ric);
    double g = 0.0;
    for (int l = 0; l <= L; ++l) {
      for (std::size_t i = 0; i < ric.lattice.nodes(l); ++i) {
        g = std::max(g, std::abs(direct.r.at(l, i)[0] - fund.dual.r.at(l, i)[0]));
      }
    }
    defect.push_back(fund.max_product_defect);
    gap.push_back(g);
  }
  for (std::size_t i = 1; i < gap.size(); ++i) {
    EXPECT_GT(gap[i - 1] / gap[i], 1.8);
    EXPECT_GT(defect[i - 1] / defect[i], 1.3);
  }
}

TEST(DualInfinite, StationaryCostateForConstantForcing) {
  // f decays slowly; near t = 0 r-bar solves H r + P f = 0 up to the decay
  const ScenarioConfig cfg = load_config_text(R"({
    "dims": {"n": 1, "k": 1, "d": 1},
    "model": {"A": -1, "B": 1, "C": [0], "D": [0], "S": 1,
              "f": {"time": {"amp": [1], "shape": "exp", "rate": 1}, "integrability": "decaying", "rate": 1}},
    "x0": [1],
    "horizon": {"type": "infinite", "tol": 1e-10, "max_N": 64},
    "lattice": {"step": 0.01}
  })");
  const CoefficientModel m = validate(cfg);
  InfiniteOptions io;
  io.tol = 1e-10;
  io.max_N = 64;
  io.step = 0.01;
  const InfiniteRiccati inf = solve_infinite(m, io);
  InfiniteDualOptions dopt;
  dopt.tol = 1e-10;
  dopt.decay_certificate = 2.0;
  const InfiniteDual dual = solve_dual_infinite(m, inf, io, dopt);
  // r(t) = P e^{-t} / (sqrt2 + 1) solves r' = sqrt2 r - P e^{-t}
  const double P = std::sqrt(2.0) - 1.0;
  EXPECT_NEAR(dual.solution.r.at(0, 0)[0], P / (std::sqrt(2.0) + 1.0), 1e-3);
  EXPECT_TRUE(dual.second_moment_decreasing);
}

TEST(DualInfinite, NeedsDecayCertificate) {
  CoefficientModel m = CoefficientModel::constant(
      Matrix::Constant(1, 1, -1), Matrix::Constant(1, 1, 1), {Matrix::Zero(1, 1)},
      {Matrix::Zero(1, 1)}, Matrix::Constant(1, 1, 1), Vector::Zero(1));
  InfiniteOptions io;
  io.max_N = 64;
  const InfiniteRiccati inf = solve_infinite(m, io);
  try {
    solve_dual_infinite(m, inf, io, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnstableClosedLoop);
  }
}
