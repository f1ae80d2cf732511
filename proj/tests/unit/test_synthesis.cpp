#include "stochlq/config.hpp"
#include "stochlq/synthesis.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace stochlq;

namespace {

const char* kNoisy = R"({
  "dims": {"n": 1, "k": 1, "d": 1},
  "model": {"A": -1, "B": 1, "C": [0.3], "D": [0.5], "S": 1, "f": [1]},
  "x0": [1], "horizon": {"T": 1, "terminal": [[1]]}, "lattice": {"depth": 10}
})";

const char* kFactor2d = R"({
  "dims": {"n": 2, "k": 1, "d": 2},
  "model": {
    "A": {"base": [[-0.5, 0.3], [0, -0.2]], "factor": {"amp": [[0.2, 0], [0, 0.1]], "component": 1}},
    "B": [[0], [1]],
    "C": [[[0.1, 0], [0, 0.2]], [[0, 0.1], [0, 0]]],
    "D": [[[0.2], [0]], {"base": [[0], [0.1]], "factor": {"amp": [[0], [0.1]], "source": "last_sign", "map": "clip"}}],
    "S": [[1, 0], [0, 2]],
    "f": {"base": [0.5, -0.3], "factor": {"amp": [0.2, 0.1]}}
  },
  "x0": [1, -1], "horizon": {"T": 1, "terminal": [[1, 0], [0, 0.5]]}, "lattice": {"depth": 5}
})";

struct Stack {
  CoefficientModel model;
  RiccatiSolution riccati;
  DualSolution dual;
  FeedbackLaw law;
  Vector x;
};

Stack build(const char* text, Scheme scheme = Scheme::Exact) {
  const ScenarioConfig cfg = load_config_text(text);
  Stack s;
  s.model = validate(cfg);
  LatticeOptions lo;
  lo.scheme = scheme;
  s.riccati = solve_finite_lattice(s.model, cfg.lattice_grid(), cfg.horizon.terminal, lo);
  s.dual = solve_dual_finite(s.model, feedback_quadratic(s.riccati, s.model), s.riccati);
  s.law = assemble_feedback(s.riccati, s.dual, s.model);
  s.x = cfg.x0;
  return s;
}

}  // namespace

TEST(Synthesis, DpOracleFrozenScalarValue) {
  // independent two-child backward induction: P0, r0, c0 at depth 10
  const Stack s = build(kNoisy);
  const DpValue dp = bellman_dp_oracle(s.model, s.riccati.lattice, s.riccati.terminal);
  EXPECT_NEAR(dp.P.at(0, 0)(0, 0), 0.470034339037674, 1e-13);
  EXPECT_NEAR(dp.r.at(0, 0)[0], 0.263705621410972, 1e-13);
  EXPECT_NEAR(dp.c.at(0, 0), 0.374292122096014, 1e-13);
  const CostPrediction pred = predicted_cost(s.model, s.riccati, s.dual, s.law, s.x);
  EXPECT_NEAR(pred.value, 1.371737703955632, 1e-12);
}

TEST(Synthesis, DpMatchesExactSchemeNodeByNode) {
  const Stack s = build(kFactor2d);
  const DpValue dp = bellman_dp_oracle(s.model, s.riccati.lattice, s.riccati.terminal);
  const FiltrationLattice& g = s.riccati.lattice;
  for (int l = 0; l <= g.depth(); ++l) {
    for (std::size_t i = 0; i < g.nodes(l); ++i) {
      EXPECT_LT((dp.P.at(l, i) - s.riccati.P.at(l, i)).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LT((dp.r.at(l, i) - s.dual.r.at(l, i)).cwiseAbs().maxCoeff(), 1e-10);
      EXPECT_LT(std::abs(dp.c.at(l, i) - s.dual.constant(l, i)), 1e-10);
      if (l < g.depth()) {
        EXPECT_LT((dp.gain.at(l, i) - s.law.quadratic.Lambda.at(l, i)).cwiseAbs().maxCoeff(), 1e-10);
      }
    }
  }
}

TEST(Synthesis, PredictedCostIsTheLatticeCostOfTheLaw) {
  const Stack s = build(kFactor2d);
  const LatticePath path = evolve(
      s.model, s.riccati.lattice, s.x,
      [&](int l, std::size_t i, const Vector& X) { return s.law.control(l, i, X); }, false);
  const double cost = lattice_cost(s.model, s.riccati, path);
  const CostPrediction pred = predicted_cost(s.model, s.riccati, s.dual, s.law, s.x);
  EXPECT_NEAR(cost, pred.value, 1e-11);
}

TEST(Synthesis, HamiltonianSystemExactUnderExactScheme) {
  const Stack s = build(kFactor2d);
  const HamiltonianReport h = hamiltonian_residual(s.model, s.riccati, s.dual, s.law, s.x);
  EXPECT_LT(h.max_residual, 1e-12);
  EXPECT_LT(h.max_control_residual, 1e-12);
}

TEST(Synthesis, HamiltonianOdeCheck) {
  CoefficientModel m = CoefficientModel::constant(
      Matrix::Constant(1, 1, -1), Matrix::Constant(1, 1, 1), {Matrix::Zero(1, 1)},
      {Matrix::Zero(1, 1)}, Matrix::Constant(1, 1, 1), Vector::Ones(1));
  EXPECT_LT(hamiltonian_residual_ode(m, 1.0, Matrix::Identity(1, 1), Vector::Ones(1)), 1e-8);
}

TEST(Synthesis, FundamentalRelationGapIsFirstOrder) {
  std::vector<double> gaps;
  for (int L : {4, 8, 16}) {
    ScenarioConfig cfg = load_config_text(kNoisy);
    cfg.lattice.depth = L;
    Stack s;
    s.model = validate(cfg);
    s.riccati = solve_finite_lattice(s.model, cfg.lattice_grid(), cfg.horizon.terminal);
    s.dual = solve_dual_finite(s.model, feedback_quadratic(s.riccati, s.model), s.riccati);
    s.law = assemble_feedback(s.riccati, s.dual, s.model);
    const Control zero = [](int, std::size_t, const Vector&) { return Vector(Vector::Zero(1)); };
    const FundamentalRelation fr =
        fundamental_relation_residual(s.model, s.riccati, s.dual, s.law, zero, cfg.x0);
    EXPECT_GT(fr.penalty, 0.0);
    gaps.push_back(fr.gap);
  }
  EXPECT_GT(std::log2(gaps[0] / gaps[1]), 0.8);
  EXPECT_GT(std::log2(gaps[1] / gaps[2]), 0.8);
}

TEST(Synthesis, EpsilonSweepIsQuadratic) {
  const Stack s = build(kFactor2d);
  const Control v = [](int l, std::size_t i, const Vector&) {
    return Vector(Vector::Constant(1, std::cos(0.3 * l + 0.01 * static_cast<double>(i))));
  };
  const auto sweep = epsilon_sweep(s.model, s.riccati, s.dual, s.law, s.x, v, {0.05, 0.1});
  ASSERT_EQ(sweep.size(), 2u);
  EXPECT_GT(sweep[0].excess, 0.0);
  EXPECT_NEAR(sweep[1].ratio, 4.0, 1e-6);
}

TEST(Synthesis, ImplicitSweepShowsFirstOrderTerm) {
  // the implicit law is only O(step)-optimal for the lattice problem
  const Stack s = build(kNoisy, Scheme::Implicit);
  const Control one = [](int, std::size_t, const Vector&) { return Vector(Vector::Ones(1)); };
  const auto sweep = epsilon_sweep(s.model, s.riccati, s.dual, s.law, s.x, one, {0.05, 0.1});
  EXPECT_GT(std::abs(sweep[1].ratio - 4.0), 0.08);
}

TEST(Synthesis, GridMismatchIsReported) {
  const Stack a = build(kNoisy);
  ScenarioConfig cfg = load_config_text(kNoisy);
  cfg.lattice.depth = 5;
  const CoefficientModel m = validate(cfg);
  const RiccatiSolution other = solve_finite_lattice(m, cfg.lattice_grid(), cfg.horizon.terminal);
  try {
    assemble_feedback(other, a.dual, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::GridMismatch);
  }
}
