#pragma once

#include "stochlq/dual.hpp"
#include "stochlq/riccati.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace stochlq {

/// u(t, node, x) = Λ x + ū_aff.
struct FeedbackLaw {
  FiltrationLattice lattice;
  FeedbackQuadratic quadratic;
  AdaptedField<Vector> affine;

  Vector control(int level, std::size_t node, const Vector& x) const {
    return quadratic.Lambda.at(level, node) * x + affine.at(level, node);
  }
};

FeedbackLaw assemble_feedback(const RiccatiSolution& riccati, const DualSolution& dual,
                              const CoefficientModel& model);

/// Value V(t, node, x) = xᵀP x + 2rᵀx + c from backward dynamic programming.
struct DpValue {
  FiltrationLattice lattice;
  AdaptedField<Matrix> P;
  AdaptedField<Vector> r;
  AdaptedField<double> c;
  AdaptedField<Matrix> gain;
  AdaptedField<Vector> affine;
};

/// Exact backward DP over the lattice children: minimizes
/// E[V⁺(X⁺)] + Δ(xᵀSx + |u|²) with X⁺ = x + Δ(Ax + Bu + f) + Σ(Cⁱx + Dⁱu)ξⁱ.
/// Deterministic coefficients give node-independent values stored per level.
DpValue bellman_dp_oracle(const CoefficientModel& model, const FiltrationLattice& lattice,
                          const Matrix& terminal, const Vector& terminal_r = {});

/// Control as a function of (level, node, state); open-loop controls ignore x.
using Control = std::function<Vector(int level, std::size_t node, const Vector& x)>;

/// Forward states and controls of a controlled lattice path family.
struct LatticePath {
  bool single = false;  ///< one node per level (noise-free, node-independent inputs)
  AdaptedField<Vector> X;
  AdaptedField<Vector> u;
};

LatticePath evolve(const CoefficientModel& model, const FiltrationLattice& lattice,
                   const Vector& x, const Control& control, bool single);

/// True when every input is node-independent and the dynamics carry no noise.
bool single_path_ok(const CoefficientModel& model, const RiccatiSolution& riccati);

struct HamiltonianReport {
  double max_residual = 0.0;          ///< max |y − (P X̄ + r)|
  double max_control_residual = 0.0;  ///< max |u − (−(Bᵀŷ + ΣDᵀẑ))| over levels < L
  LatticePath path;
  AdaptedField<Vector> y;
  std::vector<AdaptedField<Vector>> z;
};

/// Closed-loop X̄ under the law, then y_ℓ = ŷ + Δ(Aᵀŷ + ΣCᵀẑ + S X̄_ℓ) backward
/// from y_T = P_T X̄_T + r_T.
HamiltonianReport hamiltonian_residual(const CoefficientModel& model,
                                       const RiccatiSolution& riccati, const DualSolution& dual,
                                       const FeedbackLaw& law, const Vector& x);

/// Continuous-time check for noise-free deterministic models.
double hamiltonian_residual_ode(const CoefficientModel& model, double T, const Matrix& terminal,
                                const Vector& x, int intervals = 2000);

struct CostPrediction {
  double value = 0.0;  ///< optimal cost including the terminal weight
  /// Value with the terminal contribution E⟨P_T X̄_T, X̄_T⟩ removed.
  double value_without_terminal = 0.0;
  std::map<std::string, double> terms;
};

/// Closed-form optimal cost: ⟨P₀x,x⟩ + 2⟨r₀,x⟩ + coupling + correction, with
/// the terminal term −E⟨P_T X̄_T, X̄_T⟩ reported separately when `finite`.
CostPrediction predicted_cost(const CoefficientModel& model, const RiccatiSolution& riccati,
                              const DualSolution& dual, const FeedbackLaw& law, const Vector& x,
                              bool finite = true);

/// Cost of an arbitrary control by exact lattice expectation: left-endpoint
/// running cost plus E⟨P_T X_T, X_T⟩.
double lattice_cost(const CoefficientModel& model, const RiccatiSolution& riccati,
                    const LatticePath& path);

struct FundamentalRelation {
  double cost = 0.0;
  double predicted = 0.0;
  double penalty = 0.0;  ///< E∫|N^{1/2}(u − ΛX − ū_aff)|²
  double gap = 0.0;      ///< |cost − predicted − penalty|
};

FundamentalRelation fundamental_relation_residual(const CoefficientModel& model,
                                                  const RiccatiSolution& riccati,
                                                  const DualSolution& dual,
                                                  const FeedbackLaw& law, const Control& u,
                                                  const Vector& x);

struct SweepPoint {
  double epsilon = 0.0;
  double excess = 0.0;  ///< cost(ū + εv) − cost(ū)
  double ratio = 0.0;   ///< excess(2ε)/excess(ε)
};

/// Second-order optimality: perturbs the optimal closed loop by ε·v.
std::vector<SweepPoint> epsilon_sweep(const CoefficientModel& model,
                                      const RiccatiSolution& riccati, const DualSolution& dual,
                                      const FeedbackLaw& law, const Vector& x,
                                      const Control& direction,
                                      const std::vector<double>& epsilons);

}  // namespace stochlq
