#pragma once

#include "stochlq/config.hpp"
#include "stochlq/dual.hpp"
#include "stochlq/riccati.hpp"
#include "stochlq/simulate.hpp"

#include <string>
#include <vector>

namespace stochlq {

/// A − αI and e^(−αt)f; B, C, D, S unchanged. The forcing becomes decaying.
CoefficientModel discount_transform(const CoefficientModel& model, double alpha);

struct ScalingCheck {
  double direct = 0.0;       ///< E Σ Δ e^(−2αt_j)[⟨SX,X⟩ + |u|²]
  double transformed = 0.0;  ///< E Σ Δ [⟨SX^α,X^α⟩ + |u^α|²] under the transformed dynamics
  double residual = 0.0;
};

/// Discounted cost of u computed directly and through the transformed pair
/// (X^α, u^α = e^(−αt)u) driven by the same increments.
ScalingCheck scaling_identity_check(const CoefficientModel& model, const Policy& policy,
                                    const Vector& x, double alpha, const SimGrid& grid,
                                    const McSpec& mc);

struct ErgodicRow {
  double alpha = 0.0;
  double horizon = 0.0;             ///< truncation of the α-problem
  std::vector<double> J;            ///< J̄^α per initial state
  std::vector<double> alpha_J;
  std::vector<double> quadratic;    ///< α⟨P^α₀x,x⟩
  std::vector<double> linear;       ///< 2α⟨r^α₀,x⟩
  double term1 = 0.0;               ///< 2αE∫⟨r^α,f^α⟩
  double term2 = 0.0;               ///< αE∫ wᵀN⁻¹w, w = Bᵀr^α + ΣDᵀg^α
  double P_gap = 0.0;               ///< sup over the window of ‖P^α − P̄‖
  double r_gap = 0.0;               ///< sup over the window of ‖r^α − r̄‖
};

struct ErgodicOptions {
  InfiniteOptions riccati;
  double tol = 1e-6;
  double window = 1.0;
  /// Simulation settings for decay certificates of path-dependent models.
  McSpec mc;
};

struct ErgodicReport {
  std::vector<Vector> xs;
  std::vector<ErgodicRow> rows;  ///< ordered as the α grid
  double window = 0.0;
  bool P_gap_decreasing = true;
  bool r_gap_decreasing = true;
  /// α(quadratic + linear) shrinks in magnitude along the grid for every x.
  bool x_terms_vanishing = true;
  std::vector<std::string> notes;
};

ErgodicReport solve_discounted_family(const CoefficientModel& model,
                                      const std::vector<double>& alphas,
                                      const std::vector<Vector>& xs,
                                      const ErgodicOptions& options);

struct ErgodicLimit {
  double limit = 0.0;      ///< extrapolated term₁ − term₂ at α = 0
  double last_raw = 0.0;   ///< term₁ − term₂ at the smallest α
  double error_bar = 0.0;
  int degree = 0;
  std::vector<double> x_limits;  ///< extrapolated αJ̄^α(x) per initial state
  double x_gap = 0.0;
  bool x_independent = true;
};

/// Polynomial extrapolation (degree ≤ 2) in α to α = 0; needs ≥ 3 rows.
ErgodicLimit ergodic_limit(const ErgodicReport& report);

/// Value at α = 0 of the least-squares polynomial of the given degree.
double extrapolate_to_zero(const std::vector<double>& alphas, const std::vector<double>& values,
                           int degree);

struct AverageCost {
  double T = 0.0;
  double value = 0.0;    ///< optimal cost over [0, T] from x
  double average = 0.0;  ///< value / T
};

/// Long-horizon averaged optimal cost from the Bellman DP oracle (zero
/// terminal weight); deterministic coefficients only.
AverageCost average_cost_oracle(const CoefficientModel& model, const Vector& x, double T,
                                double step);

}  // namespace stochlq
