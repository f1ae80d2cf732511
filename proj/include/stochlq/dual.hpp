#pragma once

#include "stochlq/lattice.hpp"
#include "stochlq/model.hpp"
#include "stochlq/riccati.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace stochlq {

/// Adapted pair (r, g) on the lattice of a Riccati solution, together with the
/// affine control and the constant of the quadratic value
/// V(t, x) = xᵀP x + 2rᵀx + c, c = coupling + correction.
struct DualSolution {
  enum class Horizon { Finite, InfiniteApprox };
  FiltrationLattice lattice;
  Scheme scheme = Scheme::Exact;
  Horizon horizon = Horizon::Finite;
  double N_used = 0.0;
  AdaptedField<Vector> r;
  std::vector<AdaptedField<Vector>> g;
  AdaptedField<Vector> affine;     ///< ū_aff per node
  AdaptedField<double> coupling;   ///< E_t of the 2⟨r,f⟩ integral over [t, T]
  AdaptedField<double> correction; ///< E_t of the −wᵀN⁻¹w integral over [t, T]
  double max_abs_r = 0.0;

  bool is_compact() const { return r.is_compact(); }
  double constant(int level, std::size_t node) const {
    return coupling.at(level, node) + correction.at(level, node);
  }
};

/// Backward induction of the costate equation with the Riccati solution's
/// scheme; terminal r(T) = `terminal` (zero when empty).
DualSolution solve_dual_finite(const CoefficientModel& model, const FeedbackQuadratic& feedback,
                               const RiccatiSolution& riccati, const Vector& terminal = {});

struct FundamentalDual {
  DualSolution dual;
  AdaptedField<Matrix> Phi;
  AdaptedField<Matrix> Psi;
  double max_product_defect = 0.0;  ///< max ‖ΦΨ − I‖_F
  double max_condition = 0.0;       ///< max cond(Φ)
};

/// r_t = Φ_t [E_t θ − ∫₀ᵗ Ψ P f ds] with θ = ∫₀ᵀ Ψ P f ds, where Ψ follows
/// dΨ = Ψ(Hᵀdt + ΣKᵀdW) and Φ follows dΦ = (−Hᵀ + ΣKᵀKᵀ)Φ dt − ΣKᵀΦ dW,
/// both propagated forward on the full lattice. Terminal r(T) = 0.
FundamentalDual solve_dual_fundamental(const CoefficientModel& model,
                                       const FeedbackQuadratic& feedback,
                                       const RiccatiSolution& riccati);

struct DualRecord {
  double N = 0.0;
  double max_abs_r = 0.0;
  double sup_diff = 0.0;
};

struct InfiniteDualOptions {
  double tol = 1e-6;
  std::vector<double> schedule;  ///< empty: the Riccati schedule
  /// Closed-loop decay rate from simulate::closed_loop_decay; required > 0.
  std::optional<double> decay_certificate;
};

struct InfiniteDual {
  DualSolution solution;  ///< r̄ on [0, window]
  RiccatiSolution riccati;
  FeedbackQuadratic feedback;
  double N_used = 0.0;
  double window = 0.0;
  std::vector<DualRecord> log;
  /// max|r^N| across the schedule never grew by more than 1e-8.
  bool bound_nonincreasing = true;
  /// Largest max|r^N| seen: the empirical constant of the uniform bound.
  double uniform_bound = 0.0;
  /// E|r̄_t|² at the levels of the solved window.
  std::vector<double> second_moment;
  bool second_moment_decreasing = true;
};

InfiniteDual solve_dual_infinite(const CoefficientModel& model, const InfiniteRiccati& inf,
                                 const InfiniteOptions& riccati_options,
                                 const InfiniteDualOptions& options);

/// Adapted n-vector field on a lattice (full or compact), e.g. a forcing η.
using VectorField = AdaptedField<Vector>;

struct DualityTerms {
  double lhs = 0.0;           ///< E⟨ξ, X_T⟩ − ⟨r_t, x⟩
  double forcing_term = 0.0;  ///< −E∫⟨P f, X⟩
  double eta_term = 0.0;      ///< E∫⟨η, r⟩
  double residual = 0.0;      ///< |lhs − forcing_term − eta_term|
};

/// Duality relation from (level, node) with X^{t,x,η}: X⁺ = X + Δ(HX + η) + ΣKX ξ,
/// evaluated by exact lattice expectation with the product-rule quadrature
///   Σ Δ E⟨P_{ℓ+1} f_ℓ, X_{ℓ+1} − Δη_ℓ⟩ and Σ Δ E⟨η_ℓ, r_{ℓ+1}⟩.
DualityTerms duality_residual(const DualSolution& dual, const CoefficientModel& model,
                              const FeedbackQuadratic& feedback, const RiccatiSolution& riccati,
                              const VectorField& eta, const Vector& x, int level = 0,
                              std::size_t node = 0, const Vector& terminal = {});

/// Continuous-time duality relation for noise-free deterministic models: the
/// same identity with X, r, P from RK4 integration (η given as a function of t).
DualityTerms duality_residual_ode(const CoefficientModel& model, double T, const Vector& x,
                                  const std::function<Vector(double)>& eta, int intervals = 2000);

}  // namespace stochlq
