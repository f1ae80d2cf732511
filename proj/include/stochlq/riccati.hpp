#pragma once

#include "stochlq/lattice.hpp"
#include "stochlq/model.hpp"
#include "stochlq/ode.hpp"
#include "stochlq/scheme.hpp"

#include <cstdint>
#include <vector>

namespace stochlq {

/// Adapted pair (P, Q) on a lattice. Deterministic solutions are stored
/// compactly with Q ≡ 0. Q at level ℓ is the martingale coefficient of the
/// level-(ℓ+1) values and is zero at the last level.
struct RiccatiSolution {
  FiltrationLattice lattice;
  Scheme scheme = Scheme::Exact;
  AdaptedField<Matrix> P;
  std::vector<AdaptedField<Matrix>> Q;
  /// Feedback gain Λ per node, consistent with `scheme`.
  AdaptedField<Matrix> gain;
  Matrix terminal;
  double min_eigenvalue = 0.0;
  std::size_t clipped = 0;

  int depth() const { return lattice.depth(); }
  double step() const { return lattice.step(); }
  bool is_compact() const { return P.is_compact(); }
};

struct FeedbackQuadratic {
  FiltrationLattice lattice;
  AdaptedField<Matrix> Lambda;
  AdaptedField<Matrix> H;
  std::vector<AdaptedField<Matrix>> K;
};

struct LatticeOptions {
  Scheme scheme = Scheme::Exact;
  /// One value per level; only valid for deterministic coefficients.
  bool compact = false;
  double fixed_point_tol = 1e-12;
  int max_iterations = 1000;
};

/// Coefficients at a lattice node (node-independent ones read at level time).
Coefficients coefficients_at(const CoefficientModel& model, const FiltrationLattice& lattice,
                             int level, std::size_t node, bool compact = false);

/// Backward matrix Riccati ODE dP/dt = −G(t, P, 0), P(T) = terminal, sampled
/// at the lattice levels (T = depth·step).
RiccatiSolution solve_finite_deterministic(const CoefficientModel& model,
                                           const FiltrationLattice& grid, const Matrix& terminal,
                                           const OdeOptions& options = {});

/// Backward induction on the lattice.
RiccatiSolution solve_finite_lattice(const CoefficientModel& model,
                                     const FiltrationLattice& lattice, const Matrix& terminal,
                                     const LatticeOptions& options = {});

/// Continuous-time value of the deterministic problem with forcing,
/// V(t,x) = xᵀP x + 2rᵀx + c, integrated jointly backward:
///   dP/dt = −G,  dr/dt = −(Hᵀr + P f),  c = coupling + correction with
///   coupling(t) = ∫_t^T 2⟨r,f⟩, correction(t) = −∫_t^T wᵀN⁻¹w, w = Bᵀr.
struct ValueOde {
  std::vector<double> times;
  std::vector<Matrix> P;
  std::vector<Vector> r;
  std::vector<double> coupling;
  std::vector<double> correction;
};

/// `times` ascending, all ≤ horizon; the terminal data sit at `horizon`.
ValueOde solve_value_ode(const CoefficientModel& model, const std::vector<double>& times,
                         double horizon, const Matrix& terminal, const Vector& terminal_r,
                         const OdeOptions& options = {});

/// Dense version of the same backward solve on a uniform grid of `intervals`
/// steps over [0, horizon]; the state packs (vec P, r, coupling, correction).
HermiteTrajectory value_trajectory(const CoefficientModel& model, double horizon,
                                   const Matrix& terminal, const Vector& terminal_r,
                                   int intervals, const OdeOptions& options = {});

/// Compact solution built from ODE samples at the lattice levels.
RiccatiSolution compact_solution(const CoefficientModel& model, const FiltrationLattice& grid,
                                 const std::vector<Matrix>& P, const Matrix& terminal);

/// Restriction of a solution to levels 0..levels.
RiccatiSolution truncate(const RiccatiSolution& solution, int levels);

FeedbackQuadratic feedback_quadratic(const RiccatiSolution& riccati,
                                     const CoefficientModel& model);

struct MonotonicityRecord {
  double N = 0.0;
  double sup_diff = 0.0;  ///< against the previous N on the common window
  double min_gap = 0.0;   ///< min over earlier N and the window of λ_min(P^N − P^N_prev)
};

struct InfiniteOptions {
  double tol = 1e-6;
  std::vector<double> schedule;  ///< empty: N0, 2N0, 4N0, ... ≤ max_N
  double N0 = 1.0;
  double max_N = 256.0;
  bool override_stabilizability = false;
  double step = 0.1;
  Scheme scheme = Scheme::Exact;
  std::uint64_t memory_budget = std::uint64_t{1} << 22;
  /// Route through the lattice even for deterministic coefficients.
  bool force_lattice = false;
};

struct InfiniteRiccati {
  RiccatiSolution solution;  ///< P̄ on [0, window]
  double N_used = 0.0;
  double window = 0.0;
  double margin = 0.0;
  bool on_lattice = false;
  std::vector<MonotonicityRecord> log;
};

std::vector<double> horizon_schedule(const InfiniteOptions& options);

/// Minimal solution as the monotone limit of zero-terminal horizon-N problems.
InfiniteRiccati solve_infinite(const CoefficientModel& model, const InfiniteOptions& options);

/// P̄ on [0, window]: the horizon-(window + N_used) solution restricted to the
/// window. On the lattice the horizon is capped by the memory budget.
RiccatiSolution minimal_solution_on(const CoefficientModel& model, const InfiniteRiccati& inf,
                                    const InfiniteOptions& options, double window);

}  // namespace stochlq
