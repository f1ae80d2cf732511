#pragma once

#include "stochlq/config.hpp"
#include "stochlq/riccati.hpp"
#include "stochlq/synthesis.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace stochlq {

/// Uniform time grid t_j = (start + j)·step, j = 0..steps.
struct SimGrid {
  int steps = 100;
  double step = 0.01;
  int start = 0;

  double time(int j) const { return (start + j) * step; }
};

/// What a policy sees at step j of one path.
struct PathContext {
  int step = 0;
  NodeState state;
  /// Sign history packed as a lattice node id (d·step ≤ 62 bits); the
  /// lattice node of this path under the Bernoulli increments.
  std::size_t node = 0;
};

using Policy = std::function<Vector(const PathContext& ctx, const Vector& x)>;

Policy zero_policy(int k);
/// Adapted open-loop control on a lattice, read at the path's node.
Policy open_loop_policy(const FiltrationLattice& lattice, AdaptedField<Vector> u);
/// Λx + ū_aff read at the path's node. Compact laws are held at their last
/// level beyond the lattice depth; full laws require steps ≤ depth.
Policy feedback_policy(const FeedbackLaw& law);

struct PathBatch {
  SimGrid grid;
  std::size_t paths = 0;
  std::uint64_t seed = 0;
  McSpec::Mode mode = McSpec::Mode::Normal;
  std::vector<Matrix> X;   ///< per path n × (steps+1)
  std::vector<Matrix> u;   ///< per path k × steps
  std::vector<Matrix> dW;  ///< per path d × steps
};

/// Euler–Maruyama X⁺ = X + Δ(AX + Bu + f) + Σ(CⁱX + Dⁱu)√Δ ζⁱ with ζ standard
/// normal or ±1. Path p draws from its own engine seeded by (seed, p), so the
/// batch does not depend on the worker count.
PathBatch simulate(const CoefficientModel& model, const Policy& policy, const Vector& x,
                   const SimGrid& grid, const McSpec& mc);

struct CostOptions {
  bool finite = true;          ///< add E⟨P_T X_T, X_T⟩
  Matrix terminal;             ///< empty: identity
  std::optional<double> alpha; ///< discount e^(−2αt) at left endpoints
  std::optional<SimGrid> expected_grid;
};

struct CostReport {
  double estimate = 0.0;
  double std_error = 0.0;
  std::string horizon;  ///< "finite" or "infinite"
  std::optional<double> alpha;
  std::optional<CostPrediction> predicted;
  std::optional<double> z_score;
  std::vector<double> per_path;
  std::vector<double> running_rate;  ///< E[⟨SX,X⟩ + |u|²] per step, undiscounted
};

CostReport evaluate_cost(const PathBatch& batch, const CoefficientModel& model,
                         const CostOptions& options = {});

/// Attaches a prediction and its z-score.
void attach_prediction(CostReport& report, const CostPrediction& prediction);

struct DecayEstimate {
  double a_hat = 0.0;
  double C_hat = 0.0;
  double r2 = 0.0;
  double window = 0.0;
  bool certified = false;  ///< a_hat > 0 with R² ≥ 0.9
  std::vector<double> times;
  std::vector<double> second_moment;
};

/// Least-squares fit of log m_j = log C − a t_j; points with m_j ≤ 1e-300 are
/// dropped.
DecayEstimate fit_decay(const std::vector<double>& times, const std::vector<double>& moments);

/// Homogeneous closed-loop coefficients (H, K) at a path context.
using LinearDynamics = std::function<void(const PathContext& ctx, Matrix& H, MatrixFamily& K)>;

/// H = A + BΛ, K = C + DΛ from a feedback quadratic (same reading rules as
/// feedback_policy).
LinearDynamics feedback_dynamics(const FeedbackQuadratic& feedback);
/// u = 0: H = A, K = C.
LinearDynamics uncontrolled_dynamics(const CoefficientModel& model);

/// Simulates dX = HX dt + ΣKⁱX dWⁱ (d Brownian components) and fits the
/// decay of E|X|².
DecayEstimate closed_loop_decay(const LinearDynamics& dynamics, const Vector& x,
                                const SimGrid& grid, const McSpec& mc, int d);

/// Exact second moments M⁺ = (I+ΔH)M(I+ΔH)ᵀ + ΔΣKMKᵀ for deterministic
/// compact feedback, then the same fit.
DecayEstimate closed_loop_decay_exact(const FeedbackQuadratic& feedback, const Vector& x,
                                      int steps);

struct StabilizabilityEvidence {
  std::vector<double> start_times;
  std::vector<double> tails;       ///< cost over [t, T] from x at each start
  std::vector<double> std_errors;
  double bound = 0.0;              ///< max of the tails
  bool divergent = false;
  std::string note;
};

/// Cost tails E∫_t^T [⟨SX,X⟩ + |u|²] from x at several start times.
StabilizabilityEvidence stabilizability_evidence(const CoefficientModel& model,
                                                 const Policy& policy, const Vector& x,
                                                 const SimGrid& grid, const McSpec& mc,
                                                 const std::vector<int>& start_steps);

}  // namespace stochlq
