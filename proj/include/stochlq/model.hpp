#pragma once

#include "stochlq/types.hpp"

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace stochlq {

struct Dimensions {
  int n = 1;  ///< state
  int k = 1;  ///< control
  int d = 1;  ///< Brownian components
};

/// Where an adapted coefficient is evaluated: a grid time plus the summary of
/// the Brownian path that led there (running sums W_t and last increment signs).
struct NodeState {
  int level = 0;
  double t = 0.0;
  Vector path_sum;        ///< W_t per component
  Eigen::VectorXi last_sign;  ///< sign of the latest increment, 0 at level 0

  static NodeState at_time(double t, int d);
};

enum class CoefficientKind { Constant, TimeVaryingDeterministic, FactorDriven };

std::string to_string(CoefficientKind kind);

/// Deterministic time modulation amp·s(t), s ∈ {sin(ωt+φ), e^(−βt)}.
struct TimeTerm {
  enum class Shape { Sine, Exp };
  Matrix amp;
  Shape shape = Shape::Sine;
  double omega = 1.0;
  double phase = 0.0;
  double rate = 1.0;

  double profile(double t) const;
  double sup_profile() const;
};

/// Bounded function of the path: amp·φ(scale·Z), φ ∈ {tanh, clip to [−1,1]},
/// Z the running sum W_t of one component or the sign of its last increment.
struct FactorTerm {
  enum class Source { PathSum, LastSign };
  enum class Map { Tanh, Clip };
  Matrix amp;
  Source source = Source::PathSum;
  Map map = Map::Tanh;
  int component = 0;
  double scale = 1.0;

  double factor(const NodeState& s) const;
};

/// A uniformly bounded, predictable matrix-valued process
///   e^(−discount·t)·(base + time term + factor term).
struct CoefficientProcess {
  Matrix base;
  std::optional<TimeTerm> time;
  std::optional<FactorTerm> factor;
  double discount = 0.0;
  /// Declared sup-norm bound (operator 2-norm); +inf when not declared.
  double declared_bound = std::numeric_limits<double>::infinity();

  static CoefficientProcess constant(Matrix value);

  Matrix at(const NodeState& s) const;
  bool is_deterministic() const { return !factor.has_value(); }
  bool is_constant() const { return !factor && !time && discount == 0.0; }
  /// Analytic sup-norm bound implied by the closed form.
  double analytic_bound() const;
  int rows() const { return static_cast<int>(base.rows()); }
  int cols() const { return static_cast<int>(base.cols()); }
};

enum class Integrability { FiniteHorizonBounded, SquareIntegrableDecaying };

struct ForcingSpec {
  CoefficientProcess f;
  Integrability integrability = Integrability::FiniteHorizonBounded;
  double decay_rate = 0.0;
};

/// Coefficients evaluated at one node.
struct Coefficients {
  Matrix A, B;
  MatrixFamily C, D;
  Matrix S;
  Vector f;
};

class CoefficientModel {
 public:
  Dimensions dims;
  CoefficientProcess A, B, S;
  std::vector<CoefficientProcess> C, D;
  ForcingSpec forcing;
  bool ergodic = false;
  double ergodic_epsilon = 0.0;

  /// All-zero model of the given size.
  static CoefficientModel zero(Dimensions dims);
  /// Constant coefficients; C and D hold one matrix per Brownian component.
  static CoefficientModel constant(const Matrix& A, const Matrix& B,
                                   const MatrixFamily& C, const MatrixFamily& D,
                                   const Matrix& S, const Vector& f);

  CoefficientKind kind() const;
  bool is_deterministic() const { return kind() != CoefficientKind::FactorDriven; }
  /// No state or control noise at all (C ≡ 0 and D ≡ 0).
  bool is_noise_free() const;
  bool forcing_is_zero() const;

  Coefficients at(const NodeState& s) const;

  /// Same model with f replaced by zero.
  CoefficientModel without_forcing() const;
};

/// Remark-style dissipativity margin α* = −max λ_max(sym(A) + ½ Σ CᵢᵀCᵢ) over
/// the supplied evaluation points; α* > 0 certifies stabilizability via u = 0.
double dissipativity_margin(const CoefficientModel& model,
                            const std::vector<NodeState>& points);

}  // namespace stochlq
