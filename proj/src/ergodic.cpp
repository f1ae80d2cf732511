#include "stochlq/ergodic.hpp"

#include "stochlq/error.hpp"
#include "stochlq/parallel.hpp"
#include "stochlq/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace stochlq {

CoefficientModel discount_transform(const CoefficientModel& model, double alpha) {
  if (!(alpha > 0.0)) {
    std::ostringstream msg;
    msg << "discount rate must be > 0, got " << alpha;
    throw Error(ErrorKind::NonPositiveAlpha, msg.str(), "horizon.alphas");
  }
  if (model.A.discount != 0.0) {
    throw Error(ErrorKind::ConfigError, "A already carries an exponential factor", "model.A");
  }
  CoefficientModel out = model;
  const int n = model.dims.n;
  out.A.base -= alpha * Matrix::Identity(n, n);
  if (std::isfinite(out.A.declared_bound)) out.A.declared_bound += alpha;
  out.forcing.f.discount += alpha;
  const bool decaying = model.forcing.integrability == Integrability::SquareIntegrableDecaying;
  out.forcing.decay_rate = (decaying ? model.forcing.decay_rate : 0.0) + alpha;
  out.forcing.integrability = Integrability::SquareIntegrableDecaying;
  return out;
}

ScalingCheck scaling_identity_check(const CoefficientModel& model, const Policy& policy,
                                    const Vector& x, double alpha, const SimGrid& grid,
                                    const McSpec& mc) {
  const CoefficientModel transformed = discount_transform(model, alpha);
  const PathBatch batch = simulate(model, policy, x, grid, mc);
  CostOptions opt;
  opt.finite = false;
  opt.alpha = alpha;
  const CostReport direct = evaluate_cost(batch, model, opt);

  const int d = model.dims.d;
  const double dt = grid.step;
  std::vector<double> per_path(batch.paths, 0.0);
  parallel_for(batch.paths, [&](std::size_t p) {
    NodeState s = NodeState::at_time(grid.time(0), d);
    Vector X = std::exp(-alpha * grid.time(0)) * x;
    double cost = 0.0;
    for (int j = 0; j < grid.steps; ++j) {
      s.t = grid.time(j);
      s.level = grid.start + j;
      const Coefficients c = transformed.at(s);
      const Vector u = std::exp(-alpha * grid.time(j)) * batch.u[p].col(j);
      const auto dW = batch.dW[p].col(j);
      cost += dt * (X.dot(c.S * X) + u.squaredNorm());
      Vector next = X + dt * (c.A * X + c.B * u + c.f);
      for (int i = 0; i < d; ++i) next.noalias() += dW[i] * (c.C[i] * X + c.D[i] * u);
      X = std::move(next);
      for (int i = 0; i < d; ++i) {
        s.path_sum[i] += dW[i];
        s.last_sign[i] = dW[i] >= 0.0 ? 1 : -1;
      }
    }
    per_path[p] = cost;
  });
  ScalingCheck out;
  out.direct = direct.estimate;
  for (double v : per_path) out.transformed += v;
  out.transformed /= static_cast<double>(batch.paths);
  out.residual = std::abs(out.direct - out.transformed);
  return out;
}

namespace {

int window_levels(double window, double step) {
  const long levels = std::lround(window / step);
  if (levels < 1) throw Error(ErrorKind::ConfigError, "ergodic window shorter than one step");
  return static_cast<int>(levels);
}

double round_up(double T, double step) { return std::ceil(T / step - 1e-9) * step; }

/// α-problem truncation: long enough that e^(−2αT) drops below tol.
double truncation(double alpha, double tol, double window, double N_used, double step) {
  return round_up(window + std::max(N_used, std::log(1.0 / tol) / (2.0 * alpha)), step);
}

template <typename Field>
double sup_gap(const Field& a, const Field& b, const FiltrationLattice& lattice, int levels) {
  double gap = 0.0;
  levels = std::min({levels, a.depth(), b.depth()});
  for (int l = 0; l <= levels; ++l) {
    const std::size_t count = (a.is_compact() && b.is_compact()) ? 1 : lattice.nodes(l);
    for (std::size_t i = 0; i < count; ++i) gap = std::max(gap, (a.at(l, i) - b.at(l, i)).norm());
  }
  return gap;
}

void fill_x_terms(ErgodicRow& row, const std::vector<Vector>& xs, const Matrix& P0,
                  const Vector& r0, double constant) {
  for (const Vector& x : xs) {
    const double quad = x.dot(P0 * x);
    const double lin = 2.0 * r0.dot(x);
    const double J = quad + lin + constant;
    row.J.push_back(J);
    row.alpha_J.push_back(row.alpha * J);
    row.quadratic.push_back(row.alpha * quad);
    row.linear.push_back(row.alpha * lin);
  }
}

/// Dissipativity margin when positive, otherwise the fitted closed-loop decay.
double decay_certificate(const CoefficientModel& model, const InfiniteRiccati& inf,
                         const Vector& x, const ErgodicOptions& options) {
  if (inf.margin > 0.0) return inf.margin;
  const FeedbackQuadratic fb = feedback_quadratic(inf.solution, model);
  const SimGrid g{inf.solution.depth(), options.riccati.step, 0};
  return closed_loop_decay(feedback_dynamics(fb), x, g, options.mc, model.dims.d).a_hat;
}

}  // namespace

ErgodicReport solve_discounted_family(const CoefficientModel& model,
                                      const std::vector<double>& alphas,
                                      const std::vector<Vector>& xs,
                                      const ErgodicOptions& options) {
  if (alphas.empty()) throw Error(ErrorKind::InsufficientGrid, "empty alpha grid");
  if (xs.empty()) throw Error(ErrorKind::ConfigError, "need at least one initial state");
  for (double a : alphas) {
    if (!(a > 0.0)) discount_transform(model, a);  // raises NonPositiveAlpha
  }
  const int n = model.dims.n;
  const double step = options.riccati.step;
  const int wl = window_levels(options.window, step);
  const FiltrationLattice grid(wl, step, model.dims.d);
  std::vector<double> times;
  for (int l = 0; l <= wl; ++l) times.push_back(grid.time(l));
  const Matrix zero = Matrix::Zero(n, n);
  const Vector zero_r = Vector::Zero(n);
  const bool deterministic = model.is_deterministic();

  ErgodicReport report;
  report.xs = xs;
  report.window = wl * step;
  report.rows.resize(alphas.size());
  std::vector<std::string> notes(alphas.size());
  std::vector<RiccatiSolution> P_alpha(alphas.size());
  std::vector<std::optional<DualSolution>> r_alpha(alphas.size());
  std::vector<ValueOde> ode_alpha(alphas.size());

  parallel_for(
      alphas.size(),
      [&](std::size_t j) {
        const double alpha = alphas[j];
        try {
          const CoefficientModel transformed = discount_transform(model, alpha);
          const InfiniteRiccati inf = solve_infinite(transformed, options.riccati);
          ErgodicRow& row = report.rows[j];
          row.alpha = alpha;
          if (deterministic) {
            row.horizon = truncation(alpha, options.tol, report.window, inf.N_used, step);
            ode_alpha[j] = solve_value_ode(transformed, times, row.horizon, zero, zero_r);
            const ValueOde& v = ode_alpha[j];
            row.term1 = alpha * v.coupling[0];
            row.term2 = -alpha * v.correction[0];
            fill_x_terms(row, xs, v.P[0], v.r[0], v.coupling[0] + v.correction[0]);
          } else {
            InfiniteDualOptions dopt;
            dopt.tol = options.tol;
            dopt.decay_certificate = decay_certificate(transformed, inf, xs.front(), options);
            const InfiniteDual dual =
                solve_dual_infinite(transformed, inf, options.riccati, dopt);
            row.horizon = dual.N_used;
            const DualSolution& r = dual.solution;
            row.term1 = alpha * r.coupling.at(0, 0);
            row.term2 = -alpha * r.correction.at(0, 0);
            fill_x_terms(row, xs, dual.riccati.P.at(0, 0), r.r.at(0, 0), r.constant(0, 0));
            P_alpha[j] = minimal_solution_on(transformed, inf, options.riccati, report.window);
            r_alpha[j] = r;
            std::ostringstream note;
            note << "alpha=" << alpha << ": path-dependent model, discounted cost truncated at N="
                 << dual.N_used;
            notes[j] = note.str();
          }
        } catch (const Error& e) {
          std::ostringstream msg;
          msg << "alpha=" << alpha << ": " << e.what();
          throw Error(e.kind(), msg.str(), e.key());
        }
      },
      default_workers(), 1);

  // Undiscounted references on the window.
  double T_ref = 0.0;
  for (const auto& row : report.rows) T_ref = std::max(T_ref, row.horizon);
  if (deterministic) {
    const ValueOde ref = solve_value_ode(model, times, round_up(report.window + T_ref, step), zero,
                                         zero_r);
    for (std::size_t j = 0; j < alphas.size(); ++j) {
      double pg = 0.0;
      double rg = 0.0;
      for (int l = 0; l <= wl; ++l) {
        pg = std::max(pg, (ode_alpha[j].P[l] - ref.P[l]).norm());
        rg = std::max(rg, (ode_alpha[j].r[l] - ref.r[l]).norm());
      }
      report.rows[j].P_gap = pg;
      report.rows[j].r_gap = rg;
    }
  } else {
    const InfiniteRiccati base = solve_infinite(model, options.riccati);
    const RiccatiSolution Pbar = minimal_solution_on(model, base, options.riccati, report.window);
    std::optional<DualSolution> rbar;
    if (model.forcing_is_zero() ||
        model.forcing.integrability == Integrability::SquareIntegrableDecaying) {
      InfiniteDualOptions dopt;
      dopt.tol = options.tol;
      dopt.decay_certificate = decay_certificate(model, base, xs.front(), options);
      rbar = solve_dual_infinite(model, base, options.riccati, dopt).solution;
    } else {
      report.notes.push_back("r gap not computed: undiscounted forcing is not square integrable");
    }
    for (std::size_t j = 0; j < alphas.size(); ++j) {
      report.rows[j].P_gap = sup_gap(P_alpha[j].P, Pbar.P, grid, wl);
      report.rows[j].r_gap = rbar ? sup_gap(r_alpha[j]->r, rbar->r, grid, wl)
                                  : std::numeric_limits<double>::quiet_NaN();
    }
  }
  for (auto& note : notes) {
    if (!note.empty()) report.notes.push_back(std::move(note));
  }

  for (std::size_t j = 1; j < report.rows.size(); ++j) {
    const ErgodicRow& a = report.rows[j - 1];
    const ErgodicRow& b = report.rows[j];
    if (b.P_gap > a.P_gap * (1.0 + 1e-9) + 1e-14) report.P_gap_decreasing = false;
    if (!(b.r_gap <= a.r_gap * (1.0 + 1e-9) + 1e-14)) report.r_gap_decreasing = false;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double before = std::abs(a.quadratic[k] + a.linear[k]);
      const double after = std::abs(b.quadratic[k] + b.linear[k]);
      if (after > before * (1.0 + 1e-9) + 1e-14) report.x_terms_vanishing = false;
    }
  }
  if (!report.P_gap_decreasing) report.notes.push_back("P gap not monotone along the alpha grid");
  if (!report.r_gap_decreasing) report.notes.push_back("r gap not monotone along the alpha grid");
  return report;
}

double extrapolate_to_zero(const std::vector<double>& alphas, const std::vector<double>& values,
                           int degree) {
  const Eigen::Index m = static_cast<Eigen::Index>(alphas.size());
  Matrix V(m, degree + 1);
  Vector y(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double p = 1.0;
    for (int c = 0; c <= degree; ++c, p *= alphas[i]) V(i, c) = p;
    y[i] = values[i];
  }
  return V.colPivHouseholderQr().solve(y)[0];
}

ErgodicLimit ergodic_limit(const ErgodicReport& report) {
  const std::size_t m = report.rows.size();
  if (m < 3) {
    throw Error(ErrorKind::InsufficientGrid,
                "ergodic extrapolation needs at least 3 alphas, got " + std::to_string(m),
                "horizon.alphas");
  }
  ErgodicLimit out;
  out.degree = static_cast<int>(std::min<std::size_t>(2, m - 1));
  std::vector<double> alphas;
  std::vector<double> diff;
  std::size_t smallest = 0;
  for (std::size_t j = 0; j < m; ++j) {
    alphas.push_back(report.rows[j].alpha);
    diff.push_back(report.rows[j].term1 - report.rows[j].term2);
    if (report.rows[j].alpha < report.rows[smallest].alpha) smallest = j;
  }
  out.limit = extrapolate_to_zero(alphas, diff, out.degree);
  out.last_raw = diff[smallest];
  out.error_bar = std::abs(out.limit - out.last_raw);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t k = 0; k < report.xs.size(); ++k) {
    std::vector<double> series;
    for (const auto& row : report.rows) series.push_back(row.alpha_J[k]);
    const double lim = extrapolate_to_zero(alphas, series, out.degree);
    out.x_limits.push_back(lim);
    out.error_bar = std::max(out.error_bar, std::abs(lim - series[smallest]));
    lo = std::min(lo, lim);
    hi = std::max(hi, lim);
  }
  out.x_gap = hi - lo;
  out.x_independent = out.x_gap <= out.error_bar + 1e-12 * (1.0 + std::abs(out.limit));
  return out;
}

AverageCost average_cost_oracle(const CoefficientModel& model, const Vector& x, double T,
                                double step) {
  if (!model.is_deterministic()) {
    throw Error(ErrorKind::ConfigError, "the averaged-cost oracle needs deterministic coefficients");
  }
  const int levels = static_cast<int>(std::lround(T / step));
  if (levels < 1) throw Error(ErrorKind::ConfigError, "averaging horizon shorter than one step");
  const FiltrationLattice lattice(levels, step, model.dims.d);
  const int n = model.dims.n;
  const DpValue dp = bellman_dp_oracle(model, lattice, Matrix::Zero(n, n));
  AverageCost out;
  out.T = lattice.horizon();
  out.value = x.dot(dp.P.at(0, 0) * x) + 2.0 * dp.r.at(0, 0).dot(x) + dp.c.at(0, 0);
  out.average = out.value / out.T;
  return out;
}

}  // namespace stochlq
