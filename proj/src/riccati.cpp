#include "stochlq/riccati.hpp"

#include "stochlq/config.hpp"
#include "stochlq/error.hpp"
#include "stochlq/generator.hpp"
#include "stochlq/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace stochlq {

Coefficients coefficients_at(const CoefficientModel& model, const FiltrationLattice& lattice,
                             int level, std::size_t node, bool compact) {
  if (compact || model.is_deterministic()) {
    NodeState s = NodeState::at_time(lattice.time(level), model.dims.d);
    s.level = level;
    return model.at(s);
  }
  return model.at(lattice.state(level, node));
}

namespace {

/// Clips roundoff-level negative eigenvalues; returns λ_min before clipping.
double floor_psd(Matrix& P, bool& clipped) {
  if (P.rows() == 1) {
    const double l = P(0, 0);
    if (l < -1e-8) throw Error(ErrorKind::LostPositivity, "P has eigenvalue " + std::to_string(l));
    if (l < 0.0) {
      P(0, 0) = 0.0;
      clipped = true;
    }
    return l;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(P);
  const double l = es.eigenvalues().minCoeff();
  if (l < -1e-8) throw Error(ErrorKind::LostPositivity, "P has eigenvalue " + std::to_string(l));
  if (l < 0.0) {
    P = es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() *
        es.eigenvectors().transpose();
    clipped = true;
  }
  return l;
}

void check_terminal(const Matrix& terminal, int n) {
  if (terminal.rows() != n || terminal.cols() != n) {
    throw Error(ErrorKind::BadDimensions, "terminal weight must be n x n", "horizon.terminal");
  }
  if ((terminal - terminal.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, terminal.cwiseAbs().maxCoeff())) {
    throw Error(ErrorKind::NonSymmetricS, "terminal weight is not symmetric", "horizon.terminal");
  }
  if (min_eigenvalue(terminal) < -1e-10) {
    throw Error(ErrorKind::NegativeS, "terminal weight is not PSD", "horizon.terminal");
  }
}

std::string at_node(int level, std::size_t node) {
  return " (level " + std::to_string(level) + ", node " + std::to_string(node) + ")";
}

}  // namespace

namespace {

Vector value_rhs(const CoefficientModel& model, double t, const Vector& y) {
  const int n = model.dims.n;
  const Eigen::Index nn = n * n;
  const Coefficients c = model.at(NodeState::at_time(t, model.dims.d));
  const Matrix P = sym(unpack(y.head(nn), n, n));
  const Vector r = y.segment(nn, n);
  const MatrixFamily none;
  const Matrix N = inner_matrix(c.D, P, model.dims.k);
  const Matrix gain = feedback_gain(c.B, c.C, c.D, P, none);
  const Matrix G = generator_G(c.A, c.B, c.C, c.D, c.S, P, none);
  const Matrix H = c.A + c.B * gain;
  const Vector w = c.B.transpose() * r;
  Vector dy(y.size());
  dy.head(nn) = pack(-G);
  dy.segment(nn, n) = -(H.transpose() * r + P * c.f);
  dy[nn + n] = -2.0 * r.dot(c.f);
  dy[nn + n + 1] = w.dot(N.ldlt().solve(w));
  return dy;
}

Vector value_terminal(const CoefficientModel& model, const Matrix& terminal,
                      const Vector& terminal_r) {
  const int n = model.dims.n;
  Vector y0(n * n + n + 2);
  y0 << pack(sym(terminal)), terminal_r, 0.0, 0.0;
  return y0;
}

void require_deterministic(const CoefficientModel& model) {
  if (!model.is_deterministic()) {
    throw Error(ErrorKind::ConfigError, "the ODE route needs deterministic coefficients");
  }
}

}  // namespace

ValueOde solve_value_ode(const CoefficientModel& model, const std::vector<double>& times,
                         double horizon, const Matrix& terminal, const Vector& terminal_r,
                         const OdeOptions& options) {
  require_deterministic(model);
  const int n = model.dims.n;
  const Eigen::Index nn = n * n;
  auto rhs = [&](double t, const Vector& y) { return value_rhs(model, t, y); };
  std::vector<double> backward(times.rbegin(), times.rend());
  const auto samples =
      integrate_rk4(rhs, value_terminal(model, terminal, terminal_r), horizon, backward, options);
  ValueOde out;
  out.times = times;
  const std::size_t m = times.size();
  out.P.resize(m);
  out.r.resize(m);
  out.coupling.resize(m);
  out.correction.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    const Vector& y = samples[m - 1 - j];
    out.P[j] = sym(unpack(y.head(nn), n, n));
    out.r[j] = y.segment(nn, n);
    out.coupling[j] = y[nn + n];
    out.correction[j] = y[nn + n + 1];
  }
  return out;
}

HermiteTrajectory value_trajectory(const CoefficientModel& model, double horizon,
                                   const Matrix& terminal, const Vector& terminal_r,
                                   int intervals, const OdeOptions& options) {
  require_deterministic(model);
  std::vector<double> times(intervals + 1);
  for (int j = 0; j <= intervals; ++j) times[j] = horizon * j / intervals;
  auto rhs = [&](double t, const Vector& y) { return value_rhs(model, t, y); };
  std::vector<double> backward(times.rbegin(), times.rend());
  auto samples =
      integrate_rk4(rhs, value_terminal(model, terminal, terminal_r), horizon, backward, options);
  std::reverse(samples.begin(), samples.end());
  std::vector<Vector> slopes;
  slopes.reserve(samples.size());
  for (std::size_t j = 0; j < samples.size(); ++j) slopes.push_back(rhs(times[j], samples[j]));
  return HermiteTrajectory(std::move(times), std::move(samples), std::move(slopes));
}

RiccatiSolution compact_solution(const CoefficientModel& model, const FiltrationLattice& grid,
                                 const std::vector<Matrix>& P, const Matrix& terminal) {
  const int n = model.dims.n;
  const int L = grid.depth();
  RiccatiSolution sol;
  sol.lattice = grid;
  sol.scheme = Scheme::Continuous;
  sol.terminal = terminal;
  sol.P = AdaptedField<Matrix>::compact(L, Matrix::Zero(n, n));
  sol.Q.assign(model.dims.d, AdaptedField<Matrix>::compact(L, Matrix::Zero(n, n)));
  sol.gain = AdaptedField<Matrix>::compact(L, Matrix::Zero(model.dims.k, n));
  sol.min_eigenvalue = std::numeric_limits<double>::infinity();
  const MatrixFamily none;
  for (int l = 0; l <= L; ++l) {
    Matrix Pl = P[l];
    bool clipped = false;
    sol.min_eigenvalue = std::min(sol.min_eigenvalue, floor_psd(Pl, clipped));
    sol.clipped += clipped ? 1 : 0;
    const Coefficients c = coefficients_at(model, grid, l, 0, true);
    sol.gain.at(l, 0) = feedback_gain(c.B, c.C, c.D, Pl, none);
    sol.P.at(l, 0) = std::move(Pl);
  }
  return sol;
}

RiccatiSolution solve_finite_deterministic(const CoefficientModel& model,
                                           const FiltrationLattice& grid, const Matrix& terminal,
                                           const OdeOptions& options) {
  check_terminal(terminal, model.dims.n);
  std::vector<double> times;
  for (int l = 0; l <= grid.depth(); ++l) times.push_back(grid.time(l));
  const ValueOde v = solve_value_ode(model.without_forcing(), times, grid.horizon(), terminal,
                                     Vector::Zero(model.dims.n), options);
  return compact_solution(model, grid, v.P, terminal);
}

RiccatiSolution solve_finite_lattice(const CoefficientModel& model,
                                     const FiltrationLattice& lattice, const Matrix& terminal,
                                     const LatticeOptions& options) {
  check_terminal(terminal, model.dims.n);
  if (options.compact && !model.is_deterministic()) {
    throw Error(ErrorKind::ConfigError, "compact storage needs deterministic coefficients");
  }
  if (lattice.dim() != model.dims.d) {
    throw Error(ErrorKind::GridMismatch, "lattice dimension differs from the model's d");
  }
  if (options.scheme == Scheme::Continuous) {
    throw Error(ErrorKind::ConfigError, "the continuous scheme is the ODE route", "lattice.scheme");
  }
  const int n = model.dims.n;
  const int k = model.dims.k;
  const int d = model.dims.d;
  const int L = lattice.depth();
  const double dt = lattice.step();
  const bool compact = options.compact;
  auto make = [&](const Matrix& init) {
    return compact ? AdaptedField<Matrix>::compact(L, init) : AdaptedField<Matrix>::full(lattice, init);
  };

  RiccatiSolution sol;
  sol.lattice = lattice;
  sol.scheme = options.scheme;
  sol.terminal = terminal;
  sol.P = make(sym(terminal));
  sol.Q.assign(d, make(Matrix::Zero(n, n)));
  sol.gain = make(Matrix::Zero(k, n));
  sol.min_eigenvalue = min_eigenvalue(terminal);

  const MatrixFamily none;
  const std::size_t last_count = compact ? 1 : lattice.nodes(L);
  for (std::size_t i = 0; i < last_count; ++i) {
    const Coefficients c = coefficients_at(model, lattice, L, i, compact);
    sol.gain.at(L, i) = feedback_gain(c.B, c.C, c.D, sol.P.at(L, i), none);
  }

  for (int l = L - 1; l >= 0; --l) {
    const std::size_t count = compact ? 1 : lattice.nodes(l);
    std::vector<double> lmin(count, 0.0);
    std::vector<char> clipped(count, 0);
    parallel_for(count, [&](std::size_t i) {
      try {
        const Coefficients c = coefficients_at(model, lattice, l, i, compact);
        ChildMoments<double> m;
        if (compact) {
          m = constant_moments(sol.P.at(l + 1, 0), d);
        } else {
          const std::size_t first = lattice.child(i, 0);
          const auto& next = sol.P.level(l + 1);
          m = child_moments(std::span<const Matrix>(next.data() + first, lattice.branching()), d, dt);
        }
        Matrix P;
        Matrix gain;
        switch (options.scheme) {
          case Scheme::Exact: {
            auto step = exact_riccati_step(c.A, c.B, c.C, c.D, c.S, m, dt);
            P = std::move(step.P);
            gain = std::move(step.gain);
            break;
          }
          case Scheme::Explicit:
            P = sym(Matrix(m.hat + dt * generator_G(c.A, c.B, c.C, c.D, c.S, m.hat, m.lin)));
            break;
          case Scheme::Implicit: {
            P = sym(Matrix(m.hat + dt * generator_G(c.A, c.B, c.C, c.D, c.S, m.hat, m.lin)));
            int it = 0;
            for (;; ++it) {
              Matrix next = sym(Matrix(m.hat + dt * generator_G(c.A, c.B, c.C, c.D, c.S, P, m.lin)));
              const double change = (next - P).norm();
              P = std::move(next);
              if (change <= options.fixed_point_tol * std::max(1.0, P.norm())) break;
              if (it >= options.max_iterations) {
                throw Error(ErrorKind::NoConvergence,
                            "implicit Riccati step did not converge; reduce the step");
              }
            }
            break;
          }
          case Scheme::Continuous:
            break;
        }
        bool was_clipped = false;
        lmin[i] = floor_psd(P, was_clipped);
        clipped[i] = was_clipped;
        if (options.scheme != Scheme::Exact) gain = feedback_gain(c.B, c.C, c.D, P, m.lin);
        sol.P.at(l, i) = std::move(P);
        sol.gain.at(l, i) = std::move(gain);
        for (int j = 0; j < d; ++j) sol.Q[j].at(l, i) = sym(m.lin[j]);
      } catch (const Error& e) {
        throw Error(e.kind(), std::string(e.what()) + at_node(l, i), e.key());
      }
    });
    for (std::size_t i = 0; i < count; ++i) {
      sol.min_eigenvalue = std::min(sol.min_eigenvalue, lmin[i]);
      sol.clipped += clipped[i];
    }
  }
  return sol;
}

RiccatiSolution truncate(const RiccatiSolution& solution, int levels) {
  if (levels > solution.depth()) {
    throw Error(ErrorKind::GridMismatch, "cannot truncate beyond the solved depth");
  }
  RiccatiSolution out;
  out.lattice = solution.lattice.with_depth(levels);
  out.scheme = solution.scheme;
  out.P = solution.P.truncated(levels);
  for (const auto& q : solution.Q) out.Q.push_back(q.truncated(levels));
  out.gain = solution.gain.truncated(levels);
  out.terminal = solution.P.at(levels, 0);
  out.min_eigenvalue = solution.min_eigenvalue;
  out.clipped = solution.clipped;
  return out;
}

FeedbackQuadratic feedback_quadratic(const RiccatiSolution& riccati,
                                     const CoefficientModel& model) {
  const FiltrationLattice& lattice = riccati.lattice;
  const int L = lattice.depth();
  const int n = model.dims.n;
  const int d = model.dims.d;
  const bool compact = riccati.is_compact();
  FeedbackQuadratic fb;
  fb.lattice = lattice;
  fb.Lambda = riccati.gain;
  auto make = [&](const Matrix& init) {
    return compact ? AdaptedField<Matrix>::compact(L, init) : AdaptedField<Matrix>::full(lattice, init);
  };
  fb.H = make(Matrix::Zero(n, n));
  fb.K.assign(d, make(Matrix::Zero(n, n)));
  for (int l = 0; l <= L; ++l) {
    const std::size_t count = compact ? 1 : lattice.nodes(l);
    parallel_for(count, [&](std::size_t i) {
      const Coefficients c = coefficients_at(model, lattice, l, i, compact);
      const Matrix& gain = fb.Lambda.at(l, i);
      fb.H.at(l, i) = c.A + c.B * gain;
      for (int j = 0; j < d; ++j) fb.K[j].at(l, i) = c.C[j] + c.D[j] * gain;
    });
  }
  return fb;
}

std::vector<double> horizon_schedule(const InfiniteOptions& options) {
  std::vector<double> out = options.schedule;
  if (out.empty()) {
    if (!(options.N0 > 0.0)) throw Error(ErrorKind::ConfigError, "N0 must be > 0", "horizon.N0");
    for (double N = options.N0; N <= options.max_N * (1.0 + 1e-12); N *= 2.0) out.push_back(N);
  }
  if (out.empty()) throw Error(ErrorKind::ConfigError, "empty horizon schedule", "horizon.schedule");
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0.0) || (i > 0 && !(out[i] > out[i - 1]))) {
      throw Error(ErrorKind::ConfigError, "schedule must be positive and increasing",
                  "horizon.schedule");
    }
  }
  return out;
}

namespace {

int levels_for(double horizon, double step, const char* key) {
  const double raw = horizon / step;
  const long levels = std::lround(raw);
  if (levels < 1 || std::abs(raw - static_cast<double>(levels)) > 1e-9 * std::max(1.0, raw)) {
    std::ostringstream msg;
    msg << "horizon " << horizon << " is not a multiple of the step " << step;
    throw Error(ErrorKind::ConfigError, msg.str(), key);
  }
  return static_cast<int>(levels);
}

std::vector<NodeState> margin_points(const CoefficientModel& model, const InfiniteOptions& opt,
                                     double horizon) {
  if (model.is_deterministic()) {
    const int count = std::min(100000, static_cast<int>(std::ceil(horizon / opt.step)));
    std::vector<NodeState> pts;
    for (int l = 0; l <= count; ++l) {
      NodeState s = NodeState::at_time(l * opt.step, model.dims.d);
      s.level = l;
      pts.push_back(std::move(s));
    }
    return pts;
  }
  int depth = 1;
  while (depth < 12 && lattice_node_count(depth + 1, model.dims.d) <= opt.memory_budget &&
         (depth + 1) * opt.step <= horizon + 1e-12) {
    ++depth;
  }
  return evaluation_points(model, FiltrationLattice(depth, opt.step, model.dims.d));
}

}  // namespace

InfiniteRiccati solve_infinite(const CoefficientModel& model, const InfiniteOptions& options) {
  const std::vector<double> schedule = horizon_schedule(options);
  const int n = model.dims.n;
  const int d = model.dims.d;
  InfiniteRiccati out;
  out.on_lattice = options.force_lattice || !model.is_deterministic();
  out.margin = dissipativity_margin(model, margin_points(model, options, schedule.back()));
  if (!(out.margin > 0.0) && !options.override_stabilizability) {
    std::ostringstream msg;
    msg << "no stabilizability certificate: dissipativity margin " << out.margin
        << " <= 0 (set horizon.override to proceed)";
    throw Error(ErrorKind::NotStabilizable, msg.str(), "horizon.override");
  }
  const double step = options.step;
  const int window_levels = levels_for(schedule.front(), step, "horizon.schedule");
  out.window = window_levels * step;
  const FiltrationLattice window_grid(window_levels, step, d);
  const Matrix zero = Matrix::Zero(n, n);

  std::vector<std::vector<Matrix>> history;
  RiccatiSolution last;
  bool converged = false;
  double last_diff = std::numeric_limits<double>::infinity();
  for (const double N : schedule) {
    std::vector<Matrix> snapshot;
    RiccatiSolution current;
    if (out.on_lattice) {
      const int depth = levels_for(N, step, "horizon.schedule");
      if (lattice_node_count(depth, d) > options.memory_budget) break;
      LatticeOptions lo;
      lo.scheme = options.scheme == Scheme::Continuous ? Scheme::Exact : options.scheme;
      lo.compact = model.is_deterministic();
      current = solve_finite_lattice(model, FiltrationLattice(depth, step, d), zero, lo);
      for (int l = 0; l <= window_levels; ++l) {
        for (std::size_t i = 0; i < (current.is_compact() ? 1 : window_grid.nodes(l)); ++i) {
          snapshot.push_back(current.P.at(l, i));
        }
      }
    } else {
      std::vector<double> times;
      for (int l = 0; l <= window_levels; ++l) times.push_back(window_grid.time(l));
      const ValueOde v = solve_value_ode(model.without_forcing(), times, N, zero, Vector::Zero(n));
      snapshot = v.P;
      current = compact_solution(model, window_grid, v.P, v.P.back());
    }
    MonotonicityRecord rec;
    rec.N = N;
    rec.min_gap = std::numeric_limits<double>::infinity();
    for (const auto& earlier : history) {
      for (std::size_t i = 0; i < snapshot.size(); ++i) {
        rec.min_gap = std::min(rec.min_gap, min_eigenvalue(Matrix(snapshot[i] - earlier[i])));
      }
    }
    if (!history.empty()) {
      double diff = 0.0;
      for (std::size_t i = 0; i < snapshot.size(); ++i) {
        diff = std::max(diff, (snapshot[i] - history.back()[i]).norm());
      }
      rec.sup_diff = diff;
      last_diff = diff;
    } else {
      rec.sup_diff = std::numeric_limits<double>::infinity();
    }
    out.log.push_back(rec);
    if (rec.min_gap < -1e-8) {
      std::ostringstream msg;
      msg << "P^N decreased in PSD order at N=" << N << " (min eigenvalue gap " << rec.min_gap
          << ")";
      throw Error(ErrorKind::MonotonicityViolated, msg.str());
    }
    history.push_back(std::move(snapshot));
    last = std::move(current);
    out.N_used = N;
    if (history.size() >= 2 && rec.sup_diff < options.tol) {
      converged = true;
      break;
    }
    // S ≡ 0 with zero terminal gives P^N ≡ 0 for every N.
    if (model.S.is_constant() && model.S.base.isZero(0.0)) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "P^N not Cauchy within tol " << options.tol << " after N=" << out.N_used
        << " (last sup difference " << last_diff << ")";
    throw Error(ErrorKind::NoConvergence, msg.str(), "horizon.tol");
  }
  out.solution = out.on_lattice ? truncate(last, window_levels) : std::move(last);
  return out;
}

RiccatiSolution minimal_solution_on(const CoefficientModel& model, const InfiniteRiccati& inf,
                                    const InfiniteOptions& options, double window) {
  const int n = model.dims.n;
  const int d = model.dims.d;
  const double step = options.step;
  const int window_levels = levels_for(window, step, "window");
  const FiltrationLattice grid(window_levels, step, d);
  const Matrix zero = Matrix::Zero(n, n);
  if (!inf.on_lattice) {
    std::vector<double> times;
    for (int l = 0; l <= window_levels; ++l) times.push_back(grid.time(l));
    const ValueOde v = solve_value_ode(model.without_forcing(), times, grid.horizon() + inf.N_used,
                                       zero, Vector::Zero(n));
    return compact_solution(model, grid, v.P, v.P.back());
  }
  int depth = window_levels + levels_for(inf.N_used, step, "horizon.schedule");
  while (depth > window_levels && lattice_node_count(depth, d) > options.memory_budget) --depth;
  if (lattice_node_count(depth, d) > options.memory_budget) {
    throw Error(ErrorKind::ConfigError, "window exceeds the lattice memory budget",
                "lattice.memory_budget");
  }
  LatticeOptions lo;
  lo.scheme = options.scheme == Scheme::Continuous ? Scheme::Exact : options.scheme;
  lo.compact = model.is_deterministic();
  return truncate(solve_finite_lattice(model, FiltrationLattice(depth, step, d), zero, lo),
                  window_levels);
}

}  // namespace stochlq
