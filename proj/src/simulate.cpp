#include "stochlq/simulate.hpp"

#include "stochlq/error.hpp"
#include "stochlq/parallel.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

namespace stochlq {

namespace {

constexpr double kOverflow = 1e12;

std::mt19937_64 path_engine(std::uint64_t seed, std::size_t path) {
  const auto p = static_cast<std::uint64_t>(path);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(p), static_cast<std::uint32_t>(p >> 32)};
  return std::mt19937_64(seq);
}

/// Draws the d standard increments ζ for one step.
void draw(std::mt19937_64& eng, McSpec::Mode mode, Eigen::Ref<Vector> zeta) {
  if (mode == McSpec::Mode::Bernoulli) {
    for (Eigen::Index i = 0; i < zeta.size(); ++i) zeta[i] = (eng() & 1u) ? 1.0 : -1.0;
  } else {
    std::normal_distribution<double> normal;
    for (Eigen::Index i = 0; i < zeta.size(); ++i) zeta[i] = normal(eng);
  }
}

/// Advances the path summary and node id by one step with increments √Δζ.
void advance(PathContext& ctx, const Vector& zeta, double sqrt_dt, double step) {
  const int d = static_cast<int>(zeta.size());
  std::size_t c = 0;
  for (int i = 0; i < d; ++i) {
    ctx.state.path_sum[i] += sqrt_dt * zeta[i];
    ctx.state.last_sign[i] = zeta[i] >= 0.0 ? 1 : -1;
    if (zeta[i] >= 0.0) c |= std::size_t{1} << i;
  }
  if (static_cast<long>(d) * (ctx.state.level + 1) <= 62) ctx.node = (ctx.node << d) | c;
  ctx.step += 1;
  ctx.state.level += 1;
  ctx.state.t = ctx.step * step;
}

PathContext initial_context(const SimGrid& grid, int d) {
  PathContext ctx;
  ctx.step = grid.start;
  ctx.state = NodeState::at_time(grid.time(0), d);
  ctx.state.level = 0;
  return ctx;
}

void check_overflow(const Vector& X, std::size_t path, int step) {
  const double norm = X.norm();
  if (!(norm <= kOverflow)) {
    std::ostringstream msg;
    msg << "trajectory norm " << norm << " exceeds 1e12 on path " << path << " at step " << step;
    throw Error(ErrorKind::NumericOverflow, msg.str());
  }
}

int law_level(const AdaptedField<Matrix>& field, int depth, int step) {
  if (step <= depth) return step;
  if (field.is_compact()) return depth;
  throw Error(ErrorKind::GridMismatch, "simulation runs past the depth of a path-dependent law");
}

double mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double std_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

Policy zero_policy(int k) {
  return [k](const PathContext&, const Vector&) { return Vector(Vector::Zero(k)); };
}

Policy open_loop_policy(const FiltrationLattice& lattice, AdaptedField<Vector> u) {
  return [lattice, u = std::move(u)](const PathContext& ctx, const Vector&) {
    const int depth = lattice.depth();
    if (ctx.step > depth && !u.is_compact()) {
      throw Error(ErrorKind::GridMismatch, "open-loop control is shorter than the simulation");
    }
    return u.at(std::min(ctx.step, depth), ctx.node);
  };
}

Policy feedback_policy(const FeedbackLaw& law) {
  return [law](const PathContext& ctx, const Vector& x) {
    const int l = law_level(law.quadratic.Lambda, law.lattice.depth(), ctx.step);
    return law.control(l, ctx.node, x);
  };
}

PathBatch simulate(const CoefficientModel& model, const Policy& policy, const Vector& x,
                   const SimGrid& grid, const McSpec& mc) {
  const int n = model.dims.n;
  const int k = model.dims.k;
  const int d = model.dims.d;
  if (x.size() != n) throw Error(ErrorKind::BadDimensions, "initial state must have length n");
  if (mc.paths < 1) throw Error(ErrorKind::ConfigError, "need at least one path", "mc.paths");
  if (grid.steps < 1 || !(grid.step > 0.0)) {
    throw Error(ErrorKind::ConfigError, "simulation grid needs steps >= 1 and step > 0");
  }
  PathBatch batch;
  batch.grid = grid;
  batch.paths = static_cast<std::size_t>(mc.paths);
  batch.seed = mc.seed;
  batch.mode = mc.mode;
  batch.X.resize(batch.paths);
  batch.u.resize(batch.paths);
  batch.dW.resize(batch.paths);
  const double dt = grid.step;
  const double sq = std::sqrt(dt);

  parallel_for(batch.paths, [&](std::size_t p) {
    auto eng = path_engine(mc.seed, p);
    Matrix& X = batch.X[p];
    Matrix& U = batch.u[p];
    Matrix& W = batch.dW[p];
    X.resize(n, grid.steps + 1);
    U.resize(k, grid.steps);
    W.resize(d, grid.steps);
    X.col(0) = x;
    PathContext ctx = initial_context(grid, d);
    Vector zeta(d);
    for (int j = 0; j < grid.steps; ++j) {
      NodeState s = ctx.state;
      s.t = grid.time(j);
      s.level = ctx.step;
      const Coefficients c = model.at(s);
      const Vector Xj = X.col(j);
      const Vector u = policy(ctx, Xj);
      if (u.size() != k) throw Error(ErrorKind::BadDimensions, "policy must return length k");
      draw(eng, mc.mode, zeta);
      Vector next = Xj + dt * (c.A * Xj + c.B * u + c.f);
      for (int i = 0; i < d; ++i) next.noalias() += (sq * zeta[i]) * (c.C[i] * Xj + c.D[i] * u);
      check_overflow(next, p, j + 1);
      X.col(j + 1) = next;
      U.col(j) = u;
      W.col(j) = sq * zeta;
      advance(ctx, zeta, sq, dt);
    }
  });
  return batch;
}

CostReport evaluate_cost(const PathBatch& batch, const CoefficientModel& model,
                         const CostOptions& options) {
  const SimGrid& grid = batch.grid;
  if (options.expected_grid) {
    const SimGrid& g = *options.expected_grid;
    if (g.steps != grid.steps || g.start != grid.start ||
        std::abs(g.step - grid.step) > 1e-14 * grid.step) {
      throw Error(ErrorKind::GridMismatch, "path batch and cost grid differ");
    }
  }
  const int n = model.dims.n;
  const int d = model.dims.d;
  const Matrix terminal = options.terminal.size() == 0 ? Matrix::Identity(n, n) : options.terminal;
  if (terminal.rows() != n || terminal.cols() != n) {
    throw Error(ErrorKind::BadDimensions, "terminal weight must be n x n");
  }
  const double dt = grid.step;
  const bool factor = !model.S.is_deterministic();
  std::vector<Matrix> S_det;
  if (!factor) {
    for (int j = 0; j < grid.steps; ++j) S_det.push_back(model.S.at(NodeState::at_time(grid.time(j), d)));
  }
  CostReport report;
  report.horizon = options.finite ? "finite" : "infinite";
  report.alpha = options.alpha;
  report.per_path.assign(batch.paths, 0.0);
  std::vector<std::vector<double>> rates(batch.paths);
  parallel_for(batch.paths, [&](std::size_t p) {
    rates[p].resize(grid.steps);
    const Matrix& X = batch.X[p];
    const Matrix& U = batch.u[p];
    PathContext ctx = initial_context(grid, d);
    double cost = 0.0;
    for (int j = 0; j < grid.steps; ++j) {
      Matrix S;
      if (factor) {
        NodeState s = ctx.state;
        s.t = grid.time(j);
        s.level = ctx.step;
        S = model.S.at(s);
        advance(ctx, batch.dW[p].col(j) / std::sqrt(dt), std::sqrt(dt), dt);
      }
      const Matrix& Sj = factor ? S : S_det[j];
      const double weight = options.alpha ? std::exp(-2.0 * *options.alpha * grid.time(j)) : 1.0;
      const double running = X.col(j).dot(Sj * X.col(j)) + U.col(j).squaredNorm();
      rates[p][j] = running;
      cost += dt * weight * running;
    }
    if (options.finite) cost += X.col(grid.steps).dot(terminal * X.col(grid.steps));
    report.per_path[p] = cost;
  });
  report.running_rate.assign(grid.steps, 0.0);
  for (int j = 0; j < grid.steps; ++j) {
    for (std::size_t p = 0; p < batch.paths; ++p) report.running_rate[j] += rates[p][j];
    report.running_rate[j] /= static_cast<double>(batch.paths);
  }
  report.estimate = mean(report.per_path);
  report.std_error = std_error(report.per_path);
  return report;
}

void attach_prediction(CostReport& report, const CostPrediction& prediction) {
  report.predicted = prediction;
  if (report.std_error > 0.0) {
    report.z_score = (report.estimate - prediction.value) / report.std_error;
  }
}

DecayEstimate fit_decay(const std::vector<double>& times, const std::vector<double>& moments) {
  DecayEstimate out;
  out.times = times;
  out.second_moment = moments;
  std::vector<double> ts;
  std::vector<double> ys;
  for (std::size_t j = 0; j < times.size() && j < moments.size(); ++j) {
    if (moments[j] > 1e-300 && std::isfinite(moments[j])) {
      ts.push_back(times[j]);
      ys.push_back(std::log(moments[j]));
    }
  }
  if (ts.size() < 2) return out;
  out.window = ts.back() - ts.front();
  const double tm = mean(ts);
  const double ym = mean(ys);
  double stt = 0.0;
  double sty = 0.0;
  double syy = 0.0;
  for (std::size_t j = 0; j < ts.size(); ++j) {
    stt += (ts[j] - tm) * (ts[j] - tm);
    sty += (ts[j] - tm) * (ys[j] - ym);
    syy += (ys[j] - ym) * (ys[j] - ym);
  }
  const double slope = sty / stt;
  out.a_hat = -slope;
  out.C_hat = std::exp(ym - slope * tm);
  // A flat series is fitted perfectly by a zero slope but explains nothing.
  out.r2 = syy > 0.0 ? std::clamp(sty * sty / (stt * syy), 0.0, 1.0) : 0.0;
  out.certified = out.a_hat > 0.0 && out.r2 >= 0.9;
  return out;
}

LinearDynamics feedback_dynamics(const FeedbackQuadratic& feedback) {
  return [feedback](const PathContext& ctx, Matrix& H, MatrixFamily& K) {
    const int l = law_level(feedback.H, feedback.lattice.depth(), ctx.step);
    H = feedback.H.at(l, ctx.node);
    K.resize(feedback.K.size());
    for (std::size_t i = 0; i < K.size(); ++i) K[i] = feedback.K[i].at(l, ctx.node);
  };
}

LinearDynamics uncontrolled_dynamics(const CoefficientModel& model) {
  return [model](const PathContext& ctx, Matrix& H, MatrixFamily& K) {
    const Coefficients c = model.at(ctx.state);
    H = c.A;
    K = c.C;
  };
}

DecayEstimate closed_loop_decay(const LinearDynamics& dynamics, const Vector& x,
                                const SimGrid& grid, const McSpec& mc, int d) {
  const std::size_t paths = static_cast<std::size_t>(std::max(1, mc.paths));
  const double dt = grid.step;
  const double sq = std::sqrt(dt);
  std::vector<std::vector<double>> sq_norms(paths);
  parallel_for(paths, [&](std::size_t p) {
    auto eng = path_engine(mc.seed, p);
    PathContext ctx = initial_context(grid, d);
    Vector X = x;
    Vector zeta(d);
    Matrix H;
    MatrixFamily K;
    auto& out = sq_norms[p];
    out.reserve(grid.steps + 1);
    out.push_back(X.squaredNorm());
    for (int j = 0; j < grid.steps; ++j) {
      ctx.state.t = grid.time(j);
      dynamics(ctx, H, K);
      draw(eng, mc.mode, zeta);
      Vector next = X + dt * (H * X);
      for (std::size_t i = 0; i < K.size(); ++i) next.noalias() += (sq * zeta[i]) * (K[i] * X);
      check_overflow(next, p, j + 1);
      X = std::move(next);
      out.push_back(X.squaredNorm());
      advance(ctx, zeta, sq, dt);
    }
  });
  std::vector<double> times(grid.steps + 1);
  std::vector<double> moments(grid.steps + 1, 0.0);
  for (int j = 0; j <= grid.steps; ++j) {
    times[j] = grid.time(j);
    for (std::size_t p = 0; p < paths; ++p) moments[j] += sq_norms[p][j];
    moments[j] /= static_cast<double>(paths);
  }
  return fit_decay(times, moments);
}

DecayEstimate closed_loop_decay_exact(const FeedbackQuadratic& feedback, const Vector& x,
                                      int steps) {
  if (!feedback.H.is_compact()) {
    throw Error(ErrorKind::ConfigError, "exact second moments need deterministic feedback");
  }
  const int depth = feedback.lattice.depth();
  const double dt = feedback.lattice.step();
  const Eigen::Index n = x.size();
  Matrix M = x * x.transpose();
  std::vector<double> times{0.0};
  std::vector<double> moments{M.trace()};
  for (int j = 0; j < steps; ++j) {
    const int l = std::min(j, depth);
    const Matrix F = Matrix::Identity(n, n) + dt * feedback.H.at(l, 0);
    Matrix next = F * M * F.transpose();
    for (const auto& K : feedback.K) next.noalias() += dt * K.at(l, 0) * M * K.at(l, 0).transpose();
    M = sym(next);
    times.push_back((j + 1) * dt);
    moments.push_back(M.trace());
  }
  return fit_decay(times, moments);
}

StabilizabilityEvidence stabilizability_evidence(const CoefficientModel& model,
                                                 const Policy& policy, const Vector& x,
                                                 const SimGrid& grid, const McSpec& mc,
                                                 const std::vector<int>& start_steps) {
  StabilizabilityEvidence out;
  for (const int s : start_steps) {
    if (s < 0 || s >= grid.steps) {
      throw Error(ErrorKind::ConfigError, "start step outside the simulation grid");
    }
    SimGrid g = grid;
    g.start = grid.start + s;
    g.steps = grid.steps - s;
    out.start_times.push_back(g.time(0));
    PathBatch batch;
    try {
      batch = simulate(model, policy, x, g, mc);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NumericOverflow) throw;
      out.divergent = true;
      out.note = e.what();
      out.tails.push_back(std::numeric_limits<double>::infinity());
      out.std_errors.push_back(std::numeric_limits<double>::infinity());
      continue;
    }
    CostOptions opt;
    opt.finite = false;
    const CostReport cost = evaluate_cost(batch, model, opt);
    out.tails.push_back(cost.estimate);
    out.std_errors.push_back(cost.std_error);

    // Compare the mean running-cost rate over the first and last tenth of the
    // window: growth signals a divergent tail.
    const int span = std::max(1, g.steps / 10);
    auto rate = [&](int from) {
      double acc = 0.0;
      for (int j = from; j < from + span; ++j) acc += cost.running_rate[j];
      return acc / span;
    };
    const double head = rate(0);
    const double tail = rate(g.steps - span);
    if (tail > head && tail > 1e-12) {
      out.divergent = true;
      if (out.note.empty()) out.note = "running cost grows along the window";
    }
  }
  out.bound = 0.0;
  for (double t : out.tails) out.bound = std::max(out.bound, t);
  return out;
}

}  // namespace stochlq
