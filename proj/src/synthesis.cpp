#include "stochlq/synthesis.hpp"

#include "stochlq/error.hpp"
#include "stochlq/generator.hpp"
#include "stochlq/parallel.hpp"

#include <cmath>
#include <sstream>

namespace stochlq {

namespace {

constexpr std::size_t kMaxTreeNodes = std::size_t{1} << 22;

void require_tree(const FiltrationLattice& lattice, const char* what) {
  if (lattice.total_nodes() > kMaxTreeNodes) {
    throw Error(ErrorKind::ConfigError,
                std::string(what) + " needs a full lattice within 2^22 nodes");
  }
}

std::size_t width(const LatticePath& path, const FiltrationLattice& lattice, int level) {
  return path.single ? 1 : lattice.nodes(level);
}

/// E over the nodes of one level of a scalar evaluated per node.
template <typename Fn>
double level_expectation(const LatticePath& path, const FiltrationLattice& lattice, int level,
                         Fn&& fn) {
  const std::size_t count = width(path, lattice, level);
  std::vector<double> vals(count);
  parallel_for(count, [&](std::size_t i) { vals[i] = fn(i); });
  double acc = 0.0;
  for (double v : vals) acc += v;
  return acc / static_cast<double>(count);
}

}  // namespace

FeedbackLaw assemble_feedback(const RiccatiSolution& riccati, const DualSolution& dual,
                              const CoefficientModel& model) {
  if (!dual.lattice.same_grid(riccati.lattice) || dual.lattice.depth() != riccati.depth()) {
    throw Error(ErrorKind::GridMismatch, "dual and Riccati solution live on different grids");
  }
  FeedbackLaw law;
  law.lattice = riccati.lattice;
  law.quadratic = feedback_quadratic(riccati, model);
  law.affine = dual.affine;
  return law;
}

DpValue bellman_dp_oracle(const CoefficientModel& model, const FiltrationLattice& lattice,
                          const Matrix& terminal, const Vector& terminal_r) {
  const int n = model.dims.n;
  const int k = model.dims.k;
  const int d = model.dims.d;
  const int L = lattice.depth();
  const double dt = lattice.step();
  const bool compact = model.is_deterministic();
  if (terminal.rows() != n || terminal.cols() != n) {
    throw Error(ErrorKind::BadDimensions, "terminal weight must be n x n");
  }
  const Vector rT = terminal_r.size() == 0 ? Vector::Zero(n) : terminal_r;
  if (!compact) require_tree(lattice, "the DP oracle");

  auto make = [&](const auto& init) {
    using T = std::decay_t<decltype(init)>;
    return compact ? AdaptedField<T>::compact(L, init) : AdaptedField<T>::full(lattice, init);
  };
  DpValue out;
  out.lattice = lattice;
  out.P = make(Matrix(sym(terminal)));
  out.r = make(rT);
  out.c = make(0.0);
  out.gain = make(Matrix(Matrix::Zero(k, n)));
  out.affine = make(Vector(Vector::Zero(k)));

  const int branches = lattice.branching();
  const Matrix I = Matrix::Identity(n, n);
  for (int l = L - 1; l >= 0; --l) {
    const std::size_t count = compact ? 1 : lattice.nodes(l);
    parallel_for(count, [&](std::size_t node) {
      NodeState s = compact ? NodeState::at_time(lattice.time(l), d) : lattice.state(l, node);
      s.level = l;
      const Coefficients c = model.at(s);
      const Vector h = dt * c.f;
      Matrix Huu = dt * Matrix::Identity(k, k);
      Matrix Hux = Matrix::Zero(k, n);
      Matrix Hxx = dt * c.S;
      Vector lu = Vector::Zero(k);
      Vector lx = Vector::Zero(n);
      double c0 = 0.0;
      const double w = 1.0 / branches;
      for (int ch = 0; ch < branches; ++ch) {
        Matrix F = I + dt * c.A;
        Matrix G = dt * c.B;
        for (int i = 0; i < d; ++i) {
          const double xi = lattice.increment(ch, i);
          F.noalias() += xi * c.C[i];
          G.noalias() += xi * c.D[i];
        }
        const std::size_t child = compact ? 0 : lattice.child(node, ch);
        const Matrix& Pc = out.P.at(l + 1, child);
        const Vector& rc = out.r.at(l + 1, child);
        const Vector shift = Pc * h + rc;
        Huu.noalias() += w * G.transpose() * Pc * G;
        Hux.noalias() += w * G.transpose() * Pc * F;
        Hxx.noalias() += w * F.transpose() * Pc * F;
        lu.noalias() += w * G.transpose() * shift;
        lx.noalias() += w * F.transpose() * shift;
        c0 += w * (h.dot(Pc * h) + 2.0 * rc.dot(h) + out.c.at(l + 1, child));
      }
      Huu = sym(Huu);
      const double lmin = min_eigenvalue(Huu);
      if (!(lmin > 0.0)) {
        std::ostringstream msg;
        msg << "DP step at level " << l << ", node " << node
            << " is not strictly convex in u (λ_min = " << lmin << ")";
        throw Error(ErrorKind::NonConvexStep, msg.str());
      }
      const auto ldlt = Huu.ldlt();
      const Matrix gain = -ldlt.solve(Hux);
      const Vector affine = -ldlt.solve(lu);
      out.P.at(l, node) = sym(Matrix(Hxx + Hux.transpose() * gain));
      out.r.at(l, node) = lx + Hux.transpose() * affine;
      out.c.at(l, node) = c0 + lu.dot(affine);
      out.gain.at(l, node) = gain;
      out.affine.at(l, node) = affine;
    });
  }
  return out;
}

bool single_path_ok(const CoefficientModel& model, const RiccatiSolution& riccati) {
  return model.is_deterministic() && model.is_noise_free() && riccati.is_compact();
}

LatticePath evolve(const CoefficientModel& model, const FiltrationLattice& lattice,
                   const Vector& x, const Control& control, bool single) {
  const int n = model.dims.n;
  const int k = model.dims.k;
  const int d = model.dims.d;
  const int L = lattice.depth();
  const double dt = lattice.step();
  if (x.size() != n) throw Error(ErrorKind::BadDimensions, "initial state must have length n");
  LatticePath path;
  path.single = single;
  if (single) {
    path.X = AdaptedField<Vector>::compact(L, x);
    path.u = AdaptedField<Vector>::compact(L, Vector::Zero(k));
  } else {
    require_tree(lattice, "a path-dependent evaluation");
    path.X = AdaptedField<Vector>::full(lattice, Vector(Vector::Zero(n)));
    path.u = AdaptedField<Vector>::full(lattice, Vector(Vector::Zero(k)));
    path.X.at(0, 0) = x;
  }
  const int branches = single ? 1 : lattice.branching();
  for (int l = 0; l < L; ++l) {
    const std::size_t count = single ? 1 : lattice.nodes(l);
    parallel_for(count, [&](std::size_t node) {
      const Coefficients c = coefficients_at(model, lattice, l, node, single);
      const Vector& X = path.X.at(l, node);
      Vector u = control(l, node, X);
      if (u.size() != k) throw Error(ErrorKind::BadDimensions, "control must have length k");
      const Vector drift = X + dt * (c.A * X + c.B * u + c.f);
      for (int ch = 0; ch < branches; ++ch) {
        Vector next = drift;
        if (!single) {
          for (int i = 0; i < d; ++i) {
            next.noalias() += lattice.increment(ch, i) * (c.C[i] * X + c.D[i] * u);
          }
        }
        path.X.at(l + 1, single ? 0 : lattice.child(node, ch)) = std::move(next);
      }
      path.u.at(l, node) = std::move(u);
    });
  }
  return path;
}

double lattice_cost(const CoefficientModel& model, const RiccatiSolution& riccati,
                    const LatticePath& path) {
  const FiltrationLattice& lattice = riccati.lattice;
  const int L = lattice.depth();
  const double dt = lattice.step();
  double cost = 0.0;
  for (int l = 0; l < L; ++l) {
    cost += dt * level_expectation(path, lattice, l, [&](std::size_t i) {
      const Coefficients c = coefficients_at(model, lattice, l, i, path.single);
      const Vector& X = path.X.at(l, i);
      const Vector& u = path.u.at(l, i);
      return X.dot(c.S * X) + u.squaredNorm();
    });
  }
  cost += level_expectation(path, lattice, L, [&](std::size_t i) {
    const Vector& X = path.X.at(L, i);
    return X.dot(riccati.terminal * X);
  });
  return cost;
}

HamiltonianReport hamiltonian_residual(const CoefficientModel& model,
                                       const RiccatiSolution& riccati, const DualSolution& dual,
                                       const FeedbackLaw& law, const Vector& x) {
  const FiltrationLattice& lattice = riccati.lattice;
  const int n = model.dims.n;
  const int d = model.dims.d;
  const int L = lattice.depth();
  const double dt = lattice.step();
  const bool single = single_path_ok(model, riccati) && dual.is_compact();

  HamiltonianReport out;
  out.path = evolve(
      model, lattice, x,
      [&](int l, std::size_t i, const Vector& X) { return law.control(l, i, X); }, single);
  const LatticePath& path = out.path;
  auto make = [&]() {
    const Vector zero = Vector::Zero(n);
    return single ? AdaptedField<Vector>::compact(L, zero) : AdaptedField<Vector>::full(lattice, zero);
  };
  out.y = make();
  out.z.assign(d, make());
  const std::size_t leaves = single ? 1 : lattice.nodes(L);
  for (std::size_t i = 0; i < leaves; ++i) {
    out.y.at(L, i) = riccati.terminal * path.X.at(L, i) + dual.r.at(L, i);
  }
  for (int l = L - 1; l >= 0; --l) {
    const std::size_t count = single ? 1 : lattice.nodes(l);
    parallel_for(count, [&](std::size_t i) {
      const Coefficients c = coefficients_at(model, lattice, l, i, single);
      Vector y_hat;
      VectorFamily z_hat(d, Vector::Zero(n));
      if (single) {
        y_hat = out.y.at(l + 1, 0);
      } else {
        const auto& next = out.y.level(l + 1);
        const std::span<const Vector> kids(next.data() + lattice.child(i, 0), lattice.branching());
        y_hat = condexp(kids, d);
        for (int j = 0; j < d; ++j) z_hat[j] = martingale_coefficient(kids, d, j, dt);
      }
      Vector drift = c.A.transpose() * y_hat + c.S * path.X.at(l, i);
      for (int j = 0; j < d; ++j) drift.noalias() += c.C[j].transpose() * z_hat[j];
      out.y.at(l, i) = y_hat + dt * drift;
      for (int j = 0; j < d; ++j) out.z[j].at(l, i) = z_hat[j];
    });
  }
  for (int l = 0; l <= L; ++l) {
    const std::size_t count = single ? 1 : lattice.nodes(l);
    for (std::size_t i = 0; i < count; ++i) {
      const Vector& X = path.X.at(l, i);
      const Vector expected = riccati.P.at(l, i) * X + dual.r.at(l, i);
      out.max_residual = std::max(out.max_residual, (out.y.at(l, i) - expected).norm());
      if (l == L) continue;
      const Coefficients c = coefficients_at(model, lattice, l, i, single);
      Vector stationarity;
      if (single) {
        stationarity = c.B.transpose() * out.y.at(l + 1, 0);
      } else {
        const auto kids = out.y.children(lattice, l, i);
        stationarity = c.B.transpose() * condexp(kids, d);
        for (int j = 0; j < d; ++j) {
          stationarity.noalias() += c.D[j].transpose() * martingale_coefficient(kids, d, j, dt);
        }
      }
      out.max_control_residual =
          std::max(out.max_control_residual, (path.u.at(l, i) + stationarity).norm());
    }
  }
  return out;
}

double hamiltonian_residual_ode(const CoefficientModel& model, double T, const Matrix& terminal,
                                const Vector& x, int intervals) {
  if (!model.is_deterministic() || !model.is_noise_free()) {
    throw Error(ErrorKind::ConfigError, "the ODE Hamiltonian check needs noise-free deterministic "
                                        "coefficients");
  }
  const int n = model.dims.n;
  const int d = model.dims.d;
  const Eigen::Index nn = n * n;
  const HermiteTrajectory value =
      value_trajectory(model, T, terminal, Vector::Zero(n), intervals);
  auto unpack_value = [&](double t, Matrix& P, Vector& r) {
    const Vector v = value(t);
    P = sym(unpack(v.head(nn), n, n));
    r = v.segment(nn, n);
  };
  auto forward = [&](double t, const Vector& X) {
    Matrix P;
    Vector r;
    unpack_value(t, P, r);
    const Coefficients c = model.at(NodeState::at_time(t, d));
    const Matrix N = inner_matrix(c.D, P, model.dims.k);
    const Vector u = -N.ldlt().solve(Vector(c.B.transpose() * (P * X + r)));
    return Vector(c.A * X + c.B * u + c.f);
  };
  const double h = T / intervals;
  std::vector<double> times(intervals + 1);
  std::vector<Vector> Xs(intervals + 1);
  std::vector<Vector> dXs(intervals + 1);
  Xs[0] = x;
  for (int j = 0; j <= intervals; ++j) {
    times[j] = j * h;
    if (j > 0) Xs[j] = ode_detail::rk4(forward, times[j - 1], Xs[j - 1], h);
  }
  for (int j = 0; j <= intervals; ++j) dXs[j] = forward(times[j], Xs[j]);
  const HermiteTrajectory state(times, Xs, dXs);

  auto backward = [&](double t, const Vector& y) {
    const Coefficients c = model.at(NodeState::at_time(t, d));
    return Vector(-(c.A.transpose() * y + c.S * state(t)));
  };
  Vector y = terminal * Xs[intervals];
  double worst = 0.0;
  for (int j = intervals; j >= 0; --j) {
    if (j < intervals) y = ode_detail::rk4(backward, times[j + 1], y, -h);
    Matrix P;
    Vector r;
    unpack_value(times[j], P, r);
    worst = std::max(worst, (y - (P * Xs[j] + r)).norm());
  }
  return worst;
}

CostPrediction predicted_cost(const CoefficientModel& model, const RiccatiSolution& riccati,
                              const DualSolution& dual, const FeedbackLaw& law, const Vector& x,
                              bool finite) {
  CostPrediction out;
  const double quadratic = x.dot(riccati.P.at(0, 0) * x);
  const double linear = 2.0 * dual.r.at(0, 0).dot(x);
  const double coupling = dual.coupling.at(0, 0);
  const double correction = dual.correction.at(0, 0);
  out.terms["quadratic"] = quadratic;
  out.terms["linear"] = linear;
  out.terms["coupling"] = coupling;
  out.terms["correction"] = correction;
  out.value = quadratic + linear + coupling + correction;
  double terminal = 0.0;
  if (finite && !riccati.terminal.isZero(0.0)) {
    const bool single = single_path_ok(model, riccati) && dual.is_compact();
    const LatticePath path = evolve(
        model, riccati.lattice, x,
        [&](int l, std::size_t i, const Vector& X) { return law.control(l, i, X); }, single);
    const int L = riccati.depth();
    terminal = -level_expectation(path, riccati.lattice, L, [&](std::size_t i) {
      const Vector& X = path.X.at(L, i);
      return X.dot(riccati.terminal * X);
    });
  }
  out.terms["terminal"] = terminal;
  out.value_without_terminal = out.value + terminal;
  return out;
}

FundamentalRelation fundamental_relation_residual(const CoefficientModel& model,
                                                  const RiccatiSolution& riccati,
                                                  const DualSolution& dual,
                                                  const FeedbackLaw& law, const Control& u,
                                                  const Vector& x) {
  const FiltrationLattice& lattice = riccati.lattice;
  const int L = lattice.depth();
  const double dt = lattice.step();
  const bool single = single_path_ok(model, riccati) && dual.is_compact();
  const LatticePath path = evolve(model, lattice, x, u, single);

  FundamentalRelation out;
  out.cost = lattice_cost(model, riccati, path);
  out.predicted = predicted_cost(model, riccati, dual, law, x).value;
  for (int l = 0; l < L; ++l) {
    out.penalty += dt * level_expectation(path, lattice, l, [&](std::size_t i) {
      const Coefficients c = coefficients_at(model, lattice, l, i, single);
      const Matrix N = inner_matrix(c.D, riccati.P.at(l, i), model.dims.k);
      const Vector dev = path.u.at(l, i) - law.control(l, i, path.X.at(l, i));
      return dev.dot(N * dev);
    });
  }
  out.gap = std::abs(out.cost - out.predicted - out.penalty);
  return out;
}

std::vector<SweepPoint> epsilon_sweep(const CoefficientModel& model,
                                      const RiccatiSolution& riccati, const DualSolution& dual,
                                      const FeedbackLaw& law, const Vector& x,
                                      const Control& direction,
                                      const std::vector<double>& epsilons) {
  const bool single = single_path_ok(model, riccati) && dual.is_compact();
  auto cost_at = [&](double eps) {
    const Control u = [&](int l, std::size_t i, const Vector& X) {
      Vector v = law.control(l, i, X);
      if (eps != 0.0) v += eps * direction(l, i, X);
      return v;
    };
    return lattice_cost(model, riccati, evolve(model, riccati.lattice, x, u, single));
  };
  const double base = cost_at(0.0);
  std::vector<SweepPoint> out;
  for (double eps : epsilons) {
    SweepPoint p;
    p.epsilon = eps;
    p.excess = cost_at(eps) - base;
    const double doubled = cost_at(2.0 * eps) - base;
    p.ratio = p.excess != 0.0 ? doubled / p.excess : 0.0;
    out.push_back(p);
  }
  return out;
}

}  // namespace stochlq
