#include "stochlq/dual.hpp"

#include "stochlq/error.hpp"
#include "stochlq/generator.hpp"
#include "stochlq/parallel.hpp"

#include <cmath>
#include <sstream>

namespace stochlq {

namespace {

void check_same_grid(const FiltrationLattice& a, const FiltrationLattice& b, const char* what) {
  if (!a.same_grid(b) || a.depth() != b.depth()) {
    throw Error(ErrorKind::GridMismatch, std::string(what) + " live on different grids");
  }
}

template <typename T>
AdaptedField<T> make_field(const FiltrationLattice& lattice, bool compact, const T& init) {
  return compact ? AdaptedField<T>::compact(lattice.depth(), init)
                 : AdaptedField<T>::full(lattice, init);
}

template <typename T>
std::span<const T> child_span(const AdaptedField<T>& field, const FiltrationLattice& lattice,
                              int level, std::size_t node) {
  const auto& next = field.level(level + 1);
  return std::span<const T>(next.data() + lattice.child(node, 0), lattice.branching());
}

DualSolution dual_from_ode(const CoefficientModel& model, const RiccatiSolution& riccati,
                           const Vector& terminal) {
  const FiltrationLattice& grid = riccati.lattice;
  const int L = grid.depth();
  const int n = model.dims.n;
  std::vector<double> times;
  for (int l = 0; l <= L; ++l) times.push_back(grid.time(l));
  const ValueOde v =
      solve_value_ode(model, times, grid.horizon(), riccati.P.at(L, 0), terminal);
  DualSolution out;
  out.lattice = grid;
  out.scheme = Scheme::Continuous;
  out.r = AdaptedField<Vector>::compact(L, Vector::Zero(n));
  out.g.assign(model.dims.d, AdaptedField<Vector>::compact(L, Vector::Zero(n)));
  out.affine = AdaptedField<Vector>::compact(L, Vector::Zero(model.dims.k));
  out.coupling = AdaptedField<double>::compact(L, 0.0);
  out.correction = AdaptedField<double>::compact(L, 0.0);
  for (int l = 0; l <= L; ++l) {
    const Coefficients c = coefficients_at(model, grid, l, 0, true);
    const Matrix N = inner_matrix(c.D, v.P[l], model.dims.k);
    out.r.at(l, 0) = v.r[l];
    out.affine.at(l, 0) = -N.ldlt().solve(Vector(c.B.transpose() * v.r[l]));
    out.coupling.at(l, 0) = v.coupling[l];
    out.correction.at(l, 0) = v.correction[l];
    out.max_abs_r = std::max(out.max_abs_r, v.r[l].norm());
  }
  return out;
}

}  // namespace

DualSolution solve_dual_finite(const CoefficientModel& model, const FeedbackQuadratic& feedback,
                               const RiccatiSolution& riccati, const Vector& terminal_in) {
  check_same_grid(feedback.lattice, riccati.lattice, "feedback and Riccati solution");
  const int n = model.dims.n;
  const int k = model.dims.k;
  const int d = model.dims.d;
  const Vector terminal = terminal_in.size() == 0 ? Vector::Zero(n) : terminal_in;
  if (terminal.size() != n) throw Error(ErrorKind::BadDimensions, "terminal r must have length n");
  if (riccati.scheme == Scheme::Continuous) return dual_from_ode(model, riccati, terminal);

  const FiltrationLattice& lattice = riccati.lattice;
  const int L = lattice.depth();
  const double dt = lattice.step();
  const bool compact = riccati.is_compact();
  const Scheme scheme = riccati.scheme;

  DualSolution out;
  out.lattice = lattice;
  out.scheme = scheme;
  out.r = make_field(lattice, compact, terminal);
  out.g.assign(d, make_field(lattice, compact, Vector(Vector::Zero(n))));
  out.affine = make_field(lattice, compact, Vector(Vector::Zero(k)));
  out.coupling = make_field(lattice, compact, 0.0);
  out.correction = make_field(lattice, compact, 0.0);

  {
    const std::size_t count = compact ? 1 : lattice.nodes(L);
    for (std::size_t i = 0; i < count; ++i) {
      const Coefficients c = coefficients_at(model, lattice, L, i, compact);
      const Matrix N = inner_matrix(c.D, riccati.P.at(L, i), k);
      out.affine.at(L, i) = -N.ldlt().solve(Vector(c.B.transpose() * terminal));
    }
  }

  for (int l = L - 1; l >= 0; --l) {
    const std::size_t count = compact ? 1 : lattice.nodes(l);
    parallel_for(count, [&](std::size_t i) {
      const Coefficients c = coefficients_at(model, lattice, l, i, compact);
      Vector r_hat;
      VectorFamily g_hat(d);
      double coupling_hat = 0.0;
      double correction_hat = 0.0;
      ChildMoments<double> mP;
      if (compact) {
        r_hat = out.r.at(l + 1, 0);
        for (auto& gi : g_hat) gi = Vector::Zero(n);
        coupling_hat = out.coupling.at(l + 1, 0);
        correction_hat = out.correction.at(l + 1, 0);
        mP = constant_moments(riccati.P.at(l + 1, 0), d);
      } else {
        const auto rc = child_span(out.r, lattice, l, i);
        r_hat = condexp(rc, d);
        for (int j = 0; j < d; ++j) g_hat[j] = martingale_coefficient(rc, d, j, dt);
        coupling_hat = condexp(child_span(out.coupling, lattice, l, i), d);
        correction_hat = condexp(child_span(out.correction, lattice, l, i), d);
        mP = child_moments(child_span(riccati.P, lattice, l, i), d, dt);
      }
      const Matrix& H = feedback.H.at(l, i);
      Vector r;
      Vector affine;
      double coupling = coupling_hat;
      double correction = correction_hat;
      if (scheme == Scheme::Exact) {
        const Vector h = dt * c.f;
        r = (Matrix::Identity(n, n) + dt * H).transpose() * (r_hat + mP.hat * h);
        Vector lu = dt * c.B.transpose() * (mP.hat * h + r_hat);
        for (int j = 0; j < d; ++j) {
          const Vector gj = g_hat[j] + mP.lin[j] * h;
          r.noalias() += dt * feedback.K[j].at(l, i).transpose() * gj;
          lu.noalias() += dt * c.D[j].transpose() * gj;
        }
        const Matrix G0 = dt * c.B;
        const Matrix Ruu = dt * Matrix::Identity(k, k) + moment_bilinear(mP, dt, G0, c.D, G0, c.D);
        const Vector sol = Ruu.ldlt().solve(lu);
        affine = -sol;
        coupling += h.dot(mP.hat * h) + 2.0 * r_hat.dot(h);
        correction -= lu.dot(sol);
      } else {
        const Matrix& P = riccati.P.at(l, i);
        Vector rhs = P * c.f;
        if (scheme == Scheme::Explicit) {
          rhs.noalias() += H.transpose() * r_hat;
          for (int j = 0; j < d; ++j) rhs.noalias() += feedback.K[j].at(l, i).transpose() * g_hat[j];
          r = r_hat + dt * rhs;
        } else {
          for (int j = 0; j < d; ++j) rhs.noalias() += feedback.K[j].at(l, i).transpose() * g_hat[j];
          const Matrix lhs = Matrix::Identity(n, n) - dt * H.transpose();
          r = lhs.partialPivLu().solve(Vector(r_hat + dt * rhs));
        }
        Vector w = c.B.transpose() * r;
        for (int j = 0; j < d; ++j) w.noalias() += c.D[j].transpose() * g_hat[j];
        const Matrix N = inner_matrix(c.D, P, k);
        const Vector sol = N.ldlt().solve(w);
        affine = -sol;
        coupling += 2.0 * dt * r.dot(c.f);
        correction -= dt * w.dot(sol);
      }
      out.r.at(l, i) = std::move(r);
      for (int j = 0; j < d; ++j) out.g[j].at(l, i) = std::move(g_hat[j]);
      out.affine.at(l, i) = std::move(affine);
      out.coupling.at(l, i) = coupling;
      out.correction.at(l, i) = correction;
    });
  }
  for (int l = 0; l <= L; ++l) {
    for (const auto& v : out.r.level(l)) out.max_abs_r = std::max(out.max_abs_r, v.norm());
  }
  return out;
}

FundamentalDual solve_dual_fundamental(const CoefficientModel& model,
                                       const FeedbackQuadratic& feedback,
                                       const RiccatiSolution& riccati) {
  check_same_grid(feedback.lattice, riccati.lattice, "feedback and Riccati solution");
  const FiltrationLattice& lattice = riccati.lattice;
  if (lattice.total_nodes() > (std::size_t{1} << 22)) {
    throw Error(ErrorKind::ConfigError, "fundamental-matrix construction needs a full lattice "
                                        "within 2^22 nodes", "lattice.depth");
  }
  const int n = model.dims.n;
  const int d = model.dims.d;
  const int L = lattice.depth();
  const double dt = lattice.step();
  const Matrix I = Matrix::Identity(n, n);

  FundamentalDual out;
  out.Psi = AdaptedField<Matrix>::full(lattice, I);
  out.Phi = AdaptedField<Matrix>::full(lattice, I);
  AdaptedField<Vector> running = AdaptedField<Vector>::full(lattice, Vector::Zero(n));

  for (int l = 0; l < L; ++l) {
    parallel_for(lattice.nodes(l), [&](std::size_t i) {
      const Coefficients c = coefficients_at(model, lattice, l, i, riccati.is_compact());
      const Matrix& H = feedback.H.at(l, i);
      Matrix drift_phi = I - dt * H.transpose();
      for (int j = 0; j < d; ++j) {
        const Matrix Kt = feedback.K[j].at(l, i).transpose();
        drift_phi.noalias() += dt * Kt * Kt;
      }
      const Matrix& Psi = out.Psi.at(l, i);
      const Matrix& Phi = out.Phi.at(l, i);
      const Vector increment = dt * Psi * riccati.P.at(l, i) * c.f;
      for (int ch = 0; ch < lattice.branching(); ++ch) {
        Matrix right = I + dt * H.transpose();
        Matrix left = drift_phi;
        for (int j = 0; j < d; ++j) {
          const Matrix Kt = feedback.K[j].at(l, i).transpose();
          right.noalias() += lattice.increment(ch, j) * Kt;
          left.noalias() -= lattice.increment(ch, j) * Kt;
        }
        const std::size_t child = lattice.child(i, ch);
        out.Psi.at(l + 1, child) = Psi * right;
        out.Phi.at(l + 1, child) = left * Phi;
        running.at(l + 1, child) = running.at(l, i) + increment;
      }
    });
  }

  // E_ℓ θ by iterated conditional expectation of θ = running integral at T.
  AdaptedField<Vector> theta = AdaptedField<Vector>::full(lattice, Vector::Zero(n));
  theta.level(L) = running.level(L);
  for (int l = L - 1; l >= 0; --l) {
    parallel_for(lattice.nodes(l), [&](std::size_t i) {
      theta.at(l, i) = condexp(child_span(theta, lattice, l, i), d);
    });
  }

  DualSolution& dual = out.dual;
  dual.lattice = lattice;
  dual.scheme = riccati.scheme;
  dual.r = AdaptedField<Vector>::full(lattice, Vector::Zero(n));
  dual.g.assign(d, AdaptedField<Vector>::full(lattice, Vector::Zero(n)));
  for (int l = 0; l <= L; ++l) {
    for (std::size_t i = 0; i < lattice.nodes(l); ++i) {
      const Matrix& Phi = out.Phi.at(l, i);
      dual.r.at(l, i) = Phi * (theta.at(l, i) - running.at(l, i));
      out.max_product_defect =
          std::max(out.max_product_defect, (Phi * out.Psi.at(l, i) - I).norm());
      Eigen::JacobiSVD<Matrix> svd(Phi);
      const auto& sv = svd.singularValues();
      const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
                                                  : std::numeric_limits<double>::infinity();
      out.max_condition = std::max(out.max_condition, cond);
      dual.max_abs_r = std::max(dual.max_abs_r, dual.r.at(l, i).norm());
    }
  }
  if (out.max_condition > 1e10) {
    std::ostringstream msg;
    msg << "fundamental matrix condition number " << out.max_condition << " exceeds 1e10";
    throw Error(ErrorKind::IllConditionedFundamental, msg.str());
  }
  dual.r.level(L).assign(lattice.nodes(L), Vector::Zero(n));
  for (int l = 0; l < L; ++l) {
    for (std::size_t i = 0; i < lattice.nodes(l); ++i) {
      const auto rc = child_span(dual.r, lattice, l, i);
      for (int j = 0; j < d; ++j) dual.g[j].at(l, i) = martingale_coefficient(rc, d, j, dt);
    }
  }
  return out;
}

namespace {

int levels_of(double horizon, double step) {
  return static_cast<int>(std::lround(horizon / step));
}

}  // namespace

InfiniteDual solve_dual_infinite(const CoefficientModel& model, const InfiniteRiccati& inf,
                                 const InfiniteOptions& riccati_options,
                                 const InfiniteDualOptions& options) {
  if (!model.forcing_is_zero() &&
      model.forcing.integrability != Integrability::SquareIntegrableDecaying) {
    throw Error(ErrorKind::ForcingNotSquareIntegrable,
                "infinite-horizon dual needs f tagged as decaying", "model.f.integrability");
  }
  if (!options.decay_certificate || !(*options.decay_certificate > 0.0)) {
    throw Error(ErrorKind::UnstableClosedLoop,
                "no closed-loop decay certificate (fitted decay rate must be > 0)");
  }
  std::vector<double> schedule =
      options.schedule.empty() ? horizon_schedule(riccati_options) : options.schedule;
  const double step = riccati_options.step;
  const int d = model.dims.d;
  if (inf.on_lattice) {
    std::vector<double> affordable;
    for (const double N : schedule) {
      if (lattice_node_count(levels_of(N, step), d) <= riccati_options.memory_budget) {
        affordable.push_back(N);
      }
    }
    schedule = std::move(affordable);
  }
  if (schedule.empty()) {
    throw Error(ErrorKind::NoConvergence, "no dual horizon fits the lattice memory budget");
  }
  if (model.forcing_is_zero()) schedule.resize(1);

  InfiniteDual out;
  const RiccatiSolution pbar = minimal_solution_on(model, inf, riccati_options, schedule.back());
  const int window_levels = levels_of(schedule.front(), step);
  out.window = window_levels * step;

  std::vector<Vector> previous;
  bool converged = model.forcing_is_zero();
  double last_diff = std::numeric_limits<double>::infinity();
  for (const double N : schedule) {
    RiccatiSolution riccati = truncate(pbar, levels_of(N, step));
    FeedbackQuadratic fb = feedback_quadratic(riccati, model);
    DualSolution dual = solve_dual_finite(model, fb, riccati);
    dual.horizon = DualSolution::Horizon::InfiniteApprox;
    dual.N_used = N;
    std::vector<Vector> snapshot;
    for (int l = 0; l <= window_levels; ++l) {
      const std::size_t count = dual.is_compact() ? 1 : dual.lattice.nodes(l);
      for (std::size_t i = 0; i < count; ++i) snapshot.push_back(dual.r.at(l, i));
    }
    DualRecord rec;
    rec.N = N;
    rec.max_abs_r = dual.max_abs_r;
    rec.sup_diff = std::numeric_limits<double>::infinity();
    if (!previous.empty()) {
      double diff = 0.0;
      for (std::size_t i = 0; i < snapshot.size(); ++i) {
        diff = std::max(diff, (snapshot[i] - previous[i]).norm());
      }
      rec.sup_diff = diff;
      last_diff = diff;
    }
    out.log.push_back(rec);
    previous = std::move(snapshot);
    out.solution = std::move(dual);
    out.riccati = std::move(riccati);
    out.feedback = std::move(fb);
    out.N_used = N;
    if (out.log.size() >= 2 && rec.sup_diff < options.tol) {
      converged = true;
      break;
    }
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "r^N not Cauchy within tol " << options.tol << " after N=" << out.N_used
        << " (last sup difference " << last_diff << ")";
    throw Error(ErrorKind::NoConvergence, msg.str(), "horizon.tol");
  }
  for (std::size_t j = 0; j < out.log.size(); ++j) {
    out.uniform_bound = std::max(out.uniform_bound, out.log[j].max_abs_r);
    if (j > 0 && out.log[j].max_abs_r > out.log[j - 1].max_abs_r + 1e-8) {
      out.bound_nonincreasing = false;
    }
  }
  const DualSolution& rbar = out.solution;
  for (int l = 0; l <= rbar.lattice.depth(); ++l) {
    double m = 0.0;
    if (rbar.is_compact()) {
      m = rbar.r.at(l, 0).squaredNorm();
    } else {
      for (const auto& v : rbar.r.level(l)) m += v.squaredNorm();
      m /= static_cast<double>(rbar.r.level(l).size());
    }
    out.second_moment.push_back(m);
  }
  const auto& sm = out.second_moment;
  for (std::size_t l = 1; l < sm.size(); ++l) {
    if (sm[l] > sm[l - 1] * (1.0 + 1e-9) + 1e-15) out.second_moment_decreasing = false;
  }
  return out;
}

DualityTerms duality_residual(const DualSolution& dual, const CoefficientModel& model,
                              const FeedbackQuadratic& feedback, const RiccatiSolution& riccati,
                              const VectorField& eta, const Vector& x, int level,
                              std::size_t node, const Vector& terminal) {
  check_same_grid(dual.lattice, riccati.lattice, "dual and Riccati solution");
  check_same_grid(feedback.lattice, riccati.lattice, "feedback and Riccati solution");
  if (!eta.empty() && eta.depth() != riccati.depth()) {
    throw Error(ErrorKind::GridMismatch, "eta lives on a different grid");
  }
  const FiltrationLattice& lattice = riccati.lattice;
  const int n = model.dims.n;
  const int d = model.dims.d;
  const int L = lattice.depth();
  const double dt = lattice.step();
  const bool compact = riccati.is_compact() && dual.is_compact() && feedback.H.is_compact() &&
                       (eta.empty() || eta.is_compact());
  bool noiseless = compact;
  if (noiseless) {
    for (const auto& K : feedback.K) {
      for (int l = 0; l <= L && noiseless; ++l) noiseless = K.at(l, 0).isZero(0.0);
    }
  }
  if (!noiseless && lattice.total_nodes() > (std::size_t{1} << 22)) {
    throw Error(ErrorKind::ConfigError, "duality check needs a full lattice within 2^22 nodes");
  }

  auto eta_at = [&](int l, std::size_t i) -> Vector {
    return eta.empty() ? Vector::Zero(n) : eta.at(l, i);
  };
  DualityTerms out;
  double forcing_sum = 0.0;
  double eta_sum = 0.0;
  // States of the current level of the subtree rooted at (level, node).
  std::vector<Vector> X{x};
  const int width = noiseless ? 0 : d;
  for (int l = level; l < L; ++l) {
    const std::size_t local = X.size();
    const int branches = 1 << width;
    const double weight = 1.0 / static_cast<double>(local * branches);
    std::vector<Vector> next(local * branches);
    std::vector<double> fsum(local, 0.0);
    std::vector<double> esum(local, 0.0);
    parallel_for(local, [&](std::size_t j) {
      const std::size_t id = noiseless ? 0 : ((node << (d * (l - level))) | j);
      const Coefficients c = coefficients_at(model, lattice, l, id, compact);
      const Matrix& H = feedback.H.at(l, id);
      const Vector e = eta_at(l, id);
      const Vector drift = X[j] + dt * (H * X[j] + e);
      for (int ch = 0; ch < branches; ++ch) {
        Vector Xc = drift;
        for (int i = 0; i < width; ++i) {
          Xc.noalias() += lattice.increment(ch, i) * (feedback.K[i].at(l, id) * X[j]);
        }
        const std::size_t child = noiseless ? 0 : lattice.child(id, ch);
        const Matrix& Pc = riccati.P.at(l + 1, child);
        fsum[j] += dt * (Pc * c.f).dot(Xc - dt * e);
        esum[j] += dt * e.dot(dual.r.at(l + 1, child));
        next[j * branches + ch] = std::move(Xc);
      }
    });
    for (std::size_t j = 0; j < local; ++j) {
      forcing_sum += weight * fsum[j];
      eta_sum += weight * esum[j];
    }
    X = std::move(next);
  }
  double terminal_pairing = 0.0;
  const double leaf_weight = 1.0 / static_cast<double>(X.size());
  for (std::size_t j = 0; j < X.size(); ++j) {
    const std::size_t id = noiseless ? 0 : ((node << (d * (L - level))) | j);
    const Vector xi = terminal.size() == n ? terminal : dual.r.at(L, id);
    terminal_pairing += leaf_weight * xi.dot(X[j]);
  }
  out.lhs = terminal_pairing - dual.r.at(level, compact ? 0 : node).dot(x);
  out.forcing_term = -forcing_sum;
  out.eta_term = eta_sum;
  out.residual = std::abs(out.lhs - out.forcing_term - out.eta_term);
  return out;
}

DualityTerms duality_residual_ode(const CoefficientModel& model, double T, const Vector& x,
                                  const std::function<Vector(double)>& eta, int intervals) {
  if (!model.is_deterministic() || !model.is_noise_free()) {
    throw Error(ErrorKind::ConfigError, "the ODE duality check needs noise-free deterministic "
                                        "coefficients");
  }
  const int n = model.dims.n;
  const Eigen::Index nn = n * n;
  const HermiteTrajectory value =
      value_trajectory(model, T, Matrix::Zero(n, n), Vector::Zero(n), intervals);
  auto rhs = [&](double t, const Vector& z) {
    const Vector y = value(t);
    const Matrix P = sym(unpack(y.head(nn), n, n));
    const Vector r = y.segment(nn, n);
    const Coefficients c = model.at(NodeState::at_time(t, model.dims.d));
    const Matrix H = c.A + c.B * feedback_gain(c.B, c.C, c.D, P, MatrixFamily{});
    const Vector X = z.head(n);
    const Vector e = eta ? eta(t) : Vector::Zero(n);
    Vector dz(n + 2);
    dz.head(n) = H * X + e;
    dz[n] = (P * c.f).dot(X);
    dz[n + 1] = e.dot(r);
    return dz;
  };
  Vector z = Vector::Zero(n + 2);
  z.head(n) = x;
  const double h = T / intervals;
  for (int j = 0; j < intervals; ++j) z = ode_detail::rk4(rhs, j * h, z, h);
  const Vector r0 = value(0.0).segment(nn, n);
  DualityTerms out;
  out.lhs = -r0.dot(x);
  out.forcing_term = -z[n];
  out.eta_term = z[n + 1];
  out.residual = std::abs(out.lhs - out.forcing_term - out.eta_term);
  return out;
}

}  // namespace stochlq
