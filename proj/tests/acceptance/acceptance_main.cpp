// One line per acceptance criterion. Exit status is non-zero when any fails.

#include "stochlq/cli.hpp"
#include "stochlq/config.hpp"
#include "stochlq/dual.hpp"
#include "stochlq/ergodic.hpp"
#include "stochlq/parallel.hpp"
#include "stochlq/riccati.hpp"
#include "stochlq/simulate.hpp"
#include "stochlq/synthesis.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifndef STOCHLQ_SCENARIO_DIR
#define STOCHLQ_SCENARIO_DIR "scenarios"
#endif

using namespace stochlq;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %2d %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

ScenarioConfig scenario(const std::string& name) {
  return load_config(fs::path(STOCHLQ_SCENARIO_DIR) / (name + ".json"));
}

// slope of log(err) against log(step) between consecutive halvings; the minimum
double min_slope(const std::vector<double>& err) {
  double s = 1e300;
  for (std::size_t i = 1; i < err.size(); ++i) s = std::min(s, std::log2(err[i - 1] / err[i]));
  return s;
}

InfiniteOptions infinite_options(const ScenarioConfig& cfg) {
  InfiniteOptions o;
  o.tol = cfg.horizon.tol;
  o.schedule = cfg.horizon.schedule;
  o.N0 = cfg.horizon.N0;
  o.max_N = cfg.horizon.max_N;
  o.step = cfg.lattice.step;
  o.scheme = cfg.lattice.scheme;
  o.memory_budget = cfg.lattice.memory_budget;
  return o;
}

struct Stack {
  RiccatiSolution riccati;
  DualSolution dual;
  FeedbackLaw law;
};

Stack solve(const CoefficientModel& model, const FiltrationLattice& grid, const Matrix& terminal,
            Scheme scheme, bool compact) {
  LatticeOptions lo;
  lo.scheme = scheme;
  lo.compact = compact;
  Stack s;
  s.riccati = solve_finite_lattice(model, grid, terminal, lo);
  s.dual = solve_dual_finite(model, feedback_quadratic(s.riccati, model), s.riccati);
  s.law = assemble_feedback(s.riccati, s.dual, model);
  return s;
}

// Fixed-step RK4 on the matrix Riccati ODE, written out here so the reference
// shares nothing with the library integrators.
std::vector<Matrix> riccati_ode_reference(const CoefficientModel& model, double T,
                                          const Matrix& terminal, int levels, int substeps) {
  const int d = model.dims.d;
  auto rhs = [&](double t, const Matrix& P) {
    const Coefficients c = model.at(NodeState::at_time(t, d));
    Matrix N = Matrix::Identity(model.dims.k, model.dims.k);
    Matrix M = P * c.B;
    Matrix G = c.A.transpose() * P + P * c.A + c.S;
    for (int i = 0; i < d; ++i) {
      N += c.D[i].transpose() * P * c.D[i];
      M += c.C[i].transpose() * P * c.D[i];
      G += c.C[i].transpose() * P * c.C[i];
    }
    G -= M * N.ldlt().solve(M.transpose());
    return Matrix(-G);
  };
  std::vector<Matrix> out(levels + 1);
  Matrix P = terminal;
  out[levels] = P;
  const double dt = T / levels;
  const double h = -dt / substeps;
  for (int l = levels; l > 0; --l) {
    double t = l * dt;
    for (int s = 0; s < substeps; ++s) {
      const Matrix k1 = rhs(t, P);
      const Matrix k2 = rhs(t + 0.5 * h, P + 0.5 * h * k1);
      const Matrix k3 = rhs(t + 0.5 * h, P + 0.5 * h * k2);
      const Matrix k4 = rhs(t + h, P + h * k3);
      P += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
      t += h;
    }
    out[l - 1] = P;
  }
  return out;
}

void criterion_1() {
  const auto run = [](const std::string& name, double oracle) {
    const ScenarioConfig cfg = scenario(name);
    const InfiniteRiccati inf = solve_infinite(validate(cfg), infinite_options(cfg));
    return std::abs(inf.solution.P.at(0, 0)(0, 0) - oracle);
  };
  const double e1 = run("scalar_are", std::sqrt(2.0) - 1.0);
  const double e2 = run("scalar_are_control_noise", (-1.0 + std::sqrt(13.0)) / 6.0);
  report(1, e1 <= 1e-6 && e2 <= 1e-6,
         "|P-(sqrt2-1)|=" + fmt("%.2e", e1) + " |P-(-1+sqrt13)/6|=" + fmt("%.2e", e2) +
             " tol 1e-6");
}

void criterion_2() {
  ScenarioConfig cfg = scenario("matrix_2x2");
  const CoefficientModel model = validate(cfg);
  const double T = cfg.horizon.T;
  std::vector<double> err;
  std::vector<double> steps;
  for (int L : {10, 20, 40, 80}) {
    const FiltrationLattice grid(L, T / L, cfg.dims.d);
    LatticeOptions lo;
    lo.scheme = Scheme::Implicit;
    lo.compact = true;
    const RiccatiSolution sol = solve_finite_lattice(model, grid, cfg.horizon.terminal, lo);
    const auto ref = riccati_ode_reference(model, T, cfg.horizon.terminal, L, 6400 / L);
    double e = 0.0;
    for (int l = 0; l <= L; ++l) e = std::max(e, (sol.P.at(l, 0) - ref[l]).cwiseAbs().maxCoeff());
    err.push_back(e);
    steps.push_back(T / L);
  }
  const double slope = min_slope(err);
  double C = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) C = std::max(C, err[i] / steps[i]);

  // node-independence and Q = 0 on the full lattice
  const FiltrationLattice grid(12, T / 12, cfg.dims.d);
  LatticeOptions lo;
  lo.scheme = Scheme::Implicit;
  const RiccatiSolution full = solve_finite_lattice(model, grid, cfg.horizon.terminal, lo);
  double spread = 0.0, q = 0.0;
  for (int l = 0; l <= grid.depth(); ++l) {
    for (std::size_t i = 0; i < grid.nodes(l); ++i) {
      spread = std::max(spread, (full.P.at(l, i) - full.P.at(l, 0)).cwiseAbs().maxCoeff());
      for (const auto& Qi : full.Q) q = std::max(q, Qi.at(l, i).cwiseAbs().maxCoeff());
    }
  }
  report(2, slope >= 0.9 && C <= 10.0 && spread <= 1e-12 && q <= 1e-12,
         "sup err/step max " + fmt("%.3f", C) + " (C<=10) slope " + fmt("%.3f", slope) +
             " node spread " + fmt("%.1e", spread) + " max|Q| " + fmt("%.1e", q));
}

void criterion_3() {
  const ScenarioConfig cfg = scenario("factor_scalar");
  const CoefficientModel model = validate(cfg);
  const FiltrationLattice grid = cfg.lattice_grid();
  const DpValue dp = bellman_dp_oracle(model, grid, cfg.horizon.terminal);
  auto gaps = [&](Scheme scheme) {
    const Stack s = solve(model, grid, cfg.horizon.terminal, scheme, false);
    double g = 0.0;
    for (int l = 0; l <= grid.depth(); ++l) {
      for (std::size_t i = 0; i < grid.nodes(l); ++i) {
        g = std::max(g, (dp.P.at(l, i) - s.riccati.P.at(l, i)).cwiseAbs().maxCoeff());
        g = std::max(g, (dp.r.at(l, i) - s.dual.r.at(l, i)).cwiseAbs().maxCoeff());
      }
    }
    return g;
  };
  const double exact = gaps(Scheme::Exact);
  const double implicit = gaps(Scheme::Implicit);
  report(3, exact <= 1e-10,
         "depth 8 node-by-node max gap (P,r): exact scheme " + fmt("%.2e", exact) +
             " tol 1e-10; literal implicit scheme " + fmt("%.2e", implicit));
}

void criterion_4() {
  double worst = 1e300;
  std::string names;
  for (const char* name : {"scalar_are", "scalar_are_control_noise", "dissipative"}) {
    const ScenarioConfig cfg = scenario(name);
    const InfiniteRiccati inf = solve_infinite(validate(cfg), infinite_options(cfg));
    for (const auto& rec : inf.log) {
      if (std::isfinite(rec.min_gap)) worst = std::min(worst, rec.min_gap);
    }
    names += std::string(name) + " ";
  }
  // the lattice route on a factor-driven model, kept small by the node budget
  ScenarioConfig cfg = scenario("factor_scalar");
  InfiniteOptions io = infinite_options(cfg);
  io.step = 0.125;
  io.schedule = {0.5, 1.0, 1.5, 2.0};
  io.override_stabilizability = true;
  io.tol = 1e-30;  // run the whole schedule
  try {
    const InfiniteRiccati inf = solve_infinite(validate(cfg), io);
    for (const auto& rec : inf.log) {
      if (std::isfinite(rec.min_gap)) worst = std::min(worst, rec.min_gap);
    }
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NoConvergence) throw;
  }
  names += "factor_scalar";
  report(4, worst >= -1e-8,
         "min lambda_min(P^N' - P^N) = " + fmt("%.2e", worst) + " over " + names);
}

void criterion_5() {
  bool pass = true;
  std::string detail;
  for (const char* name : {"scalar_are", "scalar_are_control_noise", "scalar_finite"}) {
    ScenarioConfig cfg = scenario(name);
    const CoefficientModel model = validate(cfg);
    const FiltrationLattice grid(10, 0.1, 1);
    const Matrix terminal = cfg.horizon.type == HorizonSpec::Type::Finite
                                ? cfg.horizon.terminal
                                : Matrix(Matrix::Zero(1, 1));
    const Stack s = solve(model, grid, terminal, Scheme::Exact, true);
    const Vector x = Vector::Ones(1);
    const Control zero = [](int, std::size_t, const Vector&) { return Vector(Vector::Zero(1)); };
    const FundamentalRelation fr =
        fundamental_relation_residual(model, s.riccati, s.dual, s.law, zero, x);
    const double tol = 5.0 * grid.step() * std::max(1.0, std::abs(fr.cost));
    const Control one = [](int, std::size_t, const Vector&) { return Vector(Vector::Ones(1)); };
    const auto sweep = epsilon_sweep(model, s.riccati, s.dual, s.law, x, one, {0.05, 0.1});
    double worst_ratio = 0.0;
    for (const auto& p : sweep) worst_ratio = std::max(worst_ratio, std::abs(p.ratio - 4.0));
    pass = pass && fr.gap <= tol && worst_ratio <= 0.08;
    detail += std::string(name) + ": gap " + fmt("%.2e", fr.gap) + "<=" + fmt("%.2e", tol) +
              " |ratio-4| " + fmt("%.1e", worst_ratio) + "; ";
  }
  report(5, pass, detail);
}

void criterion_6() {
  // bound on the noisy benchmark: its closed loop lives on the full tree, so depth stays <= 16
  const ScenarioConfig cfg = scenario("scalar_finite");
  const CoefficientModel model = validate(cfg);
  bool bounded = true;
  double exact_worst = 0.0, implicit_worst_ratio = 0.0;
  for (int L : {4, 8, 16}) {
    const FiltrationLattice grid(L, cfg.horizon.T / L, 1);
    for (Scheme scheme : {Scheme::Exact, Scheme::Implicit}) {
      const Stack s = solve(model, grid, cfg.horizon.terminal, scheme, true);
      const double res = hamiltonian_residual(model, s.riccati, s.dual, s.law, cfg.x0).max_residual;
      bounded = bounded && res <= 5.0 * grid.step();
      if (scheme == Scheme::Exact) exact_worst = std::max(exact_worst, res);
      else implicit_worst_ratio = std::max(implicit_worst_ratio, res / grid.step());
    }
  }
  // halving in the asymptotic range, on the noise-free scalar benchmark where
  // the closed loop is a single path and fine steps are affordable
  const ScenarioConfig acfg = scenario("scalar_are");
  const CoefficientModel amodel = validate(acfg);
  std::vector<double> implicit;
  for (int L : {32, 64, 128, 256}) {
    const FiltrationLattice grid(L, 1.0 / L, 1);
    const Stack s = solve(amodel, grid, Matrix::Identity(1, 1), Scheme::Implicit, true);
    const double res = hamiltonian_residual(amodel, s.riccati, s.dual, s.law, acfg.x0).max_residual;
    bounded = bounded && res <= 5.0 * grid.step();
    implicit.push_back(res);
  }
  const double slope = min_slope(implicit);
  report(6, bounded && slope >= 0.9,
         "residual <= 5*step everywhere (exact max " + fmt("%.1e", exact_worst) +
             ", implicit max residual/step " + fmt("%.3f", implicit_worst_ratio) +
             "); implicit halving slope " + fmt("%.3f", slope) + " over steps 1/32..1/256");
}

void criterion_7() {
  const ScenarioConfig cfg = scenario("scalar_finite");
  const CoefficientModel model = validate(cfg);
  const FiltrationLattice grid(10, cfg.horizon.T / 10, 1);
  const Stack s = solve(model, grid, cfg.horizon.terminal, Scheme::Exact, false);
  const VectorField eta = AdaptedField<Vector>::compact(10, Vector(Vector::Ones(1)));
  const DualityTerms t =
      duality_residual(s.dual, model, s.law.quadratic, s.riccati, eta, cfg.x0);
  report(7, t.residual <= 1e-3,
         "depth 10 residual " + fmt("%.2e", t.residual) + " (lhs " + fmt("%.6f", t.lhs) +
             ") tol 1e-3");
}

void criterion_8() {
  const ScenarioConfig cfg = scenario("scalar_are");
  const CoefficientModel model = validate(cfg);
  const InfiniteRiccati inf = solve_infinite(model, infinite_options(cfg));
  McSpec mc;
  mc.paths = 10000;
  mc.seed = 2024;
  const SimGrid grid{100, 0.01, 0};
  const DecayEstimate est = closed_loop_decay(feedback_dynamics(feedback_quadratic(inf.solution, model)),
                                              Vector::Ones(1), grid, mc, 1);
  const double oracle = 2.0 * std::sqrt(2.0);
  const bool ok1 = std::abs(est.a_hat - oracle) <= 0.05 * oracle && est.r2 >= 0.99;

  const ScenarioConfig dcfg = scenario("dissipative");
  const CoefficientModel dmodel = validate(dcfg);
  const double margin =
      dissipativity_margin(dmodel, evaluation_points(dmodel, dcfg.lattice_grid()));
  const InfiniteRiccati dinf = solve_infinite(dmodel, infinite_options(dcfg));
  const DecayEstimate dest =
      closed_loop_decay(feedback_dynamics(feedback_quadratic(dinf.solution, dmodel)),
                        Vector::Ones(1), grid, mc, 1);
  const bool ok2 = dest.a_hat >= 2.0 * margin * 0.9;
  report(8, ok1 && ok2,
         "scalar a_hat " + fmt("%.4f", est.a_hat) + " vs 2sqrt2=" + fmt("%.4f", oracle) +
             " R2 " + fmt("%.4f", est.r2) + "; dissipative a_hat " + fmt("%.4f", dest.a_hat) +
             " >= 0.9*2*" + fmt("%.3f", margin));
}

void criterion_9() {
  const ScenarioConfig cfg = scenario("dissipative");
  const CoefficientModel model = validate(cfg);
  const InfiniteOptions io = infinite_options(cfg);
  const InfiniteRiccati inf = solve_infinite(model, io);
  const FeedbackQuadratic fb = feedback_quadratic(inf.solution, model);
  InfiniteDualOptions dopt;
  dopt.tol = cfg.horizon.tol;
  dopt.decay_certificate = closed_loop_decay_exact(fb, Vector::Ones(1), fb.lattice.depth()).a_hat;
  const InfiniteDual dual = solve_dual_infinite(model, inf, io, dopt);
  std::string bounds;
  for (const auto& rec : dual.log) bounds += fmt("%.4f", rec.max_abs_r) + " ";
  const auto& m = dual.second_moment;
  const bool toward_zero = !m.empty() && m[m.size() / 2] <= 1e-3 * m.front();
  report(9, dual.bound_nonincreasing && dual.second_moment_decreasing && toward_zero,
         "max|r^N| along schedule: " + bounds + (dual.bound_nonincreasing ? "(non-increasing)" : "(increasing)") +
             "; E|r_T|^2 decreasing " + (dual.second_moment_decreasing ? "yes" : "no") +
             " from " + fmt("%.3e", m.front()) + " to " + fmt("%.3e", m[m.size() / 2]) +
             " at mid-window");
}

void criterion_10() {
  const std::vector<double> alphas{0.4, 0.2, 0.1, 0.05};
  auto family = [&](const std::string& name) {
    const ScenarioConfig cfg = scenario(name);
    const CoefficientModel model = validate(cfg);
    ErgodicOptions eo;
    eo.riccati = infinite_options(cfg);
    eo.tol = cfg.horizon.tol;
    eo.window = cfg.horizon.N0;
    eo.mc = cfg.mc;
    const std::vector<Vector> xs{cfg.x0, Vector(cfg.x0 + Vector::Ones(1))};
    return solve_discounted_family(model, alphas, xs, eo);
  };
  std::string detail;
  bool pass = true;
  bool gaps = true;

  const ErgodicReport zero = family("ergodic_zero");
  const ErgodicLimit lz = ergodic_limit(zero);
  pass = pass && std::abs(lz.limit) <= 1e-8;
  gaps = gaps && zero.P_gap_decreasing && zero.r_gap_decreasing;
  detail += "f=0 limit " + fmt("%.1e", lz.limit) + "; ";

  const ErgodicReport dec = family("ergodic_decaying");
  const ErgodicLimit ld = ergodic_limit(dec);
  pass = pass && std::abs(ld.limit) <= ld.error_bar;
  gaps = gaps && dec.P_gap_decreasing && dec.r_gap_decreasing;
  detail += "e^-t limit " + fmt("%.2e", ld.limit) + " bar " + fmt("%.2e", ld.error_bar) + "; ";

  const ScenarioConfig pcfg = scenario("ergodic_persistent");
  const CoefficientModel pmodel = validate(pcfg);
  const ErgodicReport per = family("ergodic_persistent");
  const ErgodicLimit lp = ergodic_limit(per);
  const AverageCost avg = average_cost_oracle(pmodel, pcfg.x0, 400.0, 0.01);
  // the discounted functional weights e^{-2 alpha t}: alpha*J tends to half the average
  const double target = 0.5 * avg.average;
  pass = pass && std::abs(lp.limit - target) <= 0.05 * std::abs(target);
  gaps = gaps && per.P_gap_decreasing && per.r_gap_decreasing;
  detail += "f=1 limit " + fmt("%.4f", lp.limit) + " vs avg/2 " + fmt("%.4f", target) + "; ";

  std::vector<double> residuals;
  McSpec mc;
  mc.paths = 2000;
  mc.seed = 99;
  const Policy policy = [](const PathContext&, const Vector& x) { return Vector(-0.5 * x); };
  for (double step : {0.04, 0.02, 0.01, 0.005}) {
    const SimGrid grid{static_cast<int>(std::lround(2.0 / step)), step, 0};
    residuals.push_back(
        scaling_identity_check(pmodel, policy, Vector::Ones(1), 0.2, grid, mc).residual);
  }
  const double slope = min_slope(residuals);
  pass = pass && slope >= 0.9 && gaps;
  detail += "scaling residual slope " + fmt("%.3f", slope) + "; gaps decreasing " +
            (gaps ? "yes" : "no");
  report(10, pass, detail);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void criterion_11() {
  const fs::path base = fs::temp_directory_path() / "stochlq_acceptance_repro";
  const std::string dir = STOCHLQ_SCENARIO_DIR;
  const std::vector<std::vector<std::string>> runs = {
      {"validate", dir + "/factor_scalar.json"},
      {"riccati-finite", dir + "/factor_scalar.json"},
      {"riccati-infinite", dir + "/dissipative.json"},
      {"dual", dir + "/dissipative.json"},
      {"synthesize", dir + "/matrix_2x2.json"},
      {"simulate", dir + "/factor_scalar.json"},
      {"verify", dir + "/scalar_finite.json"},
      {"ergodic", dir + "/ergodic_persistent.json"}};
  const std::vector<int> workers{1, std::max(4, max_workers())};
  bool identical = true;
  std::string detail;
  for (const auto& r : runs) {
    std::vector<std::string> outputs;
    for (int w : workers) {
      for (int rep = 0; rep < 2; ++rep) {
        const fs::path out = base / (r[0] + "_" + std::to_string(w) + "_" + std::to_string(rep));
        std::vector<std::string> args{"stochlq",  r[0],       r[1], "--out", out.string(),
                                      "--workers", std::to_string(w)};
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream sink_out, sink_err;
        const int code = run_cli(static_cast<int>(argv.size()), argv.data(), sink_out, sink_err);
        if (code != 0) {
          identical = false;
          detail += r[0] + " exit " + std::to_string(code) + " ";
        }
        outputs.push_back(read_file(out / "summary.json"));
      }
    }
    for (const auto& o : outputs) {
      if (o != outputs.front() || o.empty()) {
        identical = false;
        detail += r[0] + " differs ";
        break;
      }
    }
  }
  default_workers() = 1;
  std::error_code ec;
  fs::remove_all(base, ec);
  report(11, identical,
         "8 subcommands x workers {1," + std::to_string(workers[1]) + "} x 2 repeats: " +
             (identical ? "bitwise identical summaries" : detail));
}

}  // namespace

int main() {
  const std::vector<std::function<void()>> criteria = {
      criterion_1, criterion_2, criterion_3, criterion_4,  criterion_5, criterion_6,
      criterion_7, criterion_8, criterion_9, criterion_10, criterion_11};
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    try {
      criteria[i]();
    } catch (const std::exception& e) {
      report(static_cast<int>(i + 1), false, std::string("threw ") + e.what());
    }
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
