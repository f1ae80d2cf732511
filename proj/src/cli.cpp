#include "stochlq/cli.hpp"

#include "stochlq/config.hpp"
#include "stochlq/dual.hpp"
#include "stochlq/ergodic.hpp"
#include "stochlq/error.hpp"
#include "stochlq/parallel.hpp"
#include "stochlq/report.hpp"
#include "stochlq/riccati.hpp"
#include "stochlq/simulate.hpp"
#include "stochlq/synthesis.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <optional>
#include <sstream>

#ifndef STOCHLQ_VERSION
#define STOCHLQ_VERSION "dev"
#endif

namespace stochlq {

namespace {

using nlohmann::json;

struct Flags {
  std::string config;
  std::string out;
  bool json = false;
  int workers = 1;
  std::optional<double> tol;
  std::optional<int> depth;
  std::optional<std::string> scheme;
  std::string policy = "feedback";
  std::optional<int> paths;
  std::optional<std::uint64_t> seed;
  std::vector<double> alphas;
  std::vector<std::string> x0_pair;
  std::string horizon;
  bool check_duality = false;
  std::size_t export_paths = 100;
};

struct Run {
  ScenarioConfig cfg;
  CoefficientModel model;
  json summary = json::object();
  std::vector<std::pair<std::string, std::string>> files;
  bool breach = false;
};

InfiniteOptions infinite_options(const ScenarioConfig& cfg) {
  InfiniteOptions o;
  o.tol = cfg.horizon.tol;
  o.schedule = cfg.horizon.schedule;
  o.N0 = cfg.horizon.N0;
  o.max_N = cfg.horizon.max_N;
  o.override_stabilizability = cfg.horizon.override_stabilizability;
  o.step = cfg.lattice.step;
  o.scheme = cfg.lattice.scheme;
  o.memory_budget = cfg.lattice.memory_budget;
  return o;
}

Vector probe_state(const ScenarioConfig& cfg) {
  return cfg.x0.isZero(0.0) ? Vector(Vector::Ones(cfg.dims.n)) : cfg.x0;
}

struct Finite {
  RiccatiSolution riccati;
  DualSolution dual;
  FeedbackLaw law;
};

Finite solve_finite(const Run& run) {
  const ScenarioConfig& cfg = run.cfg;
  const FiltrationLattice grid = cfg.lattice_grid();
  Finite f;
  if (cfg.lattice.scheme == Scheme::Continuous) {
    if (!run.model.is_deterministic()) {
      throw Error(ErrorKind::ConfigError, "the continuous scheme needs deterministic coefficients",
                  "lattice.scheme");
    }
    f.riccati = solve_finite_deterministic(run.model, grid, cfg.horizon.terminal);
  } else {
    LatticeOptions lo;
    lo.scheme = cfg.lattice.scheme;
    lo.compact = run.model.is_deterministic();
    lo.fixed_point_tol = cfg.tolerance("fixed_point", 1e-12);
    f.riccati = solve_finite_lattice(run.model, grid, cfg.horizon.terminal, lo);
  }
  const FeedbackQuadratic fb = feedback_quadratic(f.riccati, run.model);
  f.dual = solve_dual_finite(run.model, fb, f.riccati);
  f.law = assemble_feedback(f.riccati, f.dual, run.model);
  return f;
}

DecayEstimate decay_of(const ScenarioConfig& cfg, const FeedbackQuadratic& fb) {
  const Vector x = probe_state(cfg);
  if (fb.H.is_compact()) return closed_loop_decay_exact(fb, x, fb.lattice.depth());
  McSpec mc = cfg.mc;
  mc.mode = McSpec::Mode::Bernoulli;
  const SimGrid g{fb.lattice.depth(), fb.lattice.step(), 0};
  return closed_loop_decay(feedback_dynamics(fb), x, g, mc, cfg.dims.d);
}

json riccati_json(const RiccatiSolution& sol) {
  return json{{"scheme", to_string(sol.scheme)},
              {"depth", sol.depth()},
              {"step", sol.step()},
              {"compact", sol.is_compact()},
              {"P0", matrix_to_json(sol.P.at(0, 0))},
              {"gain0", matrix_to_json(sol.gain.at(0, 0))},
              {"min_eigenvalue", sol.min_eigenvalue},
              {"clipped", sol.clipped}};
}

json dual_json(const DualSolution& dual) {
  return json{{"scheme", to_string(dual.scheme)},
              {"r0", vector_to_json(dual.r.at(0, 0))},
              {"affine0", vector_to_json(dual.affine.at(0, 0))},
              {"coupling0", dual.coupling.at(0, 0)},
              {"correction0", dual.correction.at(0, 0)},
              {"max_abs_r", dual.max_abs_r}};
}

template <typename Fn>
std::string csv(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

// ---------------------------------------------------------------------------

void cmd_validate(Run& run, const Flags&) {
  const auto& m = run.model;
  run.summary["valid"] = true;
  run.summary["dims"] = json{{"n", m.dims.n}, {"k", m.dims.k}, {"d", m.dims.d}};
  run.summary["kind"] = to_string(m.kind());
  run.summary["noise_free"] = m.is_noise_free();
  run.summary["forcing_zero"] = m.forcing_is_zero();
  run.summary["evaluation_points"] =
      evaluation_points(m, run.cfg.lattice_grid()).size();
}

void cmd_riccati_finite(Run& run, const Flags&) {
  const Finite f = solve_finite(run);
  run.summary["riccati"] = riccati_json(f.riccati);
  run.files.emplace_back("riccati.csv", csv([&](std::ostream& os) { write_riccati_csv(os, f.riccati); }));
}

void cmd_riccati_infinite(Run& run, const Flags&) {
  const InfiniteOptions io = infinite_options(run.cfg);
  const InfiniteRiccati inf = solve_infinite(run.model, io);
  json log = json::array();
  bool monotone = true;
  for (const auto& rec : inf.log) {
    log.push_back(json{{"N", rec.N},
                       {"sup_diff", std::isfinite(rec.sup_diff) ? json(rec.sup_diff) : json(nullptr)},
                       {"min_gap", std::isfinite(rec.min_gap) ? json(rec.min_gap) : json(nullptr)}});
    if (std::isfinite(rec.min_gap) && rec.min_gap < -1e-8) monotone = false;
  }
  run.summary["riccati"] = riccati_json(inf.solution);
  run.summary["N_used"] = inf.N_used;
  run.summary["window"] = inf.window;
  run.summary["margin"] = inf.margin;
  run.summary["on_lattice"] = inf.on_lattice;
  run.summary["monotone"] = monotone;
  run.summary["log"] = log;
  run.files.emplace_back("riccati.csv",
                         csv([&](std::ostream& os) { write_riccati_csv(os, inf.solution); }));
}

void cmd_dual(Run& run, const Flags& flags) {
  const bool infinite = flags.horizon.empty()
                            ? run.cfg.horizon.type != HorizonSpec::Type::Finite
                            : flags.horizon == "infinite";
  if (!infinite) {
    const Finite f = solve_finite(run);
    run.summary["horizon"] = "finite";
    run.summary["dual"] = dual_json(f.dual);
    if (flags.check_duality) {
      const int L = f.riccati.depth();
      const VectorField eta =
          AdaptedField<Vector>::compact(L, Vector(Vector::Ones(run.cfg.dims.n)));
      const DualityTerms t = duality_residual(f.dual, run.model, f.law.quadratic, f.riccati, eta,
                                              run.cfg.x0);
      const double tol = run.cfg.tolerance("duality", 1e-3);
      run.summary["duality"] = json{{"lhs", t.lhs},
                                    {"forcing_term", t.forcing_term},
                                    {"eta_term", t.eta_term},
                                    {"residual", t.residual},
                                    {"tolerance", tol},
                                    {"pass", t.residual <= tol}};
      if (!(t.residual <= tol)) run.breach = true;
    }
    run.files.emplace_back("dual.csv", csv([&](std::ostream& os) { write_dual_csv(os, f.dual); }));
    return;
  }
  const InfiniteOptions io = infinite_options(run.cfg);
  const InfiniteRiccati inf = solve_infinite(run.model, io);
  const DecayEstimate decay = decay_of(run.cfg, feedback_quadratic(inf.solution, run.model));
  InfiniteDualOptions dopt;
  dopt.tol = run.cfg.horizon.tol;
  dopt.decay_certificate = decay.a_hat;
  const InfiniteDual dual = solve_dual_infinite(run.model, inf, io, dopt);
  json log = json::array();
  for (const auto& rec : dual.log) {
    log.push_back(json{{"N", rec.N},
                       {"max_abs_r", rec.max_abs_r},
                       {"sup_diff", std::isfinite(rec.sup_diff) ? json(rec.sup_diff) : json(nullptr)}});
  }
  run.summary["horizon"] = "infinite";
  run.summary["decay"] = to_json(decay);
  run.summary["dual"] = dual_json(dual.solution);
  run.summary["N_used"] = dual.N_used;
  run.summary["window"] = dual.window;
  run.summary["bound_nonincreasing"] = dual.bound_nonincreasing;
  run.summary["uniform_bound"] = dual.uniform_bound;
  run.summary["second_moment_decreasing"] = dual.second_moment_decreasing;
  run.summary["second_moment"] = dual.second_moment;
  run.summary["log"] = log;
  run.files.emplace_back("dual.csv",
                         csv([&](std::ostream& os) { write_dual_csv(os, dual.solution); }));
}

void cmd_synthesize(Run& run, const Flags&) {
  const Finite f = solve_finite(run);
  const CostPrediction pred = predicted_cost(run.model, f.riccati, f.dual, f.law, run.cfg.x0);
  run.summary["riccati"] = riccati_json(f.riccati);
  run.summary["dual"] = dual_json(f.dual);
  run.summary["predicted"] = to_json(pred);
  run.files.emplace_back("feedback.csv",
                         csv([&](std::ostream& os) { write_feedback_csv(os, f.law); }));
}

void cmd_simulate(Run& run, const Flags& flags) {
  const ScenarioConfig& cfg = run.cfg;
  McSpec mc = cfg.mc;
  if (flags.paths) mc.paths = *flags.paths;
  if (flags.seed) mc.seed = *flags.seed;
  const FiltrationLattice grid = cfg.lattice_grid();
  Policy policy;
  SimGrid sg{grid.depth(), grid.step(), 0};
  std::optional<CostPrediction> prediction;
  if (flags.policy == "zero") {
    policy = zero_policy(cfg.dims.k);
    sg.step = mc.time_step;
    sg.steps = static_cast<int>(std::lround(grid.horizon() / mc.time_step));
  } else if (flags.policy == "feedback" || flags.policy == "openloop") {
    const Finite f = solve_finite(run);
    prediction = predicted_cost(run.model, f.riccati, f.dual, f.law, cfg.x0);
    if (flags.policy == "feedback") {
      policy = feedback_policy(f.law);
    } else {
      const bool single = single_path_ok(run.model, f.riccati) && f.dual.is_compact();
      const LatticePath path = evolve(
          run.model, grid, cfg.x0,
          [&](int l, std::size_t i, const Vector& X) { return f.law.control(l, i, X); }, single);
      policy = open_loop_policy(grid, path.u);
    }
  } else {
    throw Error(ErrorKind::ConfigError, "unknown policy '" + flags.policy + "'", "--policy");
  }
  const PathBatch batch = simulate(run.model, policy, cfg.x0, sg, mc);
  CostOptions co;
  co.finite = cfg.horizon.type == HorizonSpec::Type::Finite;
  co.terminal = cfg.horizon.terminal;
  if (cfg.horizon.type == HorizonSpec::Type::Discounted && !cfg.horizon.alphas.empty()) {
    co.alpha = cfg.horizon.alphas.front();
  }
  CostReport cost = evaluate_cost(batch, run.model, co);
  if (prediction && co.finite) attach_prediction(cost, *prediction);
  run.summary["policy"] = flags.policy;
  run.summary["paths"] = mc.paths;
  run.summary["seed"] = mc.seed;
  run.summary["mode"] = mc.mode == McSpec::Mode::Bernoulli ? "bernoulli" : "normal";
  run.summary["steps"] = sg.steps;
  run.summary["step"] = sg.step;
  run.summary["cost"] = to_json(cost);
  json mean_final = json::array();
  for (Eigen::Index i = 0; i < cfg.dims.n; ++i) {
    double acc = 0.0;
    for (const auto& X : batch.X) acc += X(i, sg.steps);
    mean_final.push_back(acc / static_cast<double>(batch.paths));
  }
  run.summary["mean_final_state"] = mean_final;
  run.files.emplace_back("trajectories.csv", csv([&](std::ostream& os) {
                           write_trajectory_csv(os, batch, flags.export_paths);
                         }));
}

void cmd_verify(Run& run, const Flags&) {
  const ScenarioConfig& cfg = run.cfg;
  const Finite f = solve_finite(run);
  const FiltrationLattice& grid = f.riccati.lattice;
  const double dt = grid.step();
  const int L = grid.depth();
  json checks = json::array();
  auto record = [&](const std::string& name, double value, double tol, json extra = json::object()) {
    const bool pass = value <= tol;
    extra["name"] = name;
    extra["value"] = value;
    extra["tolerance"] = tol;
    extra["pass"] = pass;
    checks.push_back(extra);
    if (!pass) run.breach = true;
  };

  if (f.riccati.scheme != Scheme::Continuous) {
    const DpValue dp = bellman_dp_oracle(run.model, grid, f.riccati.terminal);
    double gP = 0.0, gr = 0.0, gc = 0.0;
    for (int l = 0; l <= L; ++l) {
      const std::size_t count = f.riccati.is_compact() ? 1 : grid.nodes(l);
      for (std::size_t i = 0; i < count; ++i) {
        gP = std::max(gP, (dp.P.at(l, i) - f.riccati.P.at(l, i)).cwiseAbs().maxCoeff());
        gr = std::max(gr, (dp.r.at(l, i) - f.dual.r.at(l, i)).cwiseAbs().maxCoeff());
        gc = std::max(gc, std::abs(dp.c.at(l, i) - f.dual.constant(l, i)));
      }
    }
    const double tol = cfg.tolerance("dp", f.riccati.scheme == Scheme::Exact ? 1e-10 : 10.0 * dt);
    record("dp_oracle", std::max(gP, gr), tol, json{{"P_gap", gP}, {"r_gap", gr}, {"c_gap", gc}});
  }

  const HamiltonianReport ham = hamiltonian_residual(run.model, f.riccati, f.dual, f.law, cfg.x0);
  record("hamiltonian", ham.max_residual, cfg.tolerance("hamiltonian", 5.0 * dt),
         json{{"control_residual", ham.max_control_residual}});

  const int k = cfg.dims.k;
  const Control zero = [k](int, std::size_t, const Vector&) { return Vector(Vector::Zero(k)); };
  const FundamentalRelation fr =
      fundamental_relation_residual(run.model, f.riccati, f.dual, f.law, zero, cfg.x0);
  record("fundamental_relation", fr.gap,
         cfg.tolerance("fundamental", 5.0 * dt * std::max(1.0, std::abs(fr.cost))),
         json{{"cost", fr.cost}, {"predicted", fr.predicted}, {"penalty", fr.penalty}});

  const Control ones = [k](int, std::size_t, const Vector&) { return Vector(Vector::Ones(k)); };
  const auto sweep =
      epsilon_sweep(run.model, f.riccati, f.dual, f.law, cfg.x0, ones, {0.05, 0.1});
  for (const auto& p : sweep) {
    record("epsilon_sweep_" + std::to_string(p.epsilon).substr(0, 4), std::abs(p.ratio - 4.0),
           cfg.tolerance("sweep", 0.08), json{{"epsilon", p.epsilon}, {"ratio", p.ratio}});
  }

  const VectorField eta = AdaptedField<Vector>::compact(L, Vector(Vector::Ones(cfg.dims.n)));
  const DualityTerms dt_terms =
      duality_residual(f.dual, run.model, f.law.quadratic, f.riccati, eta, cfg.x0);
  record("duality", dt_terms.residual, cfg.tolerance("duality", 1e-3));

  record("riccati_positivity", -f.riccati.min_eigenvalue, 1e-8);

  const CostPrediction pred = predicted_cost(run.model, f.riccati, f.dual, f.law, cfg.x0);
  run.summary["checks"] = checks;
  run.summary["predicted"] = to_json(pred);
  run.summary["scheme"] = to_string(f.riccati.scheme);
  run.summary["step"] = dt;
  run.summary["pass"] = !run.breach;
}

Vector parse_state(const std::string& text, int n) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      vals.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, "cannot parse '" + item + "' as a number", "--x0-pair");
    }
  }
  if (static_cast<int>(vals.size()) != n) {
    throw Error(ErrorKind::BadDimensions, "initial state needs " + std::to_string(n) + " entries",
                "--x0-pair");
  }
  return Eigen::Map<Vector>(vals.data(), n);
}

void cmd_ergodic(Run& run, const Flags& flags) {
  const ScenarioConfig& cfg = run.cfg;
  std::vector<double> alphas = flags.alphas.empty() ? cfg.horizon.alphas : flags.alphas;
  if (alphas.empty()) alphas = {0.4, 0.2, 0.1, 0.05};
  std::vector<Vector> xs;
  if (!flags.x0_pair.empty()) {
    for (const auto& s : flags.x0_pair) xs.push_back(parse_state(s, cfg.dims.n));
  } else {
    xs = {cfg.x0, Vector(cfg.x0 + Vector::Ones(cfg.dims.n))};
  }
  ErgodicOptions eo;
  eo.riccati = infinite_options(cfg);
  eo.tol = cfg.horizon.tol;
  eo.window = std::max(cfg.lattice.step, cfg.horizon.N0);
  eo.mc = cfg.mc;
  eo.mc.mode = McSpec::Mode::Bernoulli;
  const ErgodicReport report = solve_discounted_family(run.model, alphas, xs, eo);
  run.summary["report"] = to_json(report);
  if (report.rows.size() >= 3) {
    run.summary["limit"] = to_json(ergodic_limit(report));
  } else {
    run.summary["limit"] = nullptr;
    run.summary["note"] = "fewer than 3 alphas: no extrapolation";
  }
  run.files.emplace_back("ergodic.csv",
                         csv([&](std::ostream& os) { write_ergodic_csv(os, report); }));
}

using Command = std::function<void(Run&, const Flags&)>;

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Affine LQ stochastic control with random coefficients", "stochlq"};
  app.set_version_flag("--version", std::string(STOCHLQ_VERSION));
  app.require_subcommand(1);
  Flags flags;

  const std::vector<std::pair<std::string, std::string>> names = {
      {"validate", "check a scenario file"},
      {"riccati-finite", "backward Riccati solve on [0, T]"},
      {"riccati-infinite", "minimal solution via the horizon schedule"},
      {"dual", "costate equation (finite or infinite horizon)"},
      {"synthesize", "feedback law and predicted cost"},
      {"simulate", "Monte Carlo paths and cost estimate"},
      {"verify", "optimality residual suite"},
      {"ergodic", "discounted family and vanishing-discount limit"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : names) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("config", flags.config, "scenario JSON file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", flags.out, "output directory");
    sub->add_flag("--json", flags.json, "print the summary JSON to stdout");
    sub->add_option("--workers", flags.workers, "worker threads (0 = all cores)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--depth", flags.depth, "lattice depth")->check(CLI::PositiveNumber);
    sub->add_option("--scheme", flags.scheme, "explicit|implicit|exact|continuous");
    sub->add_option("--tol", flags.tol, "convergence tolerance")->check(CLI::PositiveNumber);
    subs[name] = sub;
  }
  subs["simulate"]->add_option("--policy", flags.policy, "zero|openloop|feedback")
      ->check(CLI::IsMember({"zero", "openloop", "feedback"}));
  subs["simulate"]->add_option("--paths", flags.paths, "number of paths")->check(CLI::PositiveNumber);
  subs["simulate"]->add_option("--seed", flags.seed, "RNG seed");
  subs["simulate"]->add_option("--export-paths", flags.export_paths, "paths written to CSV");
  subs["dual"]->add_option("--horizon", flags.horizon, "finite|infinite")
      ->check(CLI::IsMember({"finite", "infinite"}));
  subs["dual"]->add_flag("--check-duality", flags.check_duality, "evaluate the duality relation");
  subs["ergodic"]->add_option("--alphas", flags.alphas, "discount grid, decreasing")->delimiter(',');
  subs["ergodic"]->add_option("--x0-pair", flags.x0_pair, "two initial states, comma separated")
      ->expected(2);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  const std::map<std::string, Command> commands = {
      {"validate", cmd_validate},       {"riccati-finite", cmd_riccati_finite},
      {"riccati-infinite", cmd_riccati_infinite}, {"dual", cmd_dual},
      {"synthesize", cmd_synthesize},   {"simulate", cmd_simulate},
      {"verify", cmd_verify},           {"ergodic", cmd_ergodic}};

  const auto started = std::chrono::steady_clock::now();
  try {
    default_workers() = flags.workers == 0 ? max_workers() : flags.workers;
    Run run;
    run.cfg = load_config(flags.config);
    json overrides = json::object();
    if (flags.depth) {
      run.cfg.lattice.depth = *flags.depth;
      overrides["depth"] = *flags.depth;
    }
    if (flags.scheme) {
      run.cfg.lattice.scheme = parse_scheme(*flags.scheme);
      overrides["scheme"] = *flags.scheme;
    }
    if (flags.tol) {
      run.cfg.horizon.tol = *flags.tol;
      run.cfg.tolerances["fixed_point"] = *flags.tol;
      overrides["tol"] = *flags.tol;
    }
    if (command == "simulate") {
      overrides["policy"] = flags.policy;
      if (flags.paths) overrides["paths"] = *flags.paths;
    }
    if (command == "dual") {
      overrides["horizon"] = flags.horizon;
      overrides["check_duality"] = flags.check_duality;
    }
    if (command == "ergodic") {
      overrides["alphas"] = flags.alphas;
      overrides["x0_pair"] = flags.x0_pair;
    }
    run.model = validate(run.cfg);

    commands.at(command)(run, flags);

    const std::uint64_t used_seed = flags.seed.value_or(run.cfg.mc.seed);
    RunManifest manifest;
    manifest.scenario_hash = scenario_hash(json{{"scenario", run.cfg.source}, {"overrides", overrides}});
    manifest.version = STOCHLQ_VERSION;
    manifest.subcommand = command;
    manifest.seed = used_seed;

    json summary = json::object();
    summary["subcommand"] = command;
    summary["scenario_hash"] = manifest.scenario_hash;
    summary["version"] = manifest.version;
    summary["seed"] = used_seed;
    summary["result"] = run.summary;
    const std::string summary_text = summary.dump(2) + "\n";

    const char* env_out = std::getenv("STOCHLQ_OUT_DIR");
    const std::filesystem::path dir =
        !flags.out.empty() ? flags.out : (env_out && *env_out ? env_out : "stochlq_out");
    manifest.outputs.push_back(write_file(dir, "summary.json", summary_text));
    for (const auto& [name, text] : run.files) {
      manifest.outputs.push_back(write_file(dir, name, text));
    }
    manifest.wall_clock =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    write_file(dir, "manifest.json", manifest.to_json().dump(2) + "\n");

    if (flags.json) out << summary_text;
    if (run.breach) {
      err << "verification tolerance breached; see " << (dir / "summary.json").string() << "\n";
      return 4;
    }
    return 0;
  } catch (const Error& e) {
    // what() already leads with the kind
    err << "error";
    if (!e.key().empty()) err << " at " << e.key();
    err << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace stochlq
