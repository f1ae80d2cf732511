#include "stochlq/config.hpp"

#include "stochlq/error.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace stochlq {

using nlohmann::json;

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::Explicit: return "explicit";
    case Scheme::Implicit: return "implicit";
    case Scheme::Exact: return "exact";
    case Scheme::Continuous: return "continuous";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "explicit") return Scheme::Explicit;
  if (name == "implicit") return Scheme::Implicit;
  if (name == "exact") return Scheme::Exact;
  if (name == "continuous") return Scheme::Continuous;
  throw Error(ErrorKind::ConfigError,
              "unknown scheme '" + std::string(name) + "' (explicit|implicit|exact|continuous)",
              "lattice.scheme");
}

namespace {

void check_keys(const json& j, const std::string& where, std::set<std::string> allowed) {
  if (!j.is_object()) throw Error(ErrorKind::ConfigError, where + " must be an object", where);
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) {
      throw Error(ErrorKind::ConfigError, "unknown key '" + k + "'",
                  where.empty() ? k : where + "." + k);
    }
  }
}

double number(const json& j, const std::string& key) {
  if (!j.is_number()) throw Error(ErrorKind::ConfigError, "expected a number", key);
  return j.get<double>();
}

double number_or(const json& parent, const char* name, double fallback, const std::string& where) {
  if (!parent.contains(name)) return fallback;
  return number(parent.at(name), where + "." + name);
}

int integer(const json& j, const std::string& key) {
  if (!j.is_number_integer() && !j.is_number_unsigned()) {
    throw Error(ErrorKind::ConfigError, "expected an integer", key);
  }
  return j.get<int>();
}

std::string text(const json& j, const std::string& key) {
  if (!j.is_string()) throw Error(ErrorKind::ConfigError, "expected a string", key);
  return j.get<std::string>();
}

/// Matrix of a given shape; flat arrays are accepted for row/column vectors.
Matrix shaped(const json& j, const std::string& key, int rows, int cols) {
  Matrix m = json_to_matrix(j, key);
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.cols() == 1 && rows == 1 && m.rows() == cols) return m.transpose();
  throw Error(ErrorKind::BadDimensions,
              "expected " + std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                  std::to_string(m.rows()) + "x" + std::to_string(m.cols()),
              key);
}

CoefficientProcess coefficient(const json& j, const std::string& key, int rows, int cols) {
  CoefficientProcess p;
  if (!j.is_object()) {
    p.base = shaped(j, key, rows, cols);
    return p;
  }
  check_keys(j, key, {"base", "time", "factor", "bound"});
  p.base = j.contains("base") ? shaped(j.at("base"), key + ".base", rows, cols)
                              : Matrix::Zero(rows, cols);
  if (j.contains("time")) {
    const json& t = j.at("time");
    const std::string tk = key + ".time";
    check_keys(t, tk, {"amp", "shape", "omega", "phase", "rate"});
    TimeTerm term;
    term.amp = shaped(t.at("amp"), tk + ".amp", rows, cols);
    const std::string shape = t.contains("shape") ? text(t.at("shape"), tk + ".shape") : "sin";
    if (shape == "sin") {
      term.shape = TimeTerm::Shape::Sine;
    } else if (shape == "exp") {
      term.shape = TimeTerm::Shape::Exp;
    } else {
      throw Error(ErrorKind::ConfigError, "shape must be sin or exp", tk + ".shape");
    }
    term.omega = number_or(t, "omega", 1.0, tk);
    term.phase = number_or(t, "phase", 0.0, tk);
    term.rate = number_or(t, "rate", 1.0, tk);
    if (term.shape == TimeTerm::Shape::Exp && term.rate < 0.0) {
      throw Error(ErrorKind::UnboundedCoefficient, "exp rate must be >= 0", tk + ".rate");
    }
    p.time = term;
  }
  if (j.contains("factor")) {
    const json& f = j.at("factor");
    const std::string fk = key + ".factor";
    check_keys(f, fk, {"amp", "source", "map", "component", "scale"});
    FactorTerm term;
    term.amp = shaped(f.at("amp"), fk + ".amp", rows, cols);
    const std::string source =
        f.contains("source") ? text(f.at("source"), fk + ".source") : "path_sum";
    if (source == "path_sum") {
      term.source = FactorTerm::Source::PathSum;
    } else if (source == "last_sign") {
      term.source = FactorTerm::Source::LastSign;
    } else {
      throw Error(ErrorKind::ConfigError, "source must be path_sum or last_sign", fk + ".source");
    }
    const std::string map = f.contains("map") ? text(f.at("map"), fk + ".map") : "tanh";
    if (map == "tanh") {
      term.map = FactorTerm::Map::Tanh;
    } else if (map == "clip") {
      term.map = FactorTerm::Map::Clip;
    } else {
      throw Error(ErrorKind::ConfigError, "map must be tanh or clip", fk + ".map");
    }
    term.component = f.contains("component") ? integer(f.at("component"), fk + ".component") : 0;
    term.scale = number_or(f, "scale", 1.0, fk);
    p.factor = term;
  }
  if (j.contains("bound")) p.declared_bound = number(j.at("bound"), key + ".bound");
  return p;
}

std::vector<double> number_list(const json& j, const std::string& key) {
  if (!j.is_array()) throw Error(ErrorKind::ConfigError, "expected an array", key);
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    out.push_back(number(j[i], key + "[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace

Matrix json_to_matrix(const json& j, const std::string& key) {
  if (j.is_number()) return Matrix::Constant(1, 1, j.get<double>());
  if (!j.is_array() || j.empty()) {
    throw Error(ErrorKind::ConfigError, "expected a number or a non-empty array", key);
  }
  if (!j[0].is_array()) {
    Matrix m(j.size(), 1);
    for (std::size_t i = 0; i < j.size(); ++i) {
      m(i, 0) = number(j[i], key + "[" + std::to_string(i) + "]");
    }
    return m;
  }
  const std::size_t cols = j[0].size();
  Matrix m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const std::string rk = key + "[" + std::to_string(r) + "]";
    if (!j[r].is_array() || j[r].size() != cols) {
      throw Error(ErrorKind::BadDimensions, "ragged matrix row", rk);
    }
    for (std::size_t c = 0; c < cols; ++c) {
      m(r, c) = number(j[r][c], rk + "[" + std::to_string(c) + "]");
    }
  }
  return m;
}

json matrix_to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    out.push_back(std::move(row));
  }
  return out;
}

double ScenarioConfig::tolerance(const std::string& name, double fallback) const {
  const auto it = tolerances.find(name);
  return it == tolerances.end() ? fallback : it->second;
}

double ScenarioConfig::step() const {
  if (horizon.type == HorizonSpec::Type::Finite) return horizon.T / lattice.depth;
  return lattice.step;
}

FiltrationLattice ScenarioConfig::lattice_grid() const {
  return FiltrationLattice(lattice.depth, step(), dims.d);
}

ScenarioConfig parse_config(const json& doc) {
  check_keys(doc, "", {"name", "description", "dims", "model", "x0", "horizon", "lattice",
                       "mc", "tolerances"});
  ScenarioConfig cfg;
  cfg.source = doc;

  if (!doc.contains("dims")) throw Error(ErrorKind::ConfigError, "missing key", "dims");
  const json& dims = doc.at("dims");
  check_keys(dims, "dims", {"n", "k", "d"});
  for (const char* name : {"n", "k", "d"}) {
    if (!dims.contains(name)) {
      throw Error(ErrorKind::ConfigError, "missing key", std::string("dims.") + name);
    }
  }
  cfg.dims.n = integer(dims.at("n"), "dims.n");
  cfg.dims.k = integer(dims.at("k"), "dims.k");
  cfg.dims.d = integer(dims.at("d"), "dims.d");
  if (cfg.dims.n < 1 || cfg.dims.k < 1 || cfg.dims.d < 1) {
    throw Error(ErrorKind::BadDimensions, "n, k and d must all be >= 1", "dims");
  }
  const int n = cfg.dims.n;
  const int k = cfg.dims.k;
  const int d = cfg.dims.d;

  if (!doc.contains("model")) throw Error(ErrorKind::ConfigError, "missing key", "model");
  const json& mj = doc.at("model");
  check_keys(mj, "model", {"A", "B", "C", "D", "S", "f", "ergodic", "epsilon"});
  CoefficientModel model = CoefficientModel::zero(cfg.dims);
  if (mj.contains("A")) model.A = coefficient(mj.at("A"), "model.A", n, n);
  if (mj.contains("B")) model.B = coefficient(mj.at("B"), "model.B", n, k);
  if (mj.contains("S")) model.S = coefficient(mj.at("S"), "model.S", n, n);
  for (const char* name : {"C", "D"}) {
    if (!mj.contains(name)) continue;
    const json& fam = mj.at(name);
    const std::string key = std::string("model.") + name;
    if (!fam.is_array() || static_cast<int>(fam.size()) != d) {
      throw Error(ErrorKind::BadDimensions,
                  "expected a list of " + std::to_string(d) + " coefficients (one per dW)", key);
    }
    auto& target = name[0] == 'C' ? model.C : model.D;
    const int cols = name[0] == 'C' ? n : k;
    for (int i = 0; i < d; ++i) {
      target[i] = coefficient(fam[i], key + "[" + std::to_string(i) + "]", n, cols);
    }
  }
  if (mj.contains("f")) {
    const json& fj = mj.at("f");
    if (fj.is_object() && (fj.contains("integrability") || fj.contains("rate"))) {
      json inner = fj;
      if (fj.contains("integrability")) {
        const std::string tag = text(fj.at("integrability"), "model.f.integrability");
        if (tag == "bounded") {
          model.forcing.integrability = Integrability::FiniteHorizonBounded;
        } else if (tag == "decaying") {
          model.forcing.integrability = Integrability::SquareIntegrableDecaying;
        } else {
          throw Error(ErrorKind::ConfigError, "integrability must be bounded or decaying",
                      "model.f.integrability");
        }
        inner.erase("integrability");
      }
      if (fj.contains("rate")) {
        model.forcing.decay_rate = number(fj.at("rate"), "model.f.rate");
        inner.erase("rate");
      }
      model.forcing.f = coefficient(inner, "model.f", n, 1);
    } else {
      model.forcing.f = coefficient(fj, "model.f", n, 1);
    }
    if (model.forcing.integrability == Integrability::SquareIntegrableDecaying &&
        !(model.forcing.decay_rate > 0.0) && !model.forcing_is_zero()) {
      throw Error(ErrorKind::ConfigError, "decaying forcing needs a rate > 0", "model.f.rate");
    }
  }
  if (mj.contains("ergodic")) {
    if (!mj.at("ergodic").is_boolean()) {
      throw Error(ErrorKind::ConfigError, "expected true/false", "model.ergodic");
    }
    model.ergodic = mj.at("ergodic").get<bool>();
  }
  model.ergodic_epsilon = number_or(mj, "epsilon", 0.0, "model");
  cfg.model = std::move(model);

  cfg.x0 = doc.contains("x0") ? Vector(shaped(doc.at("x0"), "x0", n, 1)) : Vector::Zero(n);

  if (doc.contains("horizon")) {
    const json& h = doc.at("horizon");
    check_keys(h, "horizon",
               {"type", "T", "terminal", "tol", "max_N", "schedule", "N0", "override", "alphas"});
    const std::string type = h.contains("type") ? text(h.at("type"), "horizon.type") : "finite";
    if (type == "finite") {
      cfg.horizon.type = HorizonSpec::Type::Finite;
    } else if (type == "infinite") {
      cfg.horizon.type = HorizonSpec::Type::InfiniteApprox;
    } else if (type == "discounted") {
      cfg.horizon.type = HorizonSpec::Type::Discounted;
    } else {
      throw Error(ErrorKind::ConfigError, "type must be finite, infinite or discounted",
                  "horizon.type");
    }
    cfg.horizon.T = number_or(h, "T", 1.0, "horizon");
    if (!(cfg.horizon.T > 0.0)) throw Error(ErrorKind::ConfigError, "T must be > 0", "horizon.T");
    cfg.horizon.terminal = h.contains("terminal") ? shaped(h.at("terminal"), "horizon.terminal", n, n)
                                                  : Matrix::Zero(n, n);
    cfg.horizon.tol = number_or(h, "tol", 1e-6, "horizon");
    cfg.horizon.max_N = number_or(h, "max_N", 256.0, "horizon");
    cfg.horizon.N0 = number_or(h, "N0", 1.0, "horizon");
    if (h.contains("schedule")) cfg.horizon.schedule = number_list(h.at("schedule"), "horizon.schedule");
    if (h.contains("override")) {
      if (!h.at("override").is_boolean()) {
        throw Error(ErrorKind::ConfigError, "expected true/false", "horizon.override");
      }
      cfg.horizon.override_stabilizability = h.at("override").get<bool>();
    }
    if (h.contains("alphas")) {
      cfg.horizon.alphas = number_list(h.at("alphas"), "horizon.alphas");
    } else if (cfg.horizon.type == HorizonSpec::Type::Discounted) {
      cfg.horizon.alphas = {0.4, 0.2, 0.1, 0.05};
    }
    for (std::size_t i = 0; i < cfg.horizon.alphas.size(); ++i) {
      const std::string key = "horizon.alphas[" + std::to_string(i) + "]";
      if (!(cfg.horizon.alphas[i] > 0.0)) {
        throw Error(ErrorKind::NonPositiveAlpha, "alpha must be > 0", key);
      }
      if (i > 0 && !(cfg.horizon.alphas[i] < cfg.horizon.alphas[i - 1])) {
        throw Error(ErrorKind::ConfigError, "alpha grid must be strictly decreasing", key);
      }
    }
  } else {
    cfg.horizon.terminal = Matrix::Zero(n, n);
  }

  if (doc.contains("lattice")) {
    const json& l = doc.at("lattice");
    check_keys(l, "lattice", {"depth", "step", "scheme", "memory_budget"});
    if (l.contains("depth")) cfg.lattice.depth = integer(l.at("depth"), "lattice.depth");
    cfg.lattice.step = number_or(l, "step", cfg.lattice.step, "lattice");
    if (l.contains("scheme")) cfg.lattice.scheme = parse_scheme(text(l.at("scheme"), "lattice.scheme"));
    if (l.contains("memory_budget")) {
      cfg.lattice.memory_budget = l.at("memory_budget").get<std::uint64_t>();
    }
  }
  if (cfg.lattice.depth < 1) throw Error(ErrorKind::ConfigError, "depth must be >= 1", "lattice.depth");
  if (!(cfg.lattice.step > 0.0)) throw Error(ErrorKind::ConfigError, "step must be > 0", "lattice.step");

  if (doc.contains("mc")) {
    const json& m = doc.at("mc");
    check_keys(m, "mc", {"paths", "seed", "time_step", "mode"});
    if (m.contains("paths")) cfg.mc.paths = integer(m.at("paths"), "mc.paths");
    if (m.contains("seed")) {
      if (!m.at("seed").is_number_unsigned() && !m.at("seed").is_number_integer()) {
        throw Error(ErrorKind::ConfigError, "expected an integer", "mc.seed");
      }
      cfg.mc.seed = m.at("seed").get<std::uint64_t>();
    }
    cfg.mc.time_step = number_or(m, "time_step", cfg.mc.time_step, "mc");
    if (m.contains("mode")) {
      const std::string mode = text(m.at("mode"), "mc.mode");
      if (mode == "normal") {
        cfg.mc.mode = McSpec::Mode::Normal;
      } else if (mode == "bernoulli") {
        cfg.mc.mode = McSpec::Mode::Bernoulli;
      } else {
        throw Error(ErrorKind::ConfigError, "mode must be normal or bernoulli", "mc.mode");
      }
    }
  }
  if (cfg.mc.paths < 1) throw Error(ErrorKind::ConfigError, "paths must be >= 1", "mc.paths");
  if (!(cfg.mc.time_step > 0.0)) {
    throw Error(ErrorKind::ConfigError, "time_step must be > 0", "mc.time_step");
  }

  if (doc.contains("tolerances")) {
    const json& t = doc.at("tolerances");
    if (!t.is_object()) throw Error(ErrorKind::ConfigError, "expected an object", "tolerances");
    for (const auto& [name, value] : t.items()) {
      cfg.tolerances[name] = number(value, "tolerances." + name);
    }
  }
  return cfg;
}

ScenarioConfig load_config_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ConfigError, std::string("malformed config: ") + e.what());
  }
  return parse_config(doc);
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::ConfigError, "cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return load_config_text(buffer.str());
}

std::vector<NodeState> evaluation_points(const CoefficientModel& model,
                                         const FiltrationLattice& lattice) {
  std::vector<NodeState> points;
  if (model.is_deterministic()) {
    for (int l = 0; l <= lattice.depth(); ++l) {
      NodeState s = NodeState::at_time(lattice.time(l), model.dims.d);
      s.level = l;
      points.push_back(std::move(s));
    }
    return points;
  }
  points.reserve(lattice.total_nodes());
  for (int l = 0; l <= lattice.depth(); ++l) {
    for (std::size_t node = 0; node < lattice.nodes(l); ++node) {
      points.push_back(lattice.state(l, node));
    }
  }
  return points;
}

namespace {

double op_norm(const Matrix& m) {
  if (m.cols() == 1 || m.rows() == 1) return m.norm();
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

void check_bound(const CoefficientProcess& p, const Matrix& value, const std::string& key) {
  if (!value.allFinite()) throw Error(ErrorKind::UnboundedCoefficient, "non-finite value", key);
  const double bound = std::min(p.declared_bound, p.analytic_bound());
  const double norm = op_norm(value);
  if (norm > bound * (1.0 + 1e-12) + 1e-12) {
    std::ostringstream msg;
    msg << "norm " << norm << " exceeds bound " << bound;
    throw Error(ErrorKind::UnboundedCoefficient, msg.str(), key);
  }
}

}  // namespace

CoefficientModel validate(const ScenarioConfig& config) {
  const CoefficientModel& model = config.model;
  const Dimensions& dims = config.dims;
  if (dims.n < 1 || dims.k < 1 || dims.d < 1) {
    throw Error(ErrorKind::BadDimensions, "n, k and d must all be >= 1", "dims");
  }
  auto shape = [&](const CoefficientProcess& p, int r, int c, const std::string& key) {
    auto bad = [&](const Matrix& m) { return m.rows() != r || m.cols() != c; };
    if (bad(p.base) || (p.time && bad(p.time->amp)) || (p.factor && bad(p.factor->amp))) {
      throw Error(ErrorKind::BadDimensions,
                  "expected " + std::to_string(r) + "x" + std::to_string(c), key);
    }
    if (p.factor && (p.factor->component < 0 || p.factor->component >= dims.d)) {
      throw Error(ErrorKind::BadDimensions, "factor component out of range", key + ".factor");
    }
  };
  shape(model.A, dims.n, dims.n, "model.A");
  shape(model.B, dims.n, dims.k, "model.B");
  shape(model.S, dims.n, dims.n, "model.S");
  shape(model.forcing.f, dims.n, 1, "model.f");
  if (static_cast<int>(model.C.size()) != dims.d || static_cast<int>(model.D.size()) != dims.d) {
    throw Error(ErrorKind::BadDimensions, "C and D need one entry per Brownian component",
                "model.C");
  }
  for (int i = 0; i < dims.d; ++i) {
    shape(model.C[i], dims.n, dims.n, "model.C[" + std::to_string(i) + "]");
    shape(model.D[i], dims.n, dims.k, "model.D[" + std::to_string(i) + "]");
  }
  if (config.x0.size() != dims.n) throw Error(ErrorKind::BadDimensions, "x0 has wrong length", "x0");
  if (model.ergodic && !(model.ergodic_epsilon > 0.0)) {
    throw Error(ErrorKind::ConfigError, "ergodic models need epsilon > 0", "model.epsilon");
  }

  const FiltrationLattice lattice = config.lattice_grid();
  if (!model.is_deterministic() &&
      lattice_node_count(lattice.depth(), lattice.dim()) > config.lattice.memory_budget) {
    throw Error(ErrorKind::ConfigError,
                "lattice of depth " + std::to_string(lattice.depth()) +
                    " exceeds the node budget " + std::to_string(config.lattice.memory_budget),
                "lattice.depth");
  }

  if (config.horizon.type == HorizonSpec::Type::InfiniteApprox && !model.forcing_is_zero() &&
      model.forcing.integrability != Integrability::SquareIntegrableDecaying) {
    throw Error(ErrorKind::ForcingNotSquareIntegrable,
                "infinite-horizon runs need f tagged as decaying", "model.f.integrability");
  }

  if (model.forcing.integrability == Integrability::SquareIntegrableDecaying &&
      !model.forcing_is_zero()) {
    // The tag promises |f_t| <= C e^(-rate t); check the closed form delivers it.
    const CoefficientProcess& f = model.forcing.f;
    const double rate = model.forcing.decay_rate;
    const bool by_discount = f.discount >= rate;
    const bool by_time = f.base.isZero(0.0) && !f.factor && f.time &&
                         f.time->shape == TimeTerm::Shape::Exp &&
                         f.discount + f.time->rate >= rate;
    if (!by_discount && !by_time) {
      throw Error(ErrorKind::ForcingNotSquareIntegrable,
                  "f is tagged decaying at rate " + std::to_string(rate) +
                      " but its closed form does not decay that fast",
                  "model.f");
    }
  }

  for (const NodeState& s : evaluation_points(model, lattice)) {
    check_bound(model.A, model.A.at(s), "model.A");
    check_bound(model.B, model.B.at(s), "model.B");
    check_bound(model.forcing.f, model.forcing.f.at(s), "model.f");
    for (int i = 0; i < dims.d; ++i) {
      check_bound(model.C[i], model.C[i].at(s), "model.C[" + std::to_string(i) + "]");
      check_bound(model.D[i], model.D[i].at(s), "model.D[" + std::to_string(i) + "]");
    }
    const Matrix S = model.S.at(s);
    check_bound(model.S, S, "model.S");
    const double asym = (S - S.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * std::max(1.0, S.cwiseAbs().maxCoeff())) {
      throw Error(ErrorKind::NonSymmetricS, "S is not symmetric at t=" + std::to_string(s.t),
                  "model.S");
    }
    const double lmin = min_eigenvalue(sym(S));
    if (lmin < -1e-10) {
      std::ostringstream msg;
      msg << "S has eigenvalue " << lmin << " < 0 at t=" << s.t;
      throw Error(ErrorKind::NegativeS, msg.str(), "model.S");
    }
    if (model.ergodic && lmin < model.ergodic_epsilon) {
      std::ostringstream msg;
      msg << "S has eigenvalue " << lmin << " below epsilon " << model.ergodic_epsilon;
      throw Error(ErrorKind::NegativeS, msg.str(), "model.S");
    }
  }
  return model;
}

}  // namespace stochlq
