#include "stochlq/report.hpp"

#include "stochlq/config.hpp"
#include "stochlq/error.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace stochlq {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void put_matrix(std::ostream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) os << ',' << num(m(r, c));
  }
}

void put_vector(std::ostream& os, const Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << ',' << num(v[i]);
}

void header_matrix(std::ostream& os, const std::string& name, Eigen::Index rows,
                   Eigen::Index cols) {
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) os << ',' << name << '_' << r << c;
  }
}

void header_vector(std::ostream& os, const std::string& name, Eigen::Index size) {
  for (Eigen::Index i = 0; i < size; ++i) os << ',' << name << '_' << i;
}

std::size_t count_at(bool compact, const FiltrationLattice& lattice, int level) {
  return compact ? 1 : lattice.nodes(level);
}

json optional_number(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

std::string scenario_hash(const json& doc) {
  const std::string text = doc.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

json vector_to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

json RunManifest::to_json() const {
  return json{{"scenario_hash", scenario_hash},
              {"version", version},
              {"subcommand", subcommand},
              {"wall_clock_seconds", wall_clock},
              {"seed", seed},
              {"outputs", outputs}};
}

void write_riccati_csv(std::ostream& os, const RiccatiSolution& sol) {
  const Eigen::Index n = sol.P.at(0, 0).rows();
  os << "t,node_id";
  header_matrix(os, "P", n, n);
  for (std::size_t i = 0; i < sol.Q.size(); ++i) header_matrix(os, "Q" + std::to_string(i), n, n);
  os << '\n';
  for (int l = 0; l <= sol.depth(); ++l) {
    for (std::size_t node = 0; node < count_at(sol.is_compact(), sol.lattice, l); ++node) {
      os << num(sol.lattice.time(l)) << ',' << node;
      put_matrix(os, sol.P.at(l, node));
      for (const auto& Q : sol.Q) put_matrix(os, Q.at(l, node));
      os << '\n';
    }
  }
}

void write_dual_csv(std::ostream& os, const DualSolution& dual) {
  const Eigen::Index n = dual.r.at(0, 0).size();
  os << "t,node_id";
  header_vector(os, "r", n);
  for (std::size_t i = 0; i < dual.g.size(); ++i) header_vector(os, "g" + std::to_string(i), n);
  os << ",coupling,correction\n";
  for (int l = 0; l <= dual.lattice.depth(); ++l) {
    for (std::size_t node = 0; node < count_at(dual.is_compact(), dual.lattice, l); ++node) {
      os << num(dual.lattice.time(l)) << ',' << node;
      put_vector(os, dual.r.at(l, node));
      for (const auto& g : dual.g) put_vector(os, g.at(l, node));
      os << ',' << num(dual.coupling.at(l, node)) << ',' << num(dual.correction.at(l, node))
         << '\n';
    }
  }
}

void write_feedback_csv(std::ostream& os, const FeedbackLaw& law) {
  const Matrix& L0 = law.quadratic.Lambda.at(0, 0);
  os << "t,node_id";
  header_matrix(os, "Lambda", L0.rows(), L0.cols());
  header_vector(os, "u_aff", L0.rows());
  os << '\n';
  const bool compact = law.quadratic.Lambda.is_compact() && law.affine.is_compact();
  for (int l = 0; l <= law.lattice.depth(); ++l) {
    for (std::size_t node = 0; node < count_at(compact, law.lattice, l); ++node) {
      os << num(law.lattice.time(l)) << ',' << node;
      put_matrix(os, law.quadratic.Lambda.at(l, node));
      put_vector(os, law.affine.at(l, node));
      os << '\n';
    }
  }
}

void write_trajectory_csv(std::ostream& os, const PathBatch& batch, std::size_t max_paths) {
  if (batch.paths == 0) return;
  const Eigen::Index n = batch.X[0].rows();
  const Eigen::Index k = batch.u[0].rows();
  os << "path_id,t";
  header_vector(os, "X", n);
  header_vector(os, "u", k);
  os << '\n';
  const std::size_t paths = std::min(max_paths, batch.paths);
  for (std::size_t p = 0; p < paths; ++p) {
    for (int j = 0; j <= batch.grid.steps; ++j) {
      os << p << ',' << num(batch.grid.time(j));
      put_vector(os, batch.X[p].col(j));
      for (Eigen::Index i = 0; i < k; ++i) {
        os << ',';
        if (j < batch.grid.steps) os << num(batch.u[p](i, j));
      }
      os << '\n';
    }
  }
}

void write_ergodic_csv(std::ostream& os, const ErgodicReport& report) {
  os << "alpha,horizon";
  for (std::size_t k = 0; k < report.xs.size(); ++k) {
    os << ",J_x" << k << ",alpha_J_x" << k << ",quadratic_x" << k << ",linear_x" << k;
  }
  os << ",term1,term2,P_gap,r_gap\n";
  for (const auto& row : report.rows) {
    os << num(row.alpha) << ',' << num(row.horizon);
    for (std::size_t k = 0; k < row.J.size(); ++k) {
      os << ',' << num(row.J[k]) << ',' << num(row.alpha_J[k]) << ',' << num(row.quadratic[k])
         << ',' << num(row.linear[k]);
    }
    os << ',' << num(row.term1) << ',' << num(row.term2) << ',' << num(row.P_gap) << ','
       << num(row.r_gap) << '\n';
  }
}

json to_json(const CostPrediction& p) {
  json terms = json::object();
  for (const auto& [name, value] : p.terms) terms[name] = value;
  return json{{"value", p.value}, {"value_without_terminal", p.value_without_terminal},
              {"terms", terms}};
}

json to_json(const CostReport& r) {
  json out{{"estimate", r.estimate},
           {"std_error", r.std_error},
           {"horizon", r.horizon},
           {"paths", r.per_path.size()}};
  out["alpha"] = r.alpha ? json(*r.alpha) : json(nullptr);
  out["predicted"] = r.predicted ? to_json(*r.predicted) : json(nullptr);
  out["z_score"] = r.z_score ? json(*r.z_score) : json(nullptr);
  return out;
}

json to_json(const DecayEstimate& d) {
  return json{{"a_hat", d.a_hat},   {"C_hat", d.C_hat},         {"r2", d.r2},
              {"window", d.window}, {"certified", d.certified}};
}

json to_json(const ErgodicReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back(json{{"alpha", row.alpha},
                        {"horizon", row.horizon},
                        {"J", row.J},
                        {"alpha_J", row.alpha_J},
                        {"quadratic", row.quadratic},
                        {"linear", row.linear},
                        {"term1", row.term1},
                        {"term2", row.term2},
                        {"P_gap", optional_number(row.P_gap)},
                        {"r_gap", optional_number(row.r_gap)}});
  }
  json xs = json::array();
  for (const auto& x : r.xs) xs.push_back(vector_to_json(x));
  return json{{"x0", xs},
              {"window", r.window},
              {"rows", rows},
              {"P_gap_decreasing", r.P_gap_decreasing},
              {"r_gap_decreasing", r.r_gap_decreasing},
              {"x_terms_vanishing", r.x_terms_vanishing},
              {"notes", r.notes}};
}

json to_json(const ErgodicLimit& l) {
  return json{{"limit", l.limit},       {"last_raw", l.last_raw},
              {"error_bar", l.error_bar}, {"degree", l.degree},
              {"x_limits", l.x_limits},   {"x_gap", l.x_gap},
              {"x_independent", l.x_independent}};
}

std::string write_file(const std::filesystem::path& dir, const std::string& name,
                       const std::string& text) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto path = dir / name;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::ConfigError, "cannot write " + path.string(), "--out");
  os << text;
  return path.string();
}

}  // namespace stochlq
