#pragma once

#include "stochlq/lattice.hpp"
#include "stochlq/model.hpp"
#include "stochlq/scheme.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace stochlq {

struct HorizonSpec {
  enum class Type { Finite, InfiniteApprox, Discounted };
  Type type = Type::Finite;
  double T = 1.0;
  Matrix terminal;  ///< finite horizon terminal weight; zero when absent
  double tol = 1e-6;
  double max_N = 256.0;
  std::vector<double> schedule;  ///< explicit N schedule; doubling from N0 when empty
  double N0 = 1.0;
  bool override_stabilizability = false;
  std::vector<double> alphas;
};

struct LatticeSpec {
  int depth = 10;
  double step = 0.1;  ///< used for non-finite horizons; finite uses T/depth
  Scheme scheme = Scheme::Exact;
  std::uint64_t memory_budget = std::uint64_t{1} << 22;
};

struct McSpec {
  enum class Mode { Normal, Bernoulli };
  int paths = 1000;
  std::uint64_t seed = 1;
  double time_step = 0.01;
  Mode mode = Mode::Normal;
};

struct ScenarioConfig {
  Dimensions dims;
  CoefficientModel model;
  Vector x0;
  HorizonSpec horizon;
  LatticeSpec lattice;
  McSpec mc;
  std::map<std::string, double> tolerances;
  nlohmann::json source;  ///< the document as parsed, for hashing and reports

  double tolerance(const std::string& name, double fallback) const;
  /// Grid step: T/depth for finite horizons, lattice.step otherwise.
  double step() const;
  /// Lattice of the configured depth and step.
  FiltrationLattice lattice_grid() const;
};

/// Parses the scenario document. Structural problems raise ConfigError or
/// BadDimensions naming the offending key.
ScenarioConfig parse_config(const nlohmann::json& doc);
ScenarioConfig load_config(const std::filesystem::path& path);
ScenarioConfig load_config_text(const std::string& text);

/// Checks every model invariant on all lattice nodes (factor-driven models)
/// or all grid times (deterministic models) and returns the checked model.
CoefficientModel validate(const ScenarioConfig& config);

/// Evaluation points used by validate and the dissipativity certificate.
std::vector<NodeState> evaluation_points(const CoefficientModel& model,
                                         const FiltrationLattice& lattice);

/// Matrix ↔ JSON helpers shared with reports (row-major nested arrays).
Matrix json_to_matrix(const nlohmann::json& j, const std::string& key);
nlohmann::json matrix_to_json(const Matrix& m);

}  // namespace stochlq
