#pragma once

#include "stochlq/dual.hpp"
#include "stochlq/ergodic.hpp"
#include "stochlq/riccati.hpp"
#include "stochlq/simulate.hpp"
#include "stochlq/synthesis.hpp"

#include <json.hpp>

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace stochlq {

/// FNV-1a 64-bit hash of the canonical JSON dump, as 16 hex digits.
std::string scenario_hash(const nlohmann::json& doc);

nlohmann::json vector_to_json(const Vector& v);

struct RunManifest {
  std::string scenario_hash;
  std::string version;
  std::string subcommand;
  double wall_clock = 0.0;  ///< seconds
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;

  nlohmann::json to_json() const;
};

// CSV exports. Every writer emits a header row; numbers use 17 significant digits.
void write_riccati_csv(std::ostream& os, const RiccatiSolution& sol);
void write_dual_csv(std::ostream& os, const DualSolution& dual);
void write_feedback_csv(std::ostream& os, const FeedbackLaw& law);
/// First `max_paths` paths of a batch: path_id, t, X…, u… (u empty at the last time).
void write_trajectory_csv(std::ostream& os, const PathBatch& batch, std::size_t max_paths);
void write_ergodic_csv(std::ostream& os, const ErgodicReport& report);

nlohmann::json to_json(const CostPrediction& p);
nlohmann::json to_json(const CostReport& r);
nlohmann::json to_json(const DecayEstimate& d);
nlohmann::json to_json(const ErgodicReport& r);
nlohmann::json to_json(const ErgodicLimit& l);

/// Writes `text` to dir/name, creating dir; returns the path written.
std::string write_file(const std::filesystem::path& dir, const std::string& name,
                       const std::string& text);

}  // namespace stochlq
