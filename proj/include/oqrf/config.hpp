#pragma once

#include "oqrf/estimator.hpp"
#include "oqrf/simlab.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace oqrf {

/// Every tunable of the CLI. Loaded from a flat JSON object; unknown keys are
/// rejected. Thread count and output paths are deliberately not part of it so
/// the echoed config never depends on them.
struct RunConfig {
  std::uint64_t seed = 0;
  EstimatorConfig est;
  SimConfig sim;
  int replicates = 20;
  std::vector<Method> methods{Method::oqrf};
  int n_boot = 0;
  double level = 0.95;
  bool add_intercept = false;

  /// Range checks for every field; throws ValidationError.
  void validate() const;
};

/// Sets one key from a JSON value. Throws SchemaError for unknown keys or
/// wrongly typed values.
void apply_config_key(RunConfig& cfg, const std::string& key, const nlohmann::json& value);

/// Applies every member of a JSON object on top of `base`.
RunConfig config_from_json(const nlohmann::json& doc, RunConfig base = {});

/// Reads a JSON config file (ParseError on malformed text).
RunConfig load_config_file(const std::string& path, RunConfig base = {});

/// Resolved config as a flat JSON object with every key.
nlohmann::json config_to_json(const RunConfig& cfg);

/// Parses "key=value" where value is JSON (bare words are taken as strings).
void apply_assignment(RunConfig& cfg, const std::string& assignment);

}  // namespace oqrf
