#pragma once

// Run configuration: a JSON document whose keys are flat dotted names
// ("mask.sigma", "decode.k", ...). Nested objects are flattened, so
// {"mask": {"sigma": 0.4}} is the same document. Unknown keys are errors.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dream/decoding.hpp"
#include "dream/eval.hpp"
#include "dream/training.hpp"

namespace dream {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  TrainConfig train;
  DecodeConfig decode;
  EvalConfig eval;

  bool operator==(const RunConfig&) const = default;
};

/// Every accepted key, in documentation order.
std::vector<std::string> config_keys();

/// Strict parse; throws ConfigError on unknown keys, wrong value types or
/// constraint violations, and InfeasibleBudget for unusable decode budgets.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig parse_run_config_text(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

/// Flat dotted echo of every key; parse_run_config inverts it exactly.
nlohmann::json run_config_to_json(const RunConfig& config);

/// The training subset (train.*, optim.*, mask.*, model.*), as stored in checkpoints.
std::string train_config_json(const TrainConfig& config);
TrainConfig parse_train_config_json(const std::string& text);

/// Fills the model fields that follow from the data layout (grid size,
/// channel count, timestep range).
void derive_model_shape(TrainConfig& config);

}  // namespace dream
