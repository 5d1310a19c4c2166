#pragma once

// The operations behind each `dream` subcommand. Each writes its artifacts
// plus a JSON manifest and returns what it computed.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dream/config.hpp"
#include "dream/decoding.hpp"
#include "dream/eval.hpp"
#include "dream/training.hpp"

namespace dream {

inline constexpr const char* kToolVersion = "0.1.0";

/// Manifest skeleton: command, tool version, config echo, seed and start time.
nlohmann::json manifest_header(const std::string& command, const nlohmann::json& config, std::uint64_t seed);
/// Adds the end time and writes via a temporary file and rename.
void write_manifest(const std::filesystem::path& path, nlohmann::json manifest);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// ---------------------------------------------------------------------------

struct GenDataOptions {
  std::uint64_t seed = 0;
  std::size_t count = 1024;
  Split split = Split::train;
  int image_side = 32;
  std::filesystem::path out;
};

void cmd_gen_data(const GenDataOptions& options);

struct TrainOptions {
  RunConfig config;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;  // continue from this checkpoint
  int log_every = 0;                            // progress lines on stderr; 0 = quiet
};

struct TrainOutcome {
  TrainState state;
  std::vector<StepMetrics> metrics;
};

/// Writes checkpoint.bin, metrics.csv, validation.csv and manifest.json into out_dir.
TrainOutcome cmd_train(const TrainOptions& options);

std::string metrics_csv_header();
std::string metrics_csv_row(const StepMetrics& m);

struct SampleOptions {
  std::filesystem::path checkpoint;
  std::string prompt;
  DecodeConfig decode;
  std::filesystem::path out;  // PPM; the manifest goes to <out>.json
  bool use_ema = true;
};

struct SampleOutcome {
  Image image;
  DecodeResult decode;
  int t_switch = 0;
  double alignment = 0.0;  // prompt alignment of the finished image
};

SampleOutcome cmd_sample(const SampleOptions& options);

/// Decodes one prompt with an already loaded model (no files written).
SampleOutcome generate(const Model<float>& model, const NormalizationStats& stats, const TrainConfig& train,
                       const DecodeConfig& decode, const CaptionTokens& prompt);

struct EvalOptions {
  std::filesystem::path checkpoint;
  Split split = Split::val;
  EvalConfig eval;
  std::filesystem::path out;  // CSV; the manifest goes to <out>.json
  bool use_ema = true;
};

EvalReport cmd_eval(const EvalOptions& options);

struct AblationOptions {
  RunConfig config;
  std::vector<ScheduleKind> kinds{ScheduleKind::warmup, ScheduleKind::fixed, ScheduleKind::uniform,
                                  ScheduleKind::cooldown};
  // The fixed schedule uses its own ratio distribution.
  double fx_sigma = 0.25;
  double fx_min = 0.7;
  double fx_max = 1.0;
  std::filesystem::path out_dir;
  int log_every = 0;
};

struct AblationRun {
  ScheduleKind kind;
  EvalReport report;
  double final_diffusion_loss = 0.0;
};

/// One training run per schedule kind from the same config and seed, each
/// evaluated on the validation split; writes ablation.csv and manifest.json.
std::vector<AblationRun> cmd_ablate_mask(const AblationOptions& options);

}  // namespace dream
