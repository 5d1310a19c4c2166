// dream: data generation, training, sampling, evaluation and masking-schedule
// ablations from one executable.

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dream/checkpoint.hpp"
#include "dream/commands.hpp"
#include "dream/parallel.hpp"

namespace {

using dream::ConfigError;
using nlohmann::json;
namespace fs = std::filesystem;

enum Exit : int { ok = 0, config_error = 2, io_error = 3, numeric_error = 4, infeasible_budget = 5 };

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

json read_config_document(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    json doc = json::parse(buf.str());
    if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
    return doc;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
}

/// Applies "key=value" overrides; values are JSON when they parse as JSON,
/// otherwise plain strings.
void apply_overrides(json& doc, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    const std::string key = s.substr(0, eq), text = s.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    doc[key] = value;
  }
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--mask-grid: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("--mask-grid is empty");
  return out;
}

dream::Split parse_split(const std::string& s) {
  if (s == "train") return dream::Split::train;
  if (s == "val") return dream::Split::val;
  throw ConfigError("--split must be train or val");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dream: joint masked-diffusion and contrastive training on a synthetic shapes dataset"};
  app.require_subcommand(1);
  app.fallthrough();
  int workers = 1;
  app.add_option("--workers", workers, "Worker threads for batch-parallel work")->check(CLI::PositiveNumber);
  int log_every = 50;
  app.add_option("--log-every", log_every, "Print training progress every N steps (0 = quiet)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a binary cache of image/caption pairs");
  dream::GenDataOptions gen_opts;
  std::string gen_split = "train";
  gen->add_option("--seed", gen_opts.seed, "Dataset seed");
  gen->add_option("--count", gen_opts.count, "Number of samples")->required();
  gen->add_option("--out", gen_opts.out, "Output file")->required();
  gen->add_option("--split", gen_split, "train or val");
  gen->add_option("--side", gen_opts.image_side, "Image side in pixels");

  // shared config handling
  std::string config_path;
  std::vector<std::string> sets;
  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--set", sets, "Override a config key (key=value), repeatable");
  };

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_config(train);
  fs::path out_dir;
  std::string resume;
  train->add_option("--out-dir", out_dir, "Output directory")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* sample = app.add_subcommand("sample", "Generate one image for a prompt");
  auto* sad = app.add_subcommand("sample-sad", "Generate with candidate selection against the prompt");
  fs::path checkpoint, out_path;
  std::string prompt;
  std::optional<int> steps, k, budget, t_switch, inference_steps;
  std::optional<double> cfg, temperature;
  std::optional<std::uint64_t> seed;
  bool live = false;
  for (auto* cmd : {sample, sad}) {
    add_config(cmd);
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    cmd->add_option("--prompt", prompt, "Attribute words, e.g. \"red circle large TL\"")->required();
    cmd->add_option("--out", out_path, "Output PPM")->required();
    cmd->add_option("--steps", steps, "Decoding steps");
    cmd->add_option("--cfg", cfg, "Guidance weight");
    cmd->add_option("--temperature", temperature, "Sampling temperature");
    cmd->add_option("--inference-steps", inference_steps, "Respaced diffusion steps per token");
    cmd->add_option("--seed", seed, "Decoding seed");
    cmd->add_flag("--live", live, "Use live parameters instead of the EMA");
  }
  sad->add_option("--k", k, "Candidates")->required();
  auto* budget_opt = sad->add_option("--budget", budget, "Per-trajectory step budget");
  auto* switch_opt = sad->add_option("--t-switch", t_switch, "Step at which candidates are scored");
  budget_opt->excludes(switch_opt);

  auto* eval = app.add_subcommand("eval", "Probe and retrieval metrics for a checkpoint");
  add_config(eval);
  std::string split = "val", grid;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--split", split, "train or val");
  eval->add_option("--mask-grid", grid, "Comma-separated masking ratios");
  eval->add_option("--out", out_path, "Output CSV")->required();
  eval->add_option("--seed", seed, "Evaluation seed");
  eval->add_flag("--live", live, "Use live parameters instead of the EMA");

  auto* ablate = app.add_subcommand("ablate-mask", "Train and evaluate once per masking schedule");
  add_config(ablate);
  std::string kinds = "WM,FX,UNI,CD";
  dream::AblationOptions ab;
  ablate->add_option("--kinds", kinds, "Comma-separated schedule kinds");
  ablate->add_option("--out-dir", out_dir, "Output directory")->required();
  ablate->add_option("--fx-sigma", ab.fx_sigma, "Spread of the fixed schedule");
  ablate->add_option("--fx-min", ab.fx_min, "Lower ratio bound of the fixed schedule");
  ablate->add_option("--fx-max", ab.fx_max, "Upper ratio bound of the fixed schedule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Exit::ok : Exit::config_error;
  }
  dream::set_workers(workers);

  try {
    auto load = [&] {
      json doc = read_config_document(config_path);
      apply_overrides(doc, sets);
      return doc;
    };
    if (gen->parsed()) {
      gen_opts.split = parse_split(gen_split);
      dream::cmd_gen_data(gen_opts);
      std::cout << "wrote " << gen_opts.count << " samples to " << gen_opts.out.string() << "\n";
    } else if (train->parsed()) {
      dream::TrainOptions opts{dream::parse_run_config(load()), out_dir, std::nullopt, log_every};
      if (!resume.empty()) opts.resume = resume;
      const auto out = dream::cmd_train(opts);
      std::cout << "trained " << out.state.step << " steps; checkpoint " << (out_dir / "checkpoint.bin").string()
                << "\n";
    } else if (sample->parsed() || sad->parsed()) {
      json doc = load();
      if (steps) doc["decode.steps"] = *steps;
      if (cfg) doc["decode.cfg"] = *cfg;
      if (temperature) doc["decode.temperature"] = *temperature;
      if (inference_steps) doc["decode.inference_steps"] = *inference_steps;
      if (seed) doc["decode.seed"] = *seed;
      if (sad->parsed()) {
        doc["decode.k"] = *k;
        if (budget) doc["decode.nfe_budget"] = *budget;
        if (t_switch) doc["decode.t_switch"] = *t_switch;
      }
      const dream::RunConfig rc = dream::parse_run_config(doc);
      const auto out = dream::cmd_sample({checkpoint, prompt, rc.decode, out_path, !live});
      std::cout << "wrote " << out_path.string() << " (alignment " << out.alignment;
      if (rc.decode.k > 1) std::cout << ", t_switch " << out.t_switch << ", selected " << out.decode.selected;
      std::cout << ")\n";
    } else if (eval->parsed()) {
      json doc = load();
      if (!grid.empty()) doc["eval.mask_grid"] = parse_grid(grid);
      if (seed) doc["eval.seed"] = *seed;
      const dream::RunConfig rc = dream::parse_run_config(doc);
      const auto report = dream::cmd_eval({checkpoint, parse_split(split), rc.eval, out_path, !live});
      std::cout << dream::eval_summary(report.rows);
    } else if (ablate->parsed()) {
      ab.config = dream::parse_run_config(load());
      ab.kinds.clear();
      std::stringstream ss(kinds);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          ab.kinds.push_back(dream::schedule_kind_from_string(item));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(e.what());
        }
      }
      ab.out_dir = out_dir;
      ab.log_every = log_every;
      const auto runs = dream::cmd_ablate_mask(ab);
      for (const auto& r : runs) {
        std::cout << dream::to_string(r.kind) << ": retrieval@0 " << r.report.at_ratio(ab.config.eval.mask_grid.front()).image_to_text
                  << " probe " << r.report.probe_accuracy << "\n";
      }
    }
  } catch (const dream::InfeasibleBudget& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Exit::infeasible_budget;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return Exit::config_error;
  } catch (const dream::CaptionError& e) {
    std::cerr << "prompt error: " << e.what() << "\n";
    return Exit::config_error;
  } catch (const dream::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return Exit::numeric_error;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return Exit::config_error;
  } catch (const std::exception& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return Exit::io_error;
  }
  return Exit::ok;
}
