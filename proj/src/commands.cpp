#include "dream/commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "dream/checkpoint.hpp"
#include "dream/image_io.hpp"

namespace dream {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

void ensure_dir(const fs::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

json ledger_json(const NfeLedger& l) {
  return {{"encoder", l.encoder}, {"decoder", l.decoder}, {"head", l.head}, {"trajectory_steps", l.trajectory_steps}};
}

json report_json(const EvalReport& r) {
  json out = json::object();
  out["probe_shape_accuracy"] = r.probe_accuracy;
  out["retrieval_chance"] = r.chance;
  out["diffusion_loss"] = r.diffusion_loss;
  json curve = json::array();
  for (const auto& [ratio, res] : r.retrieval) {
    curve.push_back({{"mask_ratio", ratio}, {"image_to_text", res.image_to_text}, {"text_to_image", res.text_to_image}});
  }
  out["retrieval"] = curve;
  return out;
}

std::unique_ptr<Model<float>> load_model(const TrainState& state, bool use_ema) { return state.snapshot_model(use_ema); }

}  // namespace

json manifest_header(const std::string& command, const json& config, std::uint64_t seed) {
  return {{"tool", "dream"}, {"version", kToolVersion}, {"command", command},
          {"config", config}, {"seed", seed},           {"started", utc_now()}};
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot rename " + tmp.string() + ": " + ec.message());
}

void write_manifest(const fs::path& path, json manifest) {
  manifest["finished"] = utc_now();
  write_text_atomic(path, manifest.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

void cmd_gen_data(const GenDataOptions& options) {
  const auto samples = dataset(options.seed, options.count, options.split, options.image_side);
  ensure_dir(options.out.parent_path());
  write_data_cache(options.out, samples);
  json m = manifest_header("gen-data",
                           {{"count", options.count},
                            {"split", options.split == Split::train ? "train" : "val"},
                            {"image_side", options.image_side}},
                           options.seed);
  m["artifacts"] = {{"data", options.out.string()}};
  fs::path mpath = options.out;
  mpath += ".json";
  write_manifest(mpath, m);
}

std::string metrics_csv_header() {
  return "step,epoch,lr,mask_mean,diff_loss,clip_loss,joint,diff_count,clip_count,grad_norm\n";
}

std::string metrics_csv_row(const StepMetrics& m) {
  std::ostringstream s;
  s << std::setprecision(9) << m.step << ',' << m.epoch << ',' << m.lr << ',' << m.mask_mean << ',' << m.diff_loss
    << ',' << m.clip_loss << ',' << m.joint << ',' << m.diff_count << ',' << m.clip_count << ',' << m.grad_norm
    << '\n';
  return s.str();
}

TrainOutcome cmd_train(const TrainOptions& options) {
  ensure_dir(options.out_dir);
  TrainOutcome out;
  std::optional<NormalizationStats> stats;
  if (options.resume) {
    out.state = load_checkpoint(*options.resume);
    // Only the run length may change on resume.
    out.state.config.epochs = options.config.train.epochs;
    out.state.config.max_steps = options.config.train.max_steps;
    stats = out.state.stats;
  }
  const TrainConfig& requested = options.resume ? out.state.config : options.config.train;
  RunConfig echo = options.config;
  echo.train = requested;
  json manifest = manifest_header("train", run_config_to_json(echo), requested.seed);

  const TrainData data = TrainData::build(requested, stats);
  if (!options.resume) out.state = TrainState::initialize(requested, data.stats);

  const fs::path metrics_path = options.out_dir / "metrics.csv";
  std::ofstream metrics(metrics_path, options.resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + metrics_path.string());
  if (!options.resume) metrics << metrics_csv_header();

  const auto t0 = std::chrono::steady_clock::now();
  train_run(out.state, data, [&](const StepMetrics& m) {
    metrics << metrics_csv_row(m);
    out.metrics.push_back(m);
    if (options.log_every > 0 && m.step % options.log_every == 0) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cerr << "step " << m.step << "/" << out.state.config.total_steps() << " epoch " << std::fixed
                << std::setprecision(2) << m.epoch << " diff " << std::setprecision(4) << m.diff_loss << " clip "
                << m.clip_loss << " mask " << m.mask_mean << " (" << std::setprecision(1) << secs << "s)\n"
                << std::defaultfloat;
    }
  });
  metrics.close();
  if (!metrics) throw std::runtime_error("write failed for " + metrics_path.string());

  std::ostringstream val;
  val << "step,val_diff_loss\n" << std::setprecision(9);
  for (const auto& v : out.state.validation) val << v.step << ',' << v.loss << '\n';
  write_text_atomic(options.out_dir / "validation.csv", val.str());

  const fs::path ckpt = options.out_dir / "checkpoint.bin";
  save_checkpoint(ckpt, out.state);

  json summary = {{"steps", out.state.step}};
  if (!out.metrics.empty()) {
    const auto& last = out.metrics.back();
    summary["final_diff_loss"] = last.diff_loss;
    summary["final_clip_loss"] = last.clip_loss;
    summary["final_joint"] = last.joint;
  }
  if (!out.state.validation.empty()) summary["final_val_diff_loss"] = out.state.validation.back().loss;
  manifest["metrics"] = summary;
  manifest["artifacts"] = {{"checkpoint", ckpt.string()},
                           {"metrics", metrics_path.string()},
                           {"validation", (options.out_dir / "validation.csv").string()}};
  if (options.resume) manifest["resumed_from"] = options.resume->string();
  write_manifest(options.out_dir / "manifest.json", manifest);
  return out;
}

SampleOutcome generate(const Model<float>& model, const NormalizationStats& stats, const TrainConfig& train,
                       const DecodeConfig& decode, const CaptionTokens& prompt) {
  const NoiseSchedule schedule = training_schedule(train);
  Decoder<float> decoder(model, schedule, decode, latent_bounds(stats.mean, stats.scale));
  SampleOutcome out;
  out.t_switch = decode.resolved_switch();
  out.decode = decoder.run(prompt);
  const TokenizerConfig tok;
  const int side = tok.grid_side(train.image_side);
  out.image = detokenize(LatentGrid{side, tok.channels(), out.decode.grid, stats});
  out.alignment = alignment_score(model, out.decode.grid, prompt);
  return out;
}

SampleOutcome cmd_sample(const SampleOptions& options) {
  const CaptionTokens prompt = parse_prompt(options.prompt);
  options.decode.validate();
  const TrainState state = load_checkpoint(options.checkpoint);
  RunConfig echo;
  echo.train = state.config;
  echo.decode = options.decode;
  json manifest = manifest_header(options.decode.k > 1 ? "sample-sad" : "sample", run_config_to_json(echo),
                                  options.decode.seed);
  const auto model = load_model(state, options.use_ema);
  SampleOutcome out = generate(*model, state.stats, state.config, options.decode, prompt);

  ensure_dir(options.out.parent_path());
  write_ppm(options.out, out.image);
  manifest["prompt"] = caption_text(prompt);
  manifest["prompt_tokens"] = std::vector<int>(prompt.ids.begin(), prompt.ids.end());
  manifest["steps"] = options.decode.steps;
  manifest["cfg"] = options.decode.cfg;
  manifest["t_switch"] = out.t_switch;
  manifest["k"] = options.decode.k;
  manifest["nfe"] = ledger_json(out.decode.ledger);
  manifest["selected"] = out.decode.selected;
  manifest["candidate_scores"] = out.decode.scores;
  manifest["selected_score"] = options.decode.k > 1 ? json(out.decode.selected_score) : json(nullptr);
  manifest["metrics"] = {{"alignment", out.alignment}};
  manifest["artifacts"] = {{"image", options.out.string()}, {"checkpoint", options.checkpoint.string()}};
  fs::path mpath = options.out;
  mpath += ".json";
  write_manifest(mpath, manifest);
  return out;
}

EvalReport cmd_eval(const EvalOptions& options) {
  options.eval.validate();
  const TrainState state = load_checkpoint(options.checkpoint);
  RunConfig echo;
  echo.train = state.config;
  echo.eval = options.eval;
  json manifest = manifest_header("eval", run_config_to_json(echo), options.eval.seed);
  const auto model = load_model(state, options.use_ema);
  EvalReport report = evaluate(*model, state.stats, state.config, options.split, options.eval);
  ensure_dir(options.out.parent_path());
  write_eval_csv(options.out, report.rows);
  manifest["split"] = options.split == Split::train ? "train" : "val";
  manifest["metrics"] = report_json(report);
  manifest["artifacts"] = {{"report", options.out.string()}, {"checkpoint", options.checkpoint.string()}};
  fs::path mpath = options.out;
  mpath += ".json";
  write_manifest(mpath, manifest);
  return report;
}

std::vector<AblationRun> cmd_ablate_mask(const AblationOptions& options) {
  if (options.kinds.empty()) throw ConfigError("ablate-mask: no schedule kinds given");
  ensure_dir(options.out_dir);
  json manifest = manifest_header("ablate-mask", run_config_to_json(options.config), options.config.train.seed);
  std::vector<AblationRun> runs;
  std::ostringstream csv;
  csv << "kind,metric,split,mask_ratio,value,seed\n" << std::setprecision(10);
  json summary = json::object();
  for (ScheduleKind kind : options.kinds) {
    RunConfig cfg = options.config;
    cfg.train.mask.kind = kind;
    if (kind == ScheduleKind::fixed) {
      cfg.train.mask.sigma = options.fx_sigma;
      cfg.train.mask.min_ratio = options.fx_min;
      cfg.train.mask.max_ratio = options.fx_max;
    }
    try {
      cfg.train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const std::string name(to_string(kind));
    if (options.log_every > 0) std::cerr << "ablate-mask: training " << name << "\n";
    TrainOptions t{cfg, options.out_dir / name, std::nullopt, options.log_every};
    TrainOutcome trained = cmd_train(t);
    const auto model = trained.state.snapshot_model(true);
    AblationRun run{kind, evaluate(*model, trained.state.stats, cfg.train, Split::val, cfg.eval), 0.0};
    if (!trained.state.validation.empty()) run.final_diffusion_loss = trained.state.validation.back().loss;
    for (const auto& r : run.report.rows) {
      csv << name << ',' << r.metric << ',' << r.split << ',' << r.mask_ratio << ',' << r.value << ',' << r.seed << '\n';
    }
    summary[name] = report_json(run.report);
    runs.push_back(std::move(run));
  }
  const fs::path csv_path = options.out_dir / "ablation.csv";
  write_text_atomic(csv_path, csv.str());
  manifest["fixed_schedule"] = {{"sigma", options.fx_sigma}, {"min", options.fx_min}, {"max", options.fx_max}};
  manifest["metrics"] = summary;
  manifest["artifacts"] = {{"report", csv_path.string()}};
  write_manifest(options.out_dir / "manifest.json", manifest);
  return runs;
}

}  // namespace dream
