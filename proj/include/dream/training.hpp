#pragma once

// Joint training: per-sample masking, gated diffusion + contrastive loss,
// label dropout, linear LR warmup, AdamW, EMA and resumable checkpoints.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dream/checkpoint.hpp"
#include "dream/losses.hpp"
#include "dream/masking.hpp"
#include "dream/model.hpp"
#include "dream/noise_schedule.hpp"
#include "dream/optim.hpp"
#include "dream/errors.hpp"
#include "dream/synthdata.hpp"
#include "dream/tokenizer.hpp"

namespace dream {

struct TrainConfig {
  int epochs = 49;
  std::int64_t max_steps = 0;  // > 0 stops early
  int samples_per_epoch = 2560;
  int batch_size = 64;
  double lr = 1e-4;
  double lr_warmup_epochs = 12.0;
  double lambda = 0.005;
  double diffusion_weight = 1.0;
  double ema_decay = 0.99;
  double label_dropout = 0.1;
  int n_noise = 4;
  bool hflip = false;  // mirrors the image and swaps the caption's left/right quadrant
  int image_side = 32;
  std::uint64_t seed = 0;
  std::uint64_t data_seed = 0;
  int timesteps = 1000;
  double schedule_offset = 0.008;
  int val_every = 50;  // 0 disables validation tracking
  int val_samples = 128;
  AdamWConfig optim;
  MaskingScheduleConfig mask;
  ModelConfig model;

  int steps_per_epoch() const { return samples_per_epoch / batch_size; }
  std::int64_t total_steps() const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Learning rate applied by the update that follows `step` completed steps.
double lr_at(std::int64_t step, const TrainConfig& config);

// ---------------------------------------------------------------------------
// One batch through the model and both losses.

struct LossSettings {
  double lambda = 0.005;
  double diffusion_weight = 1.0;
  int n_noise = 4;
  double gamma = 0.5;
  double phi = 0.75;
};

template <typename Scalar>
struct BatchInput {
  std::vector<const Matrix<double>*> grids;
  std::vector<CaptionTokens> captions;
  std::vector<MaskState> masks;
  std::vector<bool> null_condition;  // label dropout outcome per sample
  std::vector<Rng> noise;            // per-sample timestep and noise streams
};

template <typename Scalar>
struct BatchResult {
  LossBreakdown<Scalar> loss;
  std::vector<double> diffusion_per_sample;
  std::vector<bool> diffusion_included;
  std::vector<bool> contrastive_included;
};

/// Restricts an encoder output to a subset of its samples. `slot` maps a batch
/// index to its row segment in `enc`.
template <typename Scalar>
EncoderOutput<Scalar> select_samples(const EncoderOutput<Scalar>& enc, const std::vector<std::size_t>& enc_idx,
                                     const std::vector<std::size_t>& wanted, const std::vector<int>& slot) {
  if (wanted.size() == enc_idx.size()) return enc;
  EncoderOutput<Scalar> out;
  out.buffer_tokens = enc.buffer_tokens;
  out.offsets.push_back(0);
  std::vector<Index> rows, pooled_rows;
  for (auto i : wanted) {
    const auto s = static_cast<std::size_t>(slot[i]);
    for (Index r = enc.offsets[s]; r < enc.offsets[s + 1]; ++r) rows.push_back(r);
    out.offsets.push_back(out.offsets.back() + enc.offsets[s + 1] - enc.offsets[s]);
    out.positions.push_back(enc.positions[s]);
    pooled_rows.push_back(static_cast<Index>(s));
  }
  out.features = gather_rows(enc.features, rows);
  out.tap = gather_rows(enc.tap, std::move(rows));
  out.pooled = gather_rows(enc.pooled, std::move(pooled_rows));
  return out;
}

template <typename Scalar>
BatchResult<Scalar> forward_batch(const Model<Scalar>& model, BatchInput<Scalar> batch, const NoiseSchedule& schedule,
                                  const LossSettings& settings) {
  const std::size_t N = batch.grids.size();
  if (N == 0) throw std::invalid_argument("forward_batch: empty batch");
  if (batch.captions.size() != N || batch.masks.size() != N || batch.null_condition.size() != N ||
      batch.noise.size() != N) {
    throw std::invalid_argument("forward_batch: batch fields differ in length");
  }
  BatchResult<Scalar> out;
  out.diffusion_included.assign(N, false);
  out.contrastive_included.assign(N, false);

  std::vector<std::size_t> diff_idx, clip_idx;
  for (std::size_t i = 0; i < N; ++i) {
    if (diffusion_gate(batch.masks[i].ratio, settings.gamma) && batch.masks[i].masked_count > 0) diff_idx.push_back(i);
    if (clip_gate(batch.masks[i].ratio, settings.phi)) clip_idx.push_back(i);
  }

  // The encoder only runs on samples that feed at least one loss.
  std::vector<std::size_t> enc_idx;
  std::vector<int> enc_slot(N, -1);
  for (std::size_t i = 0; i < N; ++i) {
    const bool used = std::find(diff_idx.begin(), diff_idx.end(), i) != diff_idx.end() ||
                      std::find(clip_idx.begin(), clip_idx.end(), i) != clip_idx.end();
    if (!used) continue;
    enc_slot[i] = static_cast<int>(enc_idx.size());
    enc_idx.push_back(i);
  }

  Tensor<Scalar> diff_term = Tensor<Scalar>::scalar(Scalar(0));
  Tensor<Scalar> clip_term = Tensor<Scalar>::scalar(Scalar(0));
  int diff_count = 0;
  out.diffusion_per_sample.assign(N, 0.0);

  if (!enc_idx.empty()) {
    std::vector<const Matrix<double>*> grids;
    std::vector<MaskState> masks;
    for (auto i : enc_idx) {
      grids.push_back(batch.grids[i]);
      masks.push_back(batch.masks[i]);
    }
    EncoderOutput<Scalar> enc = model.encode_masked(grids, masks);

    if (!diff_idx.empty()) {
      EncoderOutput<Scalar> sub = select_samples(enc, enc_idx, diff_idx, enc_slot);
      std::vector<MaskState> sub_masks;
      std::vector<CaptionTokens> cond_caps;
      std::vector<const Matrix<double>*> x0;
      std::vector<Rng> rngs;
      for (auto i : diff_idx) {
        sub_masks.push_back(batch.masks[i]);
        cond_caps.push_back(batch.null_condition[i] ? CaptionTokens::null_prompt() : batch.captions[i]);
        x0.push_back(batch.grids[i]);
        rngs.push_back(batch.noise[i]);
      }
      Tensor<Scalar> z = model.decode(sub, sub_masks, model.encode_cond(cond_caps));
      HeadFn<Scalar> head = [&model](const HeadQuery<Scalar>& q) { return model.head(q.x_t, q.timesteps, q.z); };
      // Every survivor already passed the gate; gamma = -1 keeps them all.
      auto d = diffusion_loss<Scalar>(x0, sub_masks, z, schedule, rngs, head, settings.n_noise, -1.0);
      diff_term = d.loss;
      diff_count = d.count;
      for (std::size_t j = 0; j < diff_idx.size(); ++j) {
        out.diffusion_per_sample[diff_idx[j]] = d.per_sample[j];
        out.diffusion_included[diff_idx[j]] = d.contributed[j];
      }
    }
    if (!clip_idx.empty()) {
      std::vector<Index> rows;
      std::vector<CaptionTokens> caps;
      for (auto i : clip_idx) {
        rows.push_back(enc_slot[i]);
        caps.push_back(batch.captions[i]);
        out.contrastive_included[i] = true;
      }
      auto c = info_nce(gather_rows(enc.pooled, std::move(rows)), model.encode_text(caps), model.logit_scale());
      clip_term = c.loss;
    }
  }
  out.loss = joint_loss(diff_term, diff_count, clip_term, static_cast<int>(clip_idx.size()), settings.lambda,
                        settings.diffusion_weight);
  return out;
}

/// Diffusion loss on held-out samples with fixed masks (ratio uniform on
/// (0.5, 1]), timesteps and noise, so successive evaluations are comparable.
template <typename Scalar>
double validation_loss(const Model<Scalar>& model, const std::vector<Matrix<double>>& grids,
                       const std::vector<CaptionTokens>& captions, const NoiseSchedule& schedule, std::uint64_t seed,
                       int n_noise, std::size_t chunk = 64) {
  NoGradGuard no_grad;
  double weighted = 0.0, rows = 0.0;
  for (std::size_t begin = 0; begin < grids.size(); begin += chunk) {
    const std::size_t end = std::min(grids.size(), begin + chunk);
    std::vector<const Matrix<double>*> x0;
    std::vector<MaskState> masks;
    std::vector<Rng> rngs;
    std::vector<CaptionTokens> caps;
    for (std::size_t i = begin; i < end; ++i) {
      Rng r(seed, {key(Stream::eval), 1, i});
      const double ratio = 1.0 - 0.5 * r.uniform();
      masks.push_back(make_mask(ratio, static_cast<int>(grids[i].rows()), r));
      rngs.emplace_back(seed, std::initializer_list<std::uint64_t>{key(Stream::eval), 2, i});
      x0.push_back(&grids[i]);
      caps.push_back(captions[i]);
    }
    EncoderOutput<Scalar> enc = model.encode_masked(x0, masks);
    Tensor<Scalar> z = model.decode(enc, masks, model.encode_cond(caps));
    HeadFn<Scalar> head = [&model](const HeadQuery<Scalar>& q) { return model.head(q.x_t, q.timesteps, q.z); };
    auto d = diffusion_loss<Scalar>(x0, masks, z, schedule, rngs, head, n_noise, -1.0);
    double r = 0.0;
    for (const auto& m : masks) r += m.masked_count * n_noise;
    weighted += static_cast<double>(d.loss.item()) * r;
    rows += r;
  }
  return rows > 0 ? weighted / rows : 0.0;
}

// ---------------------------------------------------------------------------
// Training state (single precision).

struct StepMetrics {
  std::int64_t step = 0;  // 1-based index of the completed step
  double epoch = 0.0;     // fractional epoch at which the batch was drawn
  double lr = 0.0;
  double mask_mean = 0.0;
  double diff_loss = 0.0;
  double clip_loss = 0.0;
  double joint = 0.0;
  int diff_count = 0;
  int clip_count = 0;
  double grad_norm = 0.0;
  int null_conditioned = 0;  // samples whose caption was dropped
};

struct ValidationPoint {
  std::int64_t step = 0;
  double loss = 0.0;
};

/// Tokenized training and validation data, rebuilt deterministically from the config.
struct TrainData {
  std::vector<Sample> samples;  // train split, samples_per_epoch entries
  std::vector<Matrix<double>> grids;
  std::vector<Matrix<double>> val_grids;
  std::vector<CaptionTokens> val_captions;
  NormalizationStats stats;

  static TrainData build(const TrainConfig& config, const std::optional<NormalizationStats>& stats = std::nullopt);
};

struct TrainState {
  TrainConfig config;
  std::unique_ptr<Model<float>> model;
  std::vector<Matrix<float>> ema;
  OptimState<float> optim;
  std::int64_t step = 0;
  NormalizationStats stats;
  std::vector<ValidationPoint> validation;

  static TrainState initialize(const TrainConfig& config, const NormalizationStats& stats);
  /// A model whose parameters are the EMA (or live) values.
  std::unique_ptr<Model<float>> snapshot_model(bool use_ema = true) const;
};

/// Checks that run after each forward pass; tests use them to observe inputs.
struct StepObserver {
  std::function<void(const BatchInput<float>&)> on_batch;
};

NoiseSchedule training_schedule(const TrainConfig& config);

StepMetrics train_step(TrainState& state, const TrainData& data, const NoiseSchedule& schedule,
                       const StepObserver* observer = nullptr);

/// Runs until the configured step count; `on_step` sees every step's metrics.
void train_run(TrainState& state, const TrainData& data, const std::function<void(const StepMetrics&)>& on_step = {});

void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace dream
