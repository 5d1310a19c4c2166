#include "dream/training.hpp"

#include <cmath>

#include "dream/config.hpp"

namespace dream {

namespace {

Image mirror(const Image& img) {
  Image out(img.side);
  for (int y = 0; y < img.side; ++y) {
    for (int x = 0; x < img.side; ++x) {
      for (int c = 0; c < 3; ++c) out.at(y, img.side - 1 - x, c) = img.at(y, x, c);
    }
  }
  return out;
}

CaptionTokens mirror(CaptionTokens caption) {
  // Quadrants are numbered TL, TR, BL, BR, so flipping toggles the low bit.
  auto& q = caption.ids[3];
  q = static_cast<TokenId>(kFirstQuadrantToken + ((q - kFirstQuadrantToken) ^ 1));
  return caption;
}

}  // namespace

std::int64_t TrainConfig::total_steps() const {
  const std::int64_t full = static_cast<std::int64_t>(epochs) * steps_per_epoch();
  return max_steps > 0 ? std::min(full, max_steps) : full;
}

void TrainConfig::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
  };
  need(epochs >= 0 && max_steps >= 0, "epochs and max_steps must be non-negative");
  need(batch_size >= 1 && samples_per_epoch >= batch_size, "samples_per_epoch must be at least batch_size");
  need(lr >= 0.0 && std::isfinite(lr), "lr must be finite and non-negative");
  need(lr_warmup_epochs >= 0.0 && (epochs == 0 || lr_warmup_epochs < epochs), "lr warmup must be shorter than training");
  need(label_dropout >= 0.0 && label_dropout <= 1.0, "label_dropout must lie in [0, 1]");
  need(ema_decay >= 0.0 && ema_decay <= 1.0, "ema_decay must lie in [0, 1]");
  need(lambda >= 0.0 && diffusion_weight >= 0.0, "loss weights must be non-negative");
  need(n_noise >= 1 && timesteps >= 1 && val_every >= 0 && val_samples >= 0, "counts must be positive");
  need(optim.beta1 >= 0.0 && optim.beta1 < 1.0 && optim.beta2 >= 0.0 && optim.beta2 < 1.0, "Adam betas");
  need(optim.eps > 0.0 && optim.weight_decay >= 0.0, "Adam eps and weight decay");
  mask.validate();
  model.validate();
  const TokenizerConfig tok;
  const int grid = tok.grid_side(image_side);
  need(model.n_tokens == grid * grid, "model.n_tokens must match the image grid");
  need(model.token_channels == tok.channels(), "model.token_channels must match the tokenizer");
  need(model.timesteps >= timesteps, "model.timesteps must cover the noise schedule");
}

double lr_at(std::int64_t step, const TrainConfig& config) {
  const double warm = config.lr_warmup_epochs * config.steps_per_epoch();
  if (warm <= 0.0) return config.lr;
  return config.lr * std::min(1.0, static_cast<double>(step) / warm);
}

NoiseSchedule training_schedule(const TrainConfig& config) {
  return build_cosine_schedule(config.timesteps, config.schedule_offset, std::min(100, config.timesteps));
}

TrainData TrainData::build(const TrainConfig& config, const std::optional<NormalizationStats>& stats) {
  TrainData d;
  d.samples = dataset(config.data_seed, static_cast<std::size_t>(config.samples_per_epoch), Split::train,
                      config.image_side);
  if (stats) {
    d.stats = *stats;
  } else {
    std::vector<Image> images;
    images.reserve(d.samples.size());
    for (const auto& s : d.samples) images.push_back(s.image);
    d.stats = fit_normalization(images);
  }
  d.grids.reserve(d.samples.size());
  for (const auto& s : d.samples) d.grids.push_back(tokenize(s.image, d.stats).values);
  for (const auto& s : dataset(config.data_seed, static_cast<std::size_t>(config.val_samples), Split::val,
                               config.image_side)) {
    d.val_grids.push_back(tokenize(s.image, d.stats).values);
    d.val_captions.push_back(s.caption);
  }
  return d;
}

TrainState TrainState::initialize(const TrainConfig& config, const NormalizationStats& stats) {
  config.validate();
  TrainState s;
  s.config = config;
  s.model = std::make_unique<Model<float>>(config.model, config.seed);
  s.ema = s.model->params().snapshot();
  s.optim = OptimState<float>::zeros_like(s.model->params(), config.optim);
  s.stats = stats;
  return s;
}

std::unique_ptr<Model<float>> TrainState::snapshot_model(bool use_ema) const {
  auto m = std::make_unique<Model<float>>(config.model, config.seed);
  m->params().assign(use_ema ? ema : model->params().snapshot());
  return m;
}

StepMetrics train_step(TrainState& state, const TrainData& data, const NoiseSchedule& schedule,
                       const StepObserver* observer) {
  const TrainConfig& cfg = state.config;
  const int spe = cfg.steps_per_epoch();
  const std::int64_t step = state.step;
  const std::int64_t epoch = step / spe;
  const std::int64_t within = step % spe;
  const auto seed = cfg.seed;

  StepMetrics m;
  m.step = step + 1;
  m.epoch = static_cast<double>(step) / spe;
  m.mask_mean = schedule_mean(cfg.mask, m.epoch);
  m.lr = lr_at(step, cfg);

  Rng shuffle(seed, {key(Stream::shuffle), static_cast<std::uint64_t>(epoch)});
  const std::vector<int> order = shuffle.choose(static_cast<int>(data.grids.size()), static_cast<int>(data.grids.size()));

  const auto B = static_cast<std::size_t>(cfg.batch_size);
  const int n = cfg.model.n_tokens;
  std::vector<Matrix<double>> flipped;
  flipped.reserve(B);  // pointers into this vector must stay valid
  BatchInput<float> batch;
  for (std::size_t j = 0; j < B; ++j) {
    const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(within) * B + j]);
    const auto s = static_cast<std::uint64_t>(step);
    Rng mask_rng(seed, {key(Stream::mask), s, j});
    const double ratio = sample_ratio(cfg.mask, m.mask_mean, mask_rng);
    batch.masks.push_back(make_mask(ratio, n, mask_rng));
    Rng drop_rng(seed, {key(Stream::dropout), s, j});
    const bool dropped = drop_rng.bernoulli(cfg.label_dropout);
    batch.null_condition.push_back(dropped);
    m.null_conditioned += dropped ? 1 : 0;
    if (cfg.hflip && drop_rng.bernoulli(0.5)) {
      flipped.push_back(tokenize(mirror(data.samples[idx].image), data.stats).values);
      batch.grids.push_back(&flipped.back());
      batch.captions.push_back(mirror(data.samples[idx].caption));
    } else {
      batch.grids.push_back(&data.grids[idx]);
      batch.captions.push_back(data.samples[idx].caption);
    }
    batch.noise.emplace_back(seed, std::initializer_list<std::uint64_t>{key(Stream::noise), s, j});
  }
  if (observer && observer->on_batch) observer->on_batch(batch);

  auto& params = state.model->params();
  params.zero_grad();
  const LossSettings settings{cfg.lambda, cfg.diffusion_weight, cfg.n_noise, cfg.mask.gamma, cfg.mask.phi};
  BatchResult<float> result = forward_batch(*state.model, std::move(batch), schedule, settings);
  const auto& loss = result.loss;
  if (!std::isfinite(loss.diffusion)) {
    throw NumericFailure("non-finite diffusion loss at step " + std::to_string(m.step));
  }
  if (!std::isfinite(loss.contrastive)) {
    throw NumericFailure("non-finite contrastive loss at step " + std::to_string(m.step));
  }
  backward(loss.total);
  try {
    m.grad_norm = adamw_step(params, state.optim, m.lr);
  } catch (const NonFiniteGradient& e) {
    throw NumericFailure(std::string(e.what()) + " at step " + std::to_string(m.step));
  }
  params.zero_grad();
  ema_update(state.ema, params, cfg.ema_decay);
  state.step += 1;

  m.diff_loss = loss.diffusion;
  m.clip_loss = loss.contrastive;
  m.joint = loss.joint;
  m.diff_count = loss.diffusion_count;
  m.clip_count = loss.contrastive_count;

  if (cfg.val_every > 0 && state.step % cfg.val_every == 0 && !data.val_grids.empty()) {
    const double v = validation_loss(*state.model, data.val_grids, data.val_captions, schedule, seed, cfg.n_noise);
    state.validation.push_back({state.step, v});
  }
  return m;
}

void train_run(TrainState& state, const TrainData& data, const std::function<void(const StepMetrics&)>& on_step) {
  const NoiseSchedule schedule = training_schedule(state.config);
  const std::int64_t total = state.config.total_steps();
  while (state.step < total) {
    StepMetrics m = train_step(state, data, schedule);
    if (on_step) on_step(m);
  }
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
  RecordSet set;
  set.put_string("config", train_config_json(state.config));
  set.put_u64("train.step", static_cast<std::uint64_t>(state.step));
  set.put_u64("rng.seed", state.config.seed);
  set.put_matrix<double>("norm.mean", state.stats.mean);
  set.put_matrix<double>("norm.scale", state.stats.scale);
  const auto& ps = state.model->params().all();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    set.put_matrix<float>("param/" + ps[i].name, ps[i].tensor.value());
    set.put_matrix<float>("ema/" + ps[i].name, state.ema[i]);
    set.put_matrix<float>("adam.m/" + ps[i].name, state.optim.first_moment[i]);
    set.put_matrix<float>("adam.v/" + ps[i].name, state.optim.second_moment[i]);
  }
  set.put_u64("adam.step", static_cast<std::uint64_t>(state.optim.step));
  Matrix<double> val(static_cast<Index>(state.validation.size()), 2);
  for (std::size_t i = 0; i < state.validation.size(); ++i) {
    val(static_cast<Index>(i), 0) = static_cast<double>(state.validation[i].step);
    val(static_cast<Index>(i), 1) = state.validation[i].loss;
  }
  set.put_matrix<double>("validation", val);
  set.save(path);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  const RecordSet set = RecordSet::load(path);
  TrainConfig cfg;
  try {
    cfg = parse_train_config_json(set.string("config"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  const int C = cfg.model.token_channels;
  NormalizationStats stats{set.matrix<double>("norm.mean", 1, C), set.matrix<double>("norm.scale", 1, C)};
  TrainState state = TrainState::initialize(cfg, stats);
  state.step = static_cast<std::int64_t>(set.u64("train.step"));
  auto& ps = state.model->params().all();
  std::vector<Matrix<float>> live;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& name = ps[i].name;
    const Index r = ps[i].tensor.rows(), c = ps[i].tensor.cols();
    live.push_back(set.matrix<float>("param/" + name, r, c));
    state.ema[i] = set.matrix<float>("ema/" + name, r, c);
    state.optim.first_moment[i] = set.matrix<float>("adam.m/" + name, r, c);
    state.optim.second_moment[i] = set.matrix<float>("adam.v/" + name, r, c);
  }
  state.model->params().assign(live);
  state.optim.step = static_cast<std::int64_t>(set.u64("adam.step"));
  const Matrix<double> val = set.matrix<double>("validation");
  for (Index i = 0; i < val.rows(); ++i) state.validation.push_back({static_cast<std::int64_t>(val(i, 0)), val(i, 1)});
  return state;
}

}  // namespace dream
