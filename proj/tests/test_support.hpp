#pragma once

// Shared fixtures: the small gradient-check preset, batches with chosen mask
// ratios, and a finite-difference comparator.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dream/losses.hpp"
#include "dream/model.hpp"
#include "dream/tokenizer.hpp"
#include "dream/training.hpp"

namespace dream::testing {

/// Width 16, 2+2 blocks, 16 tokens (16x16 images).
inline ModelConfig tiny_model() {
  ModelConfig m;
  m.width = 16;
  m.heads = 2;
  m.enc_blocks = 2;
  m.dec_blocks = 2;
  m.text_blocks = 1;
  m.cond_dim = 16;
  m.contrastive_dim = 8;
  m.buffer_tokens = 2;
  m.head_layers = 2;
  m.mlp_ratio = 2;
  m.n_tokens = 16;
  m.token_channels = 48;
  m.timesteps = 1000;
  return m;
}

inline TrainConfig tiny_train() {
  TrainConfig c;
  c.model = tiny_model();
  c.image_side = 16;
  c.batch_size = 4;
  c.samples_per_epoch = 16;
  c.epochs = 2;
  c.lr_warmup_epochs = 0.5;
  c.lr = 1e-3;
  c.val_every = 0;
  c.val_samples = 8;
  c.n_noise = 2;
  c.mask.warmup_epochs = 1.0;
  return c;
}

struct TinyBatch {
  std::vector<Sample> samples;
  std::vector<Matrix<double>> grids;
  NormalizationStats stats;
};

inline TinyBatch tiny_batch(std::size_t n, int side = 16, std::uint64_t seed = 3) {
  TinyBatch b;
  b.samples = dataset(seed, n, Split::train, side);
  std::vector<Image> images;
  for (const auto& s : b.samples) images.push_back(s.image);
  b.stats = fit_normalization(images);
  for (const auto& s : b.samples) b.grids.push_back(tokenize(s.image, b.stats).values);
  return b;
}

/// Batch input whose i-th sample has masking ratio ratios[i].
template <typename Scalar>
BatchInput<Scalar> batch_with_ratios(const TinyBatch& data, const std::vector<double>& ratios, std::uint64_t seed = 11) {
  BatchInput<Scalar> in;
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    const auto& grid = data.grids[i % data.grids.size()];
    Rng r(seed, {key(Stream::mask), i});
    in.grids.push_back(&grid);
    in.captions.push_back(data.samples[i % data.samples.size()].caption);
    in.masks.push_back(make_mask(ratios[i], static_cast<int>(grid.rows()), r));
    in.null_condition.push_back(false);
    in.noise.emplace_back(seed, std::initializer_list<std::uint64_t>{key(Stream::noise), i});
  }
  return in;
}

struct FdReport {
  double max_rel = 0.0;
  std::string worst;
  int checked = 0;
  int nonzero = 0;  // coordinates with an analytic gradient above the floor
};

/// Compares analytic gradients of `loss` w.r.t. sampled coordinates of every
/// parameter with a fourth-order central difference. The relative error is
/// |a - f| / max(|a|, |f|, floor).
inline FdReport finite_difference_check(ParamStore<double>& params, const std::function<Tensor<double>()>& loss,
                                        int per_tensor, double h = 1e-3, double floor = 1e-6,
                                        std::uint64_t seed = 5) {
  params.zero_grad();
  Tensor<double> l = loss();
  backward(l);
  FdReport rep;
  Rng pick(seed);
  for (auto& p : params.all()) {
    Matrix<double>& v = p.tensor.mutable_value();
    const Matrix<double> g = p.tensor.has_grad() ? p.tensor.grad() : Matrix<double>::Zero(v.rows(), v.cols());
    const int n = static_cast<int>(v.size());
    for (int idx : pick.choose(n, std::min(n, per_tensor))) {
      double& x = v.data()[idx];
      const double orig = x;
      auto at = [&](double d) {
        x = orig + d;
        NoGradGuard ng;
        return loss().item();
      };
      const double fd = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      x = orig;
      const double a = g.data()[idx];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor});
      ++rep.checked;
      if (std::abs(a) > floor) ++rep.nonzero;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = p.name + "[" + std::to_string(idx) + "] analytic " + std::to_string(a) + " fd " + std::to_string(fd);
      }
    }
  }
  params.zero_grad();
  return rep;
}

}  // namespace dream::testing
