#pragma once

// Gated masked-token diffusion loss, symmetric InfoNCE and their weighted sum.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "dream/masking.hpp"
#include "dream/noise_schedule.hpp"
#include "dream/ops.hpp"
#include "dream/rng.hpp"

namespace dream {

/// Rows handed to the noise predictor. x0 and eps are exposed so tests can
/// substitute an oracle; a real head reads only x_t, timesteps and z.
template <typename Scalar>
struct HeadQuery {
  Tensor<Scalar> x_t;
  std::vector<int> timesteps;
  Tensor<Scalar> z;
  const Matrix<Scalar>* x0 = nullptr;
  const Matrix<Scalar>* eps = nullptr;
};

template <typename Scalar>
using HeadFn = std::function<Tensor<Scalar>(const HeadQuery<Scalar>&)>;

template <typename Scalar>
struct DiffusionLossResult {
  Tensor<Scalar> loss;              // 1x1; zero when nothing contributes
  int count = 0;                    // samples passing the gate
  std::vector<double> per_sample;   // mean squared-error norm per sample, 0 when gated out
  std::vector<bool> contributed;
};

/// Mean over contributing (sample, masked token, draw) triples of
/// ||eps - eps_hat||^2. z holds n_tokens rows per sample; each sample draws its
/// own timesteps and noise from rngs[i], so results do not depend on batch order.
template <typename Scalar>
DiffusionLossResult<Scalar> diffusion_loss(const std::vector<const Matrix<double>*>& x0,
                                           const std::vector<MaskState>& masks, const Tensor<Scalar>& z,
                                           const NoiseSchedule& schedule, std::vector<Rng>& rngs,
                                           const HeadFn<Scalar>& head, int n_noise, double gamma) {
  const std::size_t N = x0.size();
  if (masks.size() != N || rngs.size() != N) throw std::invalid_argument("diffusion_loss: batch sizes differ");
  if (n_noise < 1) throw std::invalid_argument("diffusion_loss: n_noise must be positive");
  DiffusionLossResult<Scalar> out;
  out.per_sample.assign(N, 0.0);
  out.contributed.assign(N, false);
  if (N == 0) {
    out.loss = Tensor<Scalar>::scalar(Scalar(0));
    return out;
  }
  const Index n = x0.front()->rows();
  const Index C = x0.front()->cols();
  if (z.rows() != static_cast<Index>(N) * n) throw std::invalid_argument("diffusion_loss: z rows != samples * tokens");

  std::vector<std::vector<int>> positions(N);
  Index total = 0;
  for (std::size_t i = 0; i < N; ++i) {
    if (x0[i]->rows() != n || x0[i]->cols() != C || masks[i].token_count() != n) {
      throw std::invalid_argument("diffusion_loss: inconsistent sample shapes");
    }
    if (!diffusion_gate(masks[i].ratio, gamma)) continue;
    positions[i] = masks[i].masked_positions();
    if (positions[i].empty()) continue;
    out.contributed[i] = true;
    ++out.count;
    total += static_cast<Index>(positions[i].size()) * n_noise;
  }
  if (total == 0) {
    out.loss = Tensor<Scalar>::scalar(Scalar(0));
    return out;
  }

  Matrix<Scalar> clean(total, C), eps(total, C), noisy(total, C);
  std::vector<int> timesteps;
  std::vector<Index> z_rows;
  timesteps.reserve(static_cast<std::size_t>(total));
  z_rows.reserve(static_cast<std::size_t>(total));
  std::vector<Index> first_row(N, 0);
  Index row = 0;
  for (std::size_t i = 0; i < N; ++i) {
    if (!out.contributed[i]) continue;
    first_row[i] = row;
    for (int d = 0; d < n_noise; ++d) {
      const int t = 1 + static_cast<int>(rngs[i].uniform_int(static_cast<std::uint64_t>(schedule.T)));
      const double a = schedule.sqrt_alpha_bar(t);
      const double b = schedule.sqrt_one_minus_alpha_bar(t);
      for (int p : positions[i]) {
        for (Index c = 0; c < C; ++c) {
          const double e = rngs[i].normal();
          const double x = (*x0[i])(p, c);
          clean(row, c) = static_cast<Scalar>(x);
          eps(row, c) = static_cast<Scalar>(e);
          noisy(row, c) = static_cast<Scalar>(a * x + b * e);
        }
        timesteps.push_back(t);
        z_rows.push_back(static_cast<Index>(i) * n + p);
        ++row;
      }
    }
  }

  HeadQuery<Scalar> query{Tensor<Scalar>(std::move(noisy)), std::move(timesteps), gather_rows(z, std::move(z_rows)),
                          &clean, &eps};
  Tensor<Scalar> eps_hat = head(query);
  Tensor<Scalar> err = row_sums(square(sub(eps_hat, Tensor<Scalar>(eps))));
  out.loss = scale(sum(err), Scalar(1) / static_cast<Scalar>(total));

  const auto& e = err.value();
  for (std::size_t i = 0; i < N; ++i) {
    if (!out.contributed[i]) continue;
    const Index rows = static_cast<Index>(positions[i].size()) * n_noise;
    out.per_sample[i] = e.middleRows(first_row[i], rows).template cast<double>().sum() / static_cast<double>(rows);
  }
  return out;
}

template <typename Scalar>
struct InfoNceResult {
  Tensor<Scalar> loss;  // (image_term + text_term) / 2
  double image_term = 0.0;
  double text_term = 0.0;
};

inline constexpr double kMaxLogitScale = 100.0;

/// Symmetric cross-entropy over scaled cosine similarities of matched rows.
/// log_scale is the 1x1 log of the inverse temperature, clamped at ln(100).
template <typename Scalar>
InfoNceResult<Scalar> info_nce(const Tensor<Scalar>& image, const Tensor<Scalar>& text,
                               const Tensor<Scalar>& log_scale) {
  if (image.rows() != text.rows() || image.cols() != text.cols()) {
    throw std::invalid_argument("info_nce: embedding shapes differ");
  }
  if (log_scale.size() != 1) throw std::invalid_argument("info_nce: log scale must be 1x1");
  InfoNceResult<Scalar> out;
  const Index N = image.rows();
  if (N == 0) {
    out.loss = Tensor<Scalar>::scalar(Scalar(0));
    return out;
  }
  Tensor<Scalar> s = exp(clamp_max(log_scale, static_cast<Scalar>(std::log(kMaxLogitScale))));
  Tensor<Scalar> logits = mul(matmul_nt(image, text), s);
  std::vector<Index> diag(static_cast<std::size_t>(N));
  for (Index i = 0; i < N; ++i) diag[static_cast<std::size_t>(i)] = i;
  Tensor<Scalar> li = scale(mean(pick_cols(log_softmax_rows(logits), diag)), Scalar(-1));
  Tensor<Scalar> lt = scale(mean(pick_cols(log_softmax_rows(transpose(logits)), diag)), Scalar(-1));
  out.image_term = static_cast<double>(li.item());
  out.text_term = static_cast<double>(lt.item());
  out.loss = scale(add(li, lt), Scalar(0.5));
  return out;
}

template <typename Scalar>
struct LossBreakdown {
  Tensor<Scalar> total;  // differentiable joint objective
  double diffusion = 0.0;
  double contrastive = 0.0;
  double lambda = 0.0;
  double diffusion_weight = 1.0;
  double joint = 0.0;  // diffusion_weight * diffusion + lambda * contrastive
  int diffusion_count = 0;
  int contrastive_count = 0;
};

template <typename Scalar>
LossBreakdown<Scalar> joint_loss(const Tensor<Scalar>& diffusion, int diffusion_count, const Tensor<Scalar>& contrastive,
                                 int contrastive_count, double lambda, double diffusion_weight = 1.0) {
  LossBreakdown<Scalar> out;
  out.diffusion = diffusion_count > 0 ? static_cast<double>(diffusion.item()) : 0.0;
  out.contrastive = contrastive_count > 0 ? static_cast<double>(contrastive.item()) : 0.0;
  out.lambda = lambda;
  out.diffusion_weight = diffusion_weight;
  out.diffusion_count = diffusion_count;
  out.contrastive_count = contrastive_count;
  out.joint = diffusion_weight * out.diffusion + lambda * out.contrastive;

  std::vector<Tensor<Scalar>> terms;
  if (diffusion_count > 0 && diffusion_weight != 0.0) {
    terms.push_back(scale(diffusion, static_cast<Scalar>(diffusion_weight)));
  }
  if (contrastive_count > 0 && lambda != 0.0) terms.push_back(scale(contrastive, static_cast<Scalar>(lambda)));
  if (terms.empty()) {
    out.total = Tensor<Scalar>::scalar(Scalar(0));
  } else if (terms.size() == 1) {
    out.total = terms.front();
  } else {
    out.total = add(terms[0], terms[1]);
  }
  return out;
}

}  // namespace dream
