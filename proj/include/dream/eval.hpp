#pragma once

// Evaluation: linear probe on frozen pooled features, caption retrieval in
// both directions at a chosen masking ratio, and prompt alignment scores.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dream/masking.hpp"
#include "dream/model.hpp"
#include "dream/rng.hpp"
#include "dream/synthdata.hpp"
#include "dream/tokenizer.hpp"
#include "dream/training.hpp"

namespace dream {

struct EvalConfig {
  int probe_train_samples = 1024;
  int probe_test_samples = 384;
  int retrieval_samples = 384;
  std::vector<double> mask_grid{0.0, 0.25, 0.5, 0.75, 0.9};
  int probe_iterations = 3000;
  double probe_l2 = 1e-4;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Linear probe (softmax regression, full-batch gradient descent).

struct ProbeOptions {
  int iterations = 3000;
  double l2 = 1e-4;
  double tolerance = 1e-7;  // stop once the gradient's max-abs entry falls below this
};

struct ProbeResult {
  double accuracy = 0.0;
  double train_accuracy = 0.0;
  int iterations = 0;
};

/// Features are standardized with training-set statistics; the step size is
/// the inverse of a bound on the loss curvature, so no tuning is needed.
ProbeResult linear_probe(const Matrix<double>& train_x, const std::vector<int>& train_y, const Matrix<double>& test_x,
                         const std::vector<int>& test_y, int classes, const ProbeOptions& options = {});

// ---------------------------------------------------------------------------
// Retrieval.

struct RetrievalResult {
  double image_to_text = 0.0;  // image -> best caption among candidates
  double text_to_image = 0.0;  // candidate caption -> best image, correct when captions match
  int candidates = 0;
};

/// Candidate captions in scene-index order, without repeats.
std::vector<CaptionTokens> distinct_captions(const std::vector<CaptionTokens>& captions);

/// Argmax retrieval over cosine similarities; ties go to the lowest index.
RetrievalResult retrieval_top1(const Matrix<double>& image_emb, const std::vector<CaptionTokens>& image_captions,
                               const Matrix<double>& caption_emb, const std::vector<CaptionTokens>& candidates);

// ---------------------------------------------------------------------------
// Model-side embedding helpers (no gradient recording).

/// Mean of final-layer encoder features with nothing masked.
template <typename Scalar>
Matrix<double> pooled_features(const Model<Scalar>& model, const std::vector<Matrix<double>>& grids,
                               std::size_t chunk = 128) {
  NoGradGuard no_grad;
  Matrix<double> out(static_cast<Index>(grids.size()), model.config().width);
  for (std::size_t b = 0; b < grids.size(); b += chunk) {
    const std::size_t e = std::min(grids.size(), b + chunk);
    std::vector<const Matrix<double>*> g;
    std::vector<MaskState> m;
    for (std::size_t i = b; i < e; ++i) {
      g.push_back(&grids[i]);
      m.push_back(MaskState::none(static_cast<int>(grids[i].rows())));
    }
    out.middleRows(static_cast<Index>(b), static_cast<Index>(e - b)) =
        model.encode_masked(g, m).mean_features().value().template cast<double>();
  }
  return out;
}

/// Contrastive image embeddings with a fresh random mask of the given ratio per image.
template <typename Scalar>
Matrix<double> image_embeddings(const Model<Scalar>& model, const std::vector<Matrix<double>>& grids, double ratio,
                                std::uint64_t seed, std::size_t chunk = 128) {
  NoGradGuard no_grad;
  Matrix<double> out(static_cast<Index>(grids.size()), model.config().contrastive_dim);
  for (std::size_t b = 0; b < grids.size(); b += chunk) {
    const std::size_t e = std::min(grids.size(), b + chunk);
    std::vector<const Matrix<double>*> g;
    std::vector<MaskState> m;
    for (std::size_t i = b; i < e; ++i) {
      Rng rng(seed, {key(Stream::eval), 3, static_cast<std::uint64_t>(ratio * 1e6), i});
      g.push_back(&grids[i]);
      m.push_back(make_mask(ratio, static_cast<int>(grids[i].rows()), rng));
    }
    out.middleRows(static_cast<Index>(b), static_cast<Index>(e - b)) =
        model.encode_masked(g, m).pooled.value().template cast<double>();
  }
  return out;
}

template <typename Scalar>
Matrix<double> caption_embeddings(const Model<Scalar>& model, const std::vector<CaptionTokens>& captions) {
  NoGradGuard no_grad;
  return model.encode_text(captions).value().template cast<double>();
}

/// Cosine similarity between a fully revealed grid and a prompt.
template <typename Scalar>
double alignment_score(const Model<Scalar>& model, const Matrix<double>& grid, const CaptionTokens& prompt) {
  NoGradGuard no_grad;
  auto enc = model.encode_masked({&grid}, {MaskState::none(static_cast<int>(grid.rows()))});
  auto txt = model.encode_text({prompt});
  return static_cast<double>(enc.pooled.value().row(0).dot(txt.value().row(0)));
}

// ---------------------------------------------------------------------------
// Report rows: metric, split, mask_ratio, value, seed.

struct EvalRow {
  std::string metric;
  std::string split;
  double mask_ratio = 0.0;
  double value = 0.0;
  std::uint64_t seed = 0;
};

/// Tokenized samples of one split, drawn from the evaluation seed.
struct EvalSet {
  std::vector<Sample> samples;
  std::vector<Matrix<double>> grids;
  std::vector<CaptionTokens> captions;
};
EvalSet make_eval_set(std::uint64_t seed, Split split, std::size_t count, int image_side,
                      const NormalizationStats& stats);

struct EvalReport {
  std::vector<EvalRow> rows;
  double probe_accuracy = 0.0;
  std::vector<std::pair<double, RetrievalResult>> retrieval;  // in mask_grid order
  double chance = 0.0;                                         // 1 / candidate count
  double diffusion_loss = 0.0;

  const RetrievalResult& at_ratio(double ratio) const;
};

/// Shape probe (trained on the train split, tested on `split`), retrieval over
/// the mask grid and the held-out diffusion loss, all at the model's current
/// parameters.
EvalReport evaluate(const Model<float>& model, const NormalizationStats& stats, const TrainConfig& train,
                    Split split, const EvalConfig& config);

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows);
std::string eval_summary(const std::vector<EvalRow>& rows);

}  // namespace dream
