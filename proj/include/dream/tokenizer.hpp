#pragma once

// Lossless continuous tokenizer: 2x2-pixel patches give a 16x16 pre-grid with
// 12 channels, then each 2x2 block of pre-tokens is grouped into one token,
// giving an 8x8 grid with 48 channels for a 32x32 RGB image. Values are
// normalized per channel with statistics fitted on the training split.

#include <span>
#include <vector>

#include "dream/synthdata.hpp"
#include "dream/tensor.hpp"

namespace dream {

struct NormalizationStats {
  RowVector<double> mean;
  RowVector<double> scale;

  static NormalizationStats identity(int channels);
  int channels() const { return static_cast<int>(mean.size()); }
};

struct LatentGrid {
  int side = 0;      // tokens per edge
  int channels = 0;  // values per token
  Matrix<double> values;  // (side * side) x channels, normalized
  NormalizationStats stats;

  int token_count() const { return side * side; }
};

struct TokenizerConfig {
  int patch = 2;  // pixels per patch edge
  int group = 2;  // pre-tokens per grouped-token edge

  int pixels_per_token() const { return patch * group; }
  int channels() const { return pixels_per_token() * pixels_per_token() * 3; }
  int grid_side(int image_side) const;
};

/// Raw (unnormalized) token values; throws std::invalid_argument when the image
/// side is not divisible by patch * group.
Matrix<double> patchify(const Image& image, const TokenizerConfig& config = {});
Image unpatchify(const Matrix<double>& tokens, int image_side, const TokenizerConfig& config = {});

LatentGrid tokenize(const Image& image, const NormalizationStats& stats, const TokenizerConfig& config = {});
Image detokenize(const LatentGrid& grid, const TokenizerConfig& config = {});

/// Per-channel mean and standard deviation of raw token values.
NormalizationStats fit_normalization(std::span<const Image> images, const TokenizerConfig& config = {});

}  // namespace dream
