#include "dream/tokenizer.hpp"

#include <cmath>
#include <stdexcept>

namespace dream {

namespace {

// Channel of pixel (y, x, c) inside its token: grouped sub-token first, then
// the pixel inside the patch, then RGB.
struct TokenCoord {
  int token;
  int channel;
};

TokenCoord locate(int y, int x, int c, int grid_side, const TokenizerConfig& cfg) {
  const int ppt = cfg.pixels_per_token();
  const int ty = y / ppt, tx = x / ppt;
  const int sub_y = (y % ppt) / cfg.patch, sub_x = (x % ppt) / cfg.patch;
  const int dy = y % cfg.patch, dx = x % cfg.patch;
  const int patch_channels = cfg.patch * cfg.patch * 3;
  const int channel = (sub_y * cfg.group + sub_x) * patch_channels + (dy * cfg.patch + dx) * 3 + c;
  return {ty * grid_side + tx, channel};
}

}  // namespace

NormalizationStats NormalizationStats::identity(int channels) {
  return {RowVector<double>::Zero(channels), RowVector<double>::Ones(channels)};
}

int TokenizerConfig::grid_side(int image_side) const {
  if (patch <= 0 || group <= 0 || image_side <= 0 || image_side % pixels_per_token() != 0) {
    throw std::invalid_argument("tokenizer: image side must be divisible by patch * group");
  }
  return image_side / pixels_per_token();
}

Matrix<double> patchify(const Image& image, const TokenizerConfig& config) {
  const int grid = config.grid_side(image.side);
  Matrix<double> tokens(grid * grid, config.channels());
  for (int y = 0; y < image.side; ++y) {
    for (int x = 0; x < image.side; ++x) {
      for (int c = 0; c < 3; ++c) {
        const auto [t, ch] = locate(y, x, c, grid, config);
        tokens(t, ch) = image.at(y, x, c);
      }
    }
  }
  return tokens;
}

Image unpatchify(const Matrix<double>& tokens, int image_side, const TokenizerConfig& config) {
  const int grid = config.grid_side(image_side);
  if (tokens.rows() != grid * grid || tokens.cols() != config.channels()) {
    throw std::invalid_argument("unpatchify: token matrix shape does not match image side");
  }
  Image img(image_side);
  for (int y = 0; y < image_side; ++y) {
    for (int x = 0; x < image_side; ++x) {
      for (int c = 0; c < 3; ++c) {
        const auto [t, ch] = locate(y, x, c, grid, config);
        img.at(y, x, c) = static_cast<float>(tokens(t, ch));
      }
    }
  }
  return img;
}

LatentGrid tokenize(const Image& image, const NormalizationStats& stats, const TokenizerConfig& config) {
  if (stats.channels() != config.channels()) throw std::invalid_argument("tokenize: stats channel count");
  LatentGrid grid;
  grid.side = config.grid_side(image.side);
  grid.channels = config.channels();
  grid.stats = stats;
  grid.values = patchify(image, config);
  grid.values = (grid.values.rowwise() - stats.mean).array().rowwise() / stats.scale.array();
  return grid;
}

Image detokenize(const LatentGrid& grid, const TokenizerConfig& config) {
  Matrix<double> raw = (grid.values.array().rowwise() * grid.stats.scale.array()).matrix();
  raw.rowwise() += grid.stats.mean;
  return unpatchify(raw, grid.side * config.pixels_per_token(), config);
}

NormalizationStats fit_normalization(std::span<const Image> images, const TokenizerConfig& config) {
  if (images.empty()) throw std::invalid_argument("fit_normalization: no images");
  const int channels = config.channels();
  RowVector<double> sum = RowVector<double>::Zero(channels);
  RowVector<double> sum_sq = RowVector<double>::Zero(channels);
  double count = 0;
  for (const auto& img : images) {
    const Matrix<double> t = patchify(img, config);
    sum += t.colwise().sum();
    sum_sq += t.array().square().matrix().colwise().sum();
    count += static_cast<double>(t.rows());
  }
  NormalizationStats stats;
  stats.mean = sum / count;
  RowVector<double> var = (sum_sq / count).array() - stats.mean.array().square();
  stats.scale = var.array().max(0.0).sqrt().max(1e-6).matrix();
  return stats;
}

}  // namespace dream
