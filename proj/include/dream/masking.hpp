#pragma once

// Masking-ratio schedules (warmup, fixed, uniform, cooldown), the clipped
// Gaussian ratio sampler, per-sample mask construction and the loss gates.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dream/rng.hpp"

namespace dream {

enum class ScheduleKind : std::uint8_t { warmup, fixed, uniform, cooldown };

std::string_view to_string(ScheduleKind kind);  // "WM", "FX", "UNI", "CD"
ScheduleKind schedule_kind_from_string(std::string_view name);

struct MaskingScheduleConfig {
  ScheduleKind kind = ScheduleKind::warmup;
  double sigma = 0.55;
  double warmup_epochs = 36.0;
  double min_ratio = 0.0;  // clip bounds of the sampled ratio
  double max_ratio = 1.0;
  double gamma = 0.5;  // diffusion loss needs ratio > gamma
  double phi = 0.75;   // contrastive loss needs ratio <= phi

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
  bool operator==(const MaskingScheduleConfig&) const = default;
};

/// Mean of the ratio distribution at a fractional epoch.
double schedule_mean(const MaskingScheduleConfig& config, double progress_epochs);

/// Gaussian N(mean, sigma^2) clipped (not resampled) to [min_ratio, max_ratio];
/// the uniform schedule ignores `mean` and draws on the same interval.
double sample_ratio(const MaskingScheduleConfig& config, double mean, Rng& rng);

/// Number of masked tokens for a ratio: ceil(ratio * n), robust to the
/// representation error of decimal ratios such as 0.07 * 100.
int masked_count_for(double ratio, int n_tokens);

struct MaskState {
  std::vector<std::uint8_t> masked;  // 1 = hidden from the encoder
  int masked_count = 0;
  double ratio = 0.0;

  int token_count() const { return static_cast<int>(masked.size()); }
  int visible_count() const { return token_count() - masked_count; }
  bool is_masked(int position) const { return masked[static_cast<std::size_t>(position)] != 0; }
  std::vector<int> visible_positions() const;
  std::vector<int> masked_positions() const;

  static MaskState none(int n_tokens);
  static MaskState from_positions(int n_tokens, const std::vector<int>& masked_positions);
};

/// Masks exactly masked_count_for(ratio, n) positions chosen uniformly without replacement.
MaskState make_mask(double ratio, int n_tokens, Rng& rng);

inline bool diffusion_gate(double ratio, double gamma) { return ratio > gamma; }
inline bool clip_gate(double ratio, double phi) { return ratio <= phi; }

}  // namespace dream
