#include "dream/masking.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dream {

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::warmup: return "WM";
    case ScheduleKind::fixed: return "FX";
    case ScheduleKind::uniform: return "UNI";
    case ScheduleKind::cooldown: return "CD";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(std::string_view name) {
  if (name == "WM") return ScheduleKind::warmup;
  if (name == "FX") return ScheduleKind::fixed;
  if (name == "UNI") return ScheduleKind::uniform;
  if (name == "CD") return ScheduleKind::cooldown;
  throw std::invalid_argument("unknown masking schedule '" + std::string(name) + "' (expected WM, FX, UNI or CD)");
}

void MaskingScheduleConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("mask.gamma must lie in [0, 1)");
  if (!(phi > 0.0 && phi <= 1.0)) throw std::invalid_argument("mask.phi must lie in (0, 1]");
  if (!(sigma >= 0.0)) throw std::invalid_argument("mask.sigma must be non-negative");
  if (!(warmup_epochs >= 1.0)) throw std::invalid_argument("mask.warmup_epochs must be at least 1");
  if (!(min_ratio >= 0.0 && min_ratio <= max_ratio && max_ratio <= 1.0)) {
    throw std::invalid_argument("mask.min/mask.max must satisfy 0 <= min <= max <= 1");
  }
}

double schedule_mean(const MaskingScheduleConfig& config, double progress_epochs) {
  const double ramp = std::clamp(progress_epochs / config.warmup_epochs, 0.0, 1.0);
  switch (config.kind) {
    case ScheduleKind::warmup: return ramp;
    case ScheduleKind::cooldown: return 1.0 - ramp;
    case ScheduleKind::fixed: return 1.0;
    case ScheduleKind::uniform: return 0.5;  // unused by the sampler
  }
  return 1.0;
}

double sample_ratio(const MaskingScheduleConfig& config, double mean, Rng& rng) {
  if (config.kind == ScheduleKind::uniform) {
    return config.min_ratio + (config.max_ratio - config.min_ratio) * rng.uniform();
  }
  const double draw = mean + config.sigma * rng.normal();
  return std::clamp(draw, config.min_ratio, config.max_ratio);
}

int masked_count_for(double ratio, int n_tokens) {
  const double exact = ratio * static_cast<double>(n_tokens);
  const auto count = static_cast<int>(std::ceil(exact - 1e-9 * std::max(1.0, exact)));
  return std::clamp(count, 0, n_tokens);
}

std::vector<int> MaskState::visible_positions() const {
  std::vector<int> out;
  out.reserve(masked.size() - static_cast<std::size_t>(masked_count));
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (!masked[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> MaskState::masked_positions() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(masked_count));
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

MaskState MaskState::none(int n_tokens) {
  MaskState s;
  s.masked.assign(static_cast<std::size_t>(n_tokens), 0);
  return s;
}

MaskState MaskState::from_positions(int n_tokens, const std::vector<int>& masked_positions) {
  MaskState s = MaskState::none(n_tokens);
  for (int p : masked_positions) {
    if (p < 0 || p >= n_tokens) throw std::out_of_range("mask position out of range");
    if (!s.masked[static_cast<std::size_t>(p)]) ++s.masked_count;
    s.masked[static_cast<std::size_t>(p)] = 1;
  }
  s.ratio = n_tokens > 0 ? static_cast<double>(s.masked_count) / n_tokens : 0.0;
  return s;
}

MaskState make_mask(double ratio, int n_tokens, Rng& rng) {
  if (n_tokens < 1) throw std::invalid_argument("make_mask: need at least one token");
  const int count = masked_count_for(ratio, n_tokens);
  MaskState s = MaskState::none(n_tokens);
  for (int p : rng.choose(n_tokens, count)) s.masked[static_cast<std::size_t>(p)] = 1;
  s.masked_count = count;
  s.ratio = ratio;
  return s;
}

}  // namespace dream
