#pragma once

// Iterative masked generation: tokens are revealed in uniformly random order
// following the cosine plan, each revealed token is sampled by ancestral DDPM
// with the diffusion head, optionally with classifier-free guidance. With
// K > 1 candidates, all advance to a switch step, are scored against the
// prompt with the contrastive towers, and only the best one continues.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dream/decode_plan.hpp"
#include "dream/errors.hpp"
#include "dream/masking.hpp"
#include "dream/model.hpp"
#include "dream/noise_schedule.hpp"
#include "dream/rng.hpp"

namespace dream {

enum class CfgSchedule : std::uint8_t { constant, linear };

struct DecodeConfig {
  int steps = 64;
  double temperature = 1.0;
  double cfg = 1.0;  // guidance weight; 1 means plain conditional sampling
  CfgSchedule cfg_schedule = CfgSchedule::constant;
  int inference_steps = 100;
  int k = 1;
  int t_switch = 0;    // used when nfe_budget == 0
  int nfe_budget = 0;  // > 0 derives t_switch from the budget
  bool clip_denoised = true;  // clamp predicted x0 to the image value range
  std::uint64_t seed = 0;

  /// Validates and returns the switch step (0 for single-candidate decoding).
  int resolved_switch() const;
  void validate() const { (void)resolved_switch(); }
  bool operator==(const DecodeConfig&) const = default;
};

inline int DecodeConfig::resolved_switch() const {
  if (steps < 1) throw std::invalid_argument("decode: steps must be positive");
  if (!(temperature >= 0.0) || !(cfg >= 0.0)) throw std::invalid_argument("decode: temperature and cfg must be >= 0");
  if (inference_steps < 1) throw std::invalid_argument("decode: inference_steps must be positive");
  if (k < 1) throw std::invalid_argument("decode: k must be positive");
  if (nfe_budget > 0) return budget_to_switch(nfe_budget, steps, k);
  if (k == 1) return 0;
  if (t_switch < 1 || t_switch >= steps) throw std::invalid_argument("decode: need 1 <= t_switch < steps when k > 1");
  return t_switch;
}

/// Guidance weight used at `step`; the linear schedule ramps from 0 at the
/// first step to the configured weight at the last.
inline double cfg_weight_at(const DecodeConfig& config, int step) {
  if (config.cfg_schedule == CfgSchedule::constant) return config.cfg;
  return config.steps == 1 ? config.cfg : config.cfg * step / (config.steps - 1);
}

/// Whether the unconditional branch is evaluated at all.
inline bool cfg_active(const DecodeConfig& config) {
  return config.cfg_schedule == CfgSchedule::linear || config.cfg != 1.0;
}

/// (1 - w) eps_u + w eps_c, which equals eps_u + w (eps_c - eps_u) and is
/// exact at w = 0 and w = 1.
template <typename Derived>
auto cfg_eps(const Eigen::MatrixBase<Derived>& eps_u, const Eigen::MatrixBase<Derived>& eps_c, double w) {
  using Scalar = typename Derived::Scalar;
  return (static_cast<Scalar>(1.0 - w) * eps_u + static_cast<Scalar>(w) * eps_c).eval();
}

struct NfeLedger {
  std::int64_t encoder = 0;  // encoder passes, including candidate scoring
  std::int64_t decoder = 0;  // decoder passes (two per step with guidance)
  std::int64_t head = 0;     // diffusion-head calls
  std::int64_t trajectory_steps = 0;

  bool operator==(const NfeLedger&) const = default;

  /// Totals implied by the plan: every trajectory step costs one encoder and
  /// one or two decoder passes plus inference_steps head calls per branch.
  static NfeLedger expected(const DecodeConfig& config) {
    const int tsw = config.resolved_switch();
    const int branches = cfg_active(config) ? 2 : 1;
    NfeLedger l;
    l.trajectory_steps = dream::trajectory_steps(config.steps, config.k, tsw);
    l.encoder = l.trajectory_steps + (config.k > 1 ? config.k : 0);
    l.decoder = l.trajectory_steps * branches;
    l.head = l.trajectory_steps * config.inference_steps * branches;
    return l;
  }
};

/// Predicts eps for rows of x_t at timestep t; `conditional` selects the branch.
template <typename Scalar>
using EpsFn = std::function<Matrix<Scalar>(const Matrix<Scalar>& x_t, int t, bool conditional)>;

/// Fills a matrix with standard normal draws.
template <typename Scalar>
using NoiseFn = std::function<void(Matrix<Scalar>&)>;

/// Ancestral sampling from x_T along respaced steps. Injected noise is scaled
/// by `temperature`; noise is drawn every step so the stream position does
/// not depend on the temperature. Returns the number of head calls made.
template <typename Scalar>
std::int64_t sample_tokens_with(const EpsFn<Scalar>& eps_fn, Matrix<Scalar>& x, const std::vector<RespacedStep>& steps,
                                const NoiseFn<Scalar>& noise, double temperature, double cfg_weight, bool guided,
                                const Matrix<Scalar>* lo = nullptr, const Matrix<Scalar>* hi = nullptr) {
  std::int64_t calls = 0;
  Matrix<Scalar> z(x.rows(), x.cols());
  for (const auto& st : steps) {
    Matrix<Scalar> eps;
    if (guided) {
      Matrix<Scalar> eps_c = eps_fn(x, st.t, true);
      Matrix<Scalar> eps_u = eps_fn(x, st.t, false);
      eps = cfg_eps(eps_u, eps_c, cfg_weight);
      calls += 2;
    } else {
      eps = eps_fn(x, st.t, true);
      calls += 1;
    }
    Matrix<Scalar> x0 = (x - static_cast<Scalar>(std::sqrt(1.0 - st.alpha_bar)) * eps) /
                        static_cast<Scalar>(std::sqrt(st.alpha_bar));
    if (lo && hi) {
      for (Index r = 0; r < x0.rows(); ++r) x0.row(r) = x0.row(r).cwiseMax(lo->row(0)).cwiseMin(hi->row(0));
    }
    noise(z);
    const auto sd = static_cast<Scalar>(temperature * std::sqrt(st.posterior_variance));
    x = static_cast<Scalar>(st.coef_x0) * x0 + static_cast<Scalar>(st.coef_xt) * x + sd * z;
  }
  return calls;
}

template <typename Scalar>
Matrix<Scalar> sample_tokens(const EpsFn<Scalar>& eps_fn, Matrix<Scalar> x, const std::vector<RespacedStep>& steps,
                             Rng& rng, double temperature, double cfg_weight, bool guided,
                             const Matrix<Scalar>* lo = nullptr, const Matrix<Scalar>* hi = nullptr) {
  NoiseFn<Scalar> noise = [&rng](Matrix<Scalar>& z) {
    for (Index i = 0; i < z.size(); ++i) z.data()[i] = static_cast<Scalar>(rng.normal());
  };
  sample_tokens_with<Scalar>(eps_fn, x, steps, noise, temperature, cfg_weight, guided, lo, hi);
  return x;
}

struct DecodeResult {
  Matrix<double> grid;  // normalized token values, every position revealed
  NfeLedger ledger;
  int selected = 0;
  std::vector<double> scores;  // one per candidate when K > 1
  double selected_score = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> reveal_counts;  // tokens revealed after each step of the surviving trajectory
};

struct Candidate {
  int index = 0;
  Matrix<double> grid;
  MaskState pending;  // masked = not yet revealed
  Rng rng;

  Candidate(int i, int n, int channels, std::uint64_t seed)
      : index(i), grid(Matrix<double>::Zero(n, channels)), pending(MaskState::from_positions(n, all(n))),
        rng(seed, {key(Stream::decode), static_cast<std::uint64_t>(i)}) {}

 private:
  static std::vector<int> all(int n) {
    std::vector<int> v(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
  }
};

/// Scores a partially decoded candidate against the prompt.
using CandidateScorer = std::function<double(const Candidate&)>;

template <typename Scalar>
class Decoder {
 public:
  /// lo/hi (1 x channels) bound predicted x0 when clip_denoised is set.
  Decoder(const Model<Scalar>& model, const NoiseSchedule& schedule, const DecodeConfig& config,
          std::optional<std::pair<Matrix<double>, Matrix<double>>> bounds = std::nullopt)
      : model_(model), config_(config), switch_(config.resolved_switch()),
        steps_(respace(schedule, resample_timesteps(schedule.T, std::min(config.inference_steps, schedule.T)))) {
    if (config_.clip_denoised && bounds) {
      lo_ = bounds->first.template cast<Scalar>();
      hi_ = bounds->second.template cast<Scalar>();
    }
    if (config_.steps > model_.config().n_tokens) throw std::invalid_argument("decode: more steps than tokens");
  }

  /// Runs the decoding plan. With K = 1 this is plain iterative decoding.
  DecodeResult run(const CaptionTokens& prompt, const CandidateScorer& scorer = {}) const {
    NoGradGuard no_grad;
    const ModelConfig& mc = model_.config();
    const int n = mc.n_tokens, C = mc.token_channels, S = config_.steps;
    const std::vector<int> plan = unmask_plan(S, n);
    const bool guided = cfg_active(config_);

    DecodeResult result;
    std::vector<Candidate> cands;
    for (int i = 0; i < config_.k; ++i) cands.emplace_back(i, n, C, config_.seed);

    const Tensor<Scalar> cond = model_.encode_cond({prompt});
    const Tensor<Scalar> uncond = model_.encode_cond({CaptionTokens::null_prompt()});

    std::vector<Candidate*> active;
    for (auto& c : cands) active.push_back(&c);
    const int first_stop = config_.k > 1 ? switch_ : S;
    auto step = [&](int s) {
      advance(active, s, plan[static_cast<std::size_t>(s)], cond, uncond, guided, result.ledger);
      result.reveal_counts.push_back(n - active.front()->pending.masked_count);
    };
    for (int s = 0; s < first_stop; ++s) step(s);

    if (config_.k > 1) {
      CandidateScorer score = scorer ? scorer : default_scorer(prompt, result.ledger);
      int best = 0;
      for (auto& c : cands) {
        const double v = score(c);
        if (scorer) result.ledger.encoder += 1;
        result.scores.push_back(v);
        if (v > result.scores[static_cast<std::size_t>(best)]) best = c.index;  // ties keep the lower index
      }
      result.selected = best;
      result.selected_score = result.scores[static_cast<std::size_t>(best)];
      active = {&cands[static_cast<std::size_t>(best)]};
      for (int s = switch_; s < S; ++s) step(s);
    }

    const Candidate& win = cands[static_cast<std::size_t>(result.selected)];
    if (win.pending.masked_count != 0) throw std::logic_error("decode finished with masked positions");
    result.grid = win.grid;
    return result;
  }

  /// Cosine similarity between the pooled encoding of the revealed tokens and
  /// the prompt's contrastive embedding.
  double alignment(const Matrix<double>& grid, const MaskState& pending, const CaptionTokens& prompt) const {
    NoGradGuard no_grad;
    auto enc = model_.encode_masked({&grid}, {pending});
    auto txt = model_.encode_text({prompt});
    return static_cast<double>(enc.pooled.value().row(0).dot(txt.value().row(0)));
  }

 private:
  CandidateScorer default_scorer(const CaptionTokens& prompt, NfeLedger& ledger) const {
    return [this, prompt, &ledger](const Candidate& c) {
      ledger.encoder += 1;
      return alignment(c.grid, c.pending, prompt);
    };
  }

  void advance(const std::vector<Candidate*>& active, int step, int reveal, const Tensor<Scalar>& cond,
               const Tensor<Scalar>& uncond, bool guided, NfeLedger& ledger) const {
    const ModelConfig& mc = model_.config();
    const int C = mc.token_channels, L = mc.caption_length;
    const std::size_t A = active.size();

    std::vector<std::vector<int>> chosen(A);
    std::vector<const Matrix<double>*> grids;
    std::vector<MaskState> masks;
    for (std::size_t a = 0; a < A; ++a) {
      Candidate& c = *active[a];
      const auto pending = c.pending.masked_positions();
      for (int j : c.rng.choose(static_cast<int>(pending.size()), reveal)) chosen[a].push_back(pending[static_cast<std::size_t>(j)]);
      grids.push_back(&c.grid);
      masks.push_back(c.pending);
    }

    auto enc = model_.encode_masked(grids, masks);
    ledger.encoder += static_cast<std::int64_t>(A);
    auto tile = [&](const Tensor<Scalar>& seq) {
      std::vector<Index> rows;
      for (std::size_t a = 0; a < A; ++a) {
        for (int j = 0; j < L; ++j) rows.push_back(j);
      }
      return gather_rows(seq, std::move(rows));
    };
    std::vector<Index> z_rows;
    for (std::size_t a = 0; a < A; ++a) {
      for (int p : chosen[a]) z_rows.push_back(static_cast<Index>(a) * mc.n_tokens + p);
    }
    const Tensor<Scalar> z_c = gather_rows(model_.decode(enc, masks, tile(cond)), z_rows);
    ledger.decoder += static_cast<std::int64_t>(A);
    Tensor<Scalar> z_u;
    if (guided) {
      z_u = gather_rows(model_.decode(enc, masks, tile(uncond)), z_rows);
      ledger.decoder += static_cast<std::int64_t>(A);
    }

    const double w = cfg_weight_at(config_, step);
    const auto rows = static_cast<Index>(z_rows.size());
    EpsFn<Scalar> eps_fn = [&](const Matrix<Scalar>& x, int t, bool conditional) {
      std::vector<int> ts(static_cast<std::size_t>(x.rows()), t);
      return model_.head(Tensor<Scalar>(x), ts, conditional ? z_c : z_u).value();
    };

    // Each candidate draws its own x_T and step noise so batching does not
    // change any candidate's random stream.
    Matrix<Scalar> x(rows, C);
    Index at = 0;
    for (std::size_t a = 0; a < A; ++a) {
      for (std::size_t j = 0; j < chosen[a].size(); ++j, ++at) {
        for (int c = 0; c < C; ++c) x(at, c) = static_cast<Scalar>(active[a]->rng.normal());
      }
    }
    std::vector<Index> block_begin;
    for (std::size_t a = 0, row = 0; a < A; row += chosen[a].size(), ++a) block_begin.push_back(static_cast<Index>(row));
    NoiseFn<Scalar> noise = [&](Matrix<Scalar>& z) {
      for (std::size_t a = 0; a < A; ++a) {
        for (Index r = 0; r < static_cast<Index>(chosen[a].size()); ++r) {
          for (Index c = 0; c < z.cols(); ++c) z(block_begin[a] + r, c) = static_cast<Scalar>(active[a]->rng.normal());
        }
      }
    };
    const Matrix<Scalar>* lo = lo_.size() ? &lo_ : nullptr;
    const Matrix<Scalar>* hi = hi_.size() ? &hi_ : nullptr;
    const std::int64_t calls = sample_tokens_with<Scalar>(eps_fn, x, steps_, noise, config_.temperature, w, guided, lo, hi);
    ledger.head += calls * static_cast<std::int64_t>(A);
    ledger.trajectory_steps += static_cast<std::int64_t>(A);

    at = 0;
    for (std::size_t a = 0; a < A; ++a) {
      Candidate& c = *active[a];
      for (int p : chosen[a]) {
        for (int ch = 0; ch < C; ++ch) {
          const double v = static_cast<double>(x(at, ch));
          if (!std::isfinite(v)) throw NumericFailure("non-finite latent at decoding step " + std::to_string(step));
          c.grid(p, ch) = v;
        }
        c.pending.masked[static_cast<std::size_t>(p)] = 0;
        --c.pending.masked_count;
        ++at;
      }
    }
  }

  const Model<Scalar>& model_;
  DecodeConfig config_;
  int switch_;
  std::vector<RespacedStep> steps_;
  Matrix<Scalar> lo_, hi_;
};

/// Per-channel bounds of normalized token values for pixels in [-1, 1].
inline std::pair<Matrix<double>, Matrix<double>> latent_bounds(const RowVector<double>& mean,
                                                               const RowVector<double>& scale) {
  Matrix<double> lo = ((-1.0 - mean.array()) / scale.array()).matrix();
  Matrix<double> hi = ((1.0 - mean.array()) / scale.array()).matrix();
  return {lo.cwiseMin(hi), lo.cwiseMax(hi)};
}

}  // namespace dream
