#pragma once

// Cosine DDPM noise schedule with improved-DDPM respacing. Timestep 0 is the
// clean signal; 1..T are noise levels.

#include <vector>

#include "dream/tensor.hpp"

namespace dream {

/// Closed form f(t)/f(0) with f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2).
double cosine_alpha_bar(double t, int T, double s = 0.008);

struct RespacedStep {
  int t = 0;
  double alpha_bar = 1.0;
  double alpha_bar_prev = 1.0;
  double beta = 0.0;
  double posterior_variance = 0.0;
  double coef_x0 = 1.0;  // posterior mean = coef_x0 * x0_hat + coef_xt * x_t
  double coef_xt = 0.0;
};

struct NoiseSchedule {
  static constexpr double kMaxBeta = 0.999;

  int T = 1000;
  double offset = 0.008;
  std::vector<double> beta;       // T + 1 entries, beta[0] = 0, clipped to kMaxBeta
  std::vector<double> alpha_bar;  // T + 1 entries, cumulative product of (1 - beta)
  std::vector<int> inference_timesteps;  // strictly decreasing, ends at t = 1
  std::vector<RespacedStep> inference_steps;

  double sqrt_alpha_bar(int t) const;
  double sqrt_one_minus_alpha_bar(int t) const;
};

NoiseSchedule build_cosine_schedule(int T = 1000, double s = 0.008, int inference_count = 100);

/// Evenly strided noise levels, T down to 1 inclusive when count > 1. count == T
/// yields every level; count == 1 yields the single terminal level.
std::vector<int> resample_timesteps(int T, int count);

/// Posterior coefficients along a decreasing subsequence, recomputed from
/// alpha_bar ratios.
std::vector<RespacedStep> respace(const NoiseSchedule& schedule, const std::vector<int>& timesteps);

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, for one timestep.
template <typename Derived, typename DerivedEps>
auto q_sample(const Eigen::MatrixBase<Derived>& x0, int t, const Eigen::MatrixBase<DerivedEps>& eps,
              const NoiseSchedule& schedule) {
  using Scalar = typename Derived::Scalar;
  return (static_cast<Scalar>(schedule.sqrt_alpha_bar(t)) * x0 +
          static_cast<Scalar>(schedule.sqrt_one_minus_alpha_bar(t)) * eps)
      .eval();
}

}  // namespace dream
