#include "dream/noise_schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dream {

double cosine_alpha_bar(double t, int T, double s) {
  auto f = [&](double tt) {
    const double c = std::cos(((tt / T + s) / (1.0 + s)) * std::numbers::pi / 2.0);
    return c * c;
  };
  return f(t) / f(0.0);
}

double NoiseSchedule::sqrt_alpha_bar(int t) const { return std::sqrt(alpha_bar.at(static_cast<std::size_t>(t))); }

double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const {
  return std::sqrt(1.0 - alpha_bar.at(static_cast<std::size_t>(t)));
}

NoiseSchedule build_cosine_schedule(int T, double s, int inference_count) {
  if (T < 1) throw std::invalid_argument("noise schedule: T must be positive");
  NoiseSchedule sched;
  sched.T = T;
  sched.offset = s;
  sched.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  sched.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double b = 1.0 - cosine_alpha_bar(t, T, s) / cosine_alpha_bar(t - 1, T, s);
    sched.beta[static_cast<std::size_t>(t)] = std::min(b, NoiseSchedule::kMaxBeta);
    sched.alpha_bar[static_cast<std::size_t>(t)] =
        sched.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - sched.beta[static_cast<std::size_t>(t)]);
  }
  sched.inference_timesteps = resample_timesteps(T, inference_count);
  sched.inference_steps = respace(sched, sched.inference_timesteps);
  return sched;
}

std::vector<int> resample_timesteps(int T, int count) {
  if (count < 1 || count > T) throw std::invalid_argument("resample_timesteps: need 1 <= count <= T");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  const double stride = count == 1 ? 1.0 : static_cast<double>(T - 1) / (count - 1);
  for (int i = count - 1; i >= 0; --i) out.push_back(1 + static_cast<int>(std::lround(i * stride)));
  return out;
}

std::vector<RespacedStep> respace(const NoiseSchedule& schedule, const std::vector<int>& timesteps) {
  std::vector<RespacedStep> steps;
  steps.reserve(timesteps.size());
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    RespacedStep st;
    st.t = timesteps[i];
    if (st.t < 1 || st.t > schedule.T) throw std::invalid_argument("respace: timestep out of range");
    if (i > 0 && timesteps[i] >= timesteps[i - 1]) throw std::invalid_argument("respace: timesteps must decrease");
    st.alpha_bar = schedule.alpha_bar[static_cast<std::size_t>(st.t)];
    st.alpha_bar_prev =
        i + 1 < timesteps.size() ? schedule.alpha_bar[static_cast<std::size_t>(timesteps[i + 1])] : 1.0;
    st.beta = 1.0 - st.alpha_bar / st.alpha_bar_prev;
    const double denom = 1.0 - st.alpha_bar;
    st.posterior_variance = st.beta * (1.0 - st.alpha_bar_prev) / denom;
    st.coef_x0 = st.beta * std::sqrt(st.alpha_bar_prev) / denom;
    st.coef_xt = (1.0 - st.alpha_bar_prev) * std::sqrt(1.0 - st.beta) / denom;
    steps.push_back(st);
  }
  return steps;
}

}  // namespace dream
