#include <gtest/gtest.h>

#include <cmath>

#include "dream/noise_schedule.hpp"

namespace dream {
namespace {

// f(t)/f(0) for the cosine schedule (T = 1000, s = 0.008), evaluated with
// 40-digit arithmetic.
struct AlphaBarPoint {
  int t;
  double value;
};
constexpr AlphaBarPoint kOracle[] = {
    {1, 0.9999587157751782221976465},   {50, 0.9920072786842188076433845},  {123, 0.9590511099435727629594197},
    {250, 0.8470121613269047344602667}, {400, 0.6474782111465039123398904}, {500, 0.4938435904406377133165527},
    {640, 0.2831021270595695945230464}, {777, 0.1159959921214130922792301}, {900, 0.02409172414008585526445656},
    {990, 0.0002428572279350056303633848},
};

TEST(NoiseSchedule, MatchesHighPrecisionOracle) {
  const NoiseSchedule s = build_cosine_schedule();
  for (const auto& p : kOracle) {
    EXPECT_NEAR(s.alpha_bar[static_cast<std::size_t>(p.t)], p.value, 1e-10) << "t=" << p.t;
    EXPECT_NEAR(cosine_alpha_bar(p.t, 1000), p.value, 1e-12) << "t=" << p.t;
  }
}

TEST(NoiseSchedule, EndpointsAndMonotonicity) {
  const NoiseSchedule s = build_cosine_schedule();
  EXPECT_NEAR(s.alpha_bar[0], 1.0, 1e-12);
  EXPECT_LE(s.alpha_bar[1000], 1e-6);
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_LT(s.alpha_bar[static_cast<std::size_t>(t)], s.alpha_bar[static_cast<std::size_t>(t - 1)]);
    EXPECT_LE(s.beta[static_cast<std::size_t>(t)], NoiseSchedule::kMaxBeta);
    EXPECT_GT(s.beta[static_cast<std::size_t>(t)], 0.0);
  }
  EXPECT_EQ(s.beta[1000], NoiseSchedule::kMaxBeta);  // the only clipped step
  EXPECT_LT(s.beta[999], NoiseSchedule::kMaxBeta);
  EXPECT_NEAR(cosine_alpha_bar(1000, 1000), 0.0, 1e-30);
}

TEST(NoiseSchedule, ResampleStrides) {
  EXPECT_EQ(resample_timesteps(1000, 1), std::vector<int>{1});
  EXPECT_EQ(resample_timesteps(10, 4), (std::vector<int>{10, 7, 4, 1}));
  const auto all = resample_timesteps(50, 50);
  ASSERT_EQ(all.size(), 50u);
  for (int i = 0; i < 50; ++i) EXPECT_EQ(all[static_cast<std::size_t>(i)], 50 - i);
  const auto hundred = resample_timesteps(1000, 100);
  EXPECT_EQ(hundred.front(), 1000);
  EXPECT_EQ(hundred.back(), 1);
  for (std::size_t i = 1; i < hundred.size(); ++i) EXPECT_LT(hundred[i], hundred[i - 1]);
  EXPECT_THROW(resample_timesteps(10, 11), std::invalid_argument);
}

TEST(NoiseSchedule, RespacedCoefficientsAreDdpmPosterior) {
  const NoiseSchedule s = build_cosine_schedule(1000);
  const auto steps = respace(s, {900, 500, 100, 1});
  ASSERT_EQ(steps.size(), 4u);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& st = steps[i];
    const double ab = s.alpha_bar[static_cast<std::size_t>(st.t)];
    const double prev = i + 1 < steps.size() ? s.alpha_bar[static_cast<std::size_t>(steps[i + 1].t)] : 1.0;
    const double beta = 1.0 - ab / prev;
    EXPECT_DOUBLE_EQ(st.alpha_bar, ab);
    EXPECT_DOUBLE_EQ(st.alpha_bar_prev, prev);
    EXPECT_NEAR(st.beta, beta, 1e-15);
    EXPECT_NEAR(st.posterior_variance, beta * (1 - prev) / (1 - ab), 1e-15);
    EXPECT_NEAR(st.coef_x0, std::sqrt(prev) * beta / (1 - ab), 1e-15);
    EXPECT_NEAR(st.coef_xt, std::sqrt(1 - beta) * (1 - prev) / (1 - ab), 1e-15);
  }
  EXPECT_EQ(steps.back().posterior_variance, 0.0);
  EXPECT_EQ(steps.back().coef_x0, 1.0);
  EXPECT_THROW(respace(s, {5, 9}), std::invalid_argument);
}

TEST(NoiseSchedule, ForwardNoisingPreservesVarianceOfUnitSignal) {
  const NoiseSchedule s = build_cosine_schedule();
  Matrix<double> x0 = Matrix<double>::Constant(1, 1, 1.0), eps = Matrix<double>::Constant(1, 1, 1.0);
  for (int t : {1, 300, 700, 1000}) {
    const double a = s.sqrt_alpha_bar(t), b = s.sqrt_one_minus_alpha_bar(t);
    EXPECT_NEAR(a * a + b * b, 1.0, 1e-12);
    EXPECT_NEAR(q_sample(x0, t, eps, s)(0, 0), a + b, 1e-12);
  }
}

}  // namespace
}  // namespace dream
