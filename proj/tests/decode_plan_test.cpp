#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "dream/decode_plan.hpp"
#include "dream/masking.hpp"

namespace dream {
namespace {

TEST(DecodePlan, AnnealRatioEndpoints) {
  EXPECT_NEAR(anneal_ratio(0, 64), std::cos(std::numbers::pi / 128), 1e-15);
  EXPECT_EQ(anneal_ratio(63, 64), 0.0);
  EXPECT_EQ(anneal_ratio(0, 1), 0.0);
  for (int s = 1; s < 64; ++s) EXPECT_LE(anneal_ratio(s, 64), anneal_ratio(s - 1, 64));
}

// Independent reconstruction: masked count after step s is ceil(n * r_s),
// forced to shrink by at least one per step and to leave one token for each
// remaining step.
std::vector<int> reference_plan(int S, int n) {
  std::vector<int> plan;
  int masked = n;
  for (int s = 0; s < S; ++s) {
    const double r = s == S - 1 ? 0.0 : std::cos(std::numbers::pi / 2 * (s + 1) / S);
    int next = static_cast<int>(std::ceil(r * n - 1e-9));
    next = std::max(std::min(next, masked - 1), S - 1 - s);
    plan.push_back(masked - next);
    masked = next;
  }
  return plan;
}

TEST(DecodePlan, EveryStepCountRevealsEverythingOncePerStep) {
  const int n = 64;
  for (int S = 1; S <= 64; ++S) {
    const auto plan = unmask_plan(S, n);
    ASSERT_EQ(static_cast<int>(plan.size()), S);
    EXPECT_EQ(std::accumulate(plan.begin(), plan.end(), 0), n) << "S=" << S;
    for (int k : plan) EXPECT_GE(k, 1) << "S=" << S;
    EXPECT_EQ(plan, reference_plan(S, n)) << "S=" << S;
  }
}

TEST(DecodePlan, RejectsMoreStepsThanTokens) {
  EXPECT_THROW(unmask_plan(65, 64), std::invalid_argument);
  EXPECT_THROW(unmask_plan(0, 64), std::invalid_argument);
}

TEST(DecodePlan, BudgetToSwitch) {
  EXPECT_EQ(budget_to_switch(128, 64, 9), 8);
  EXPECT_EQ(budget_to_switch(128, 64, 17), 4);
  EXPECT_EQ(budget_to_switch(128, 64, 5), 16);
  EXPECT_EQ(budget_to_switch(64, 64, 1), 0);
  for (int k : {3, 5, 9, 17, 33}) {
    const int t = budget_to_switch(128, 64, k);
    EXPECT_EQ(trajectory_steps(64, k, t), 128);
  }
}

TEST(DecodePlan, InfeasibleBudgetSuggestsAlternative) {
  try {
    budget_to_switch(128, 64, 6);  // 64 / 5 is not integral
    FAIL() << "expected InfeasibleBudget";
  } catch (const InfeasibleBudget& e) {
    ASSERT_GT(e.suggested_k(), 1);
    EXPECT_EQ(trajectory_steps(64, e.suggested_k(), e.suggested_switch()), 128);
  }
  EXPECT_THROW(budget_to_switch(128, 64, 2), InfeasibleBudget);  // would need t_switch == steps
  EXPECT_THROW(budget_to_switch(60, 64, 3), InfeasibleBudget);
  EXPECT_THROW(budget_to_switch(100, 64, 1), InfeasibleBudget);
}

}  // namespace
}  // namespace dream
