#include "dream/decode_plan.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>

#include "dream/masking.hpp"

namespace dream {

double anneal_ratio(int step, int steps) {
  if (steps < 1 || step < 0 || step >= steps) throw std::invalid_argument("anneal_ratio: step out of range");
  if (step == steps - 1) return 0.0;
  return std::cos(std::numbers::pi / 2.0 * (step + 1) / steps);
}

std::vector<int> unmask_plan(int steps, int n_tokens) {
  if (steps < 1 || steps > n_tokens) throw std::invalid_argument("unmask_plan: need 1 <= steps <= n_tokens");
  std::vector<int> plan;
  plan.reserve(static_cast<std::size_t>(steps));
  int masked = n_tokens;
  for (int s = 0; s < steps; ++s) {
    int next = masked_count_for(anneal_ratio(s, steps), n_tokens);
    next = std::min(next, masked - 1);          // reveal at least one token
    next = std::max(next, steps - 1 - s);       // leave one per remaining step
    plan.push_back(masked - next);
    masked = next;
  }
  return plan;
}

int budget_to_switch(int nfe_budget, int steps, int k) {
  if (steps < 1 || k < 1) throw std::invalid_argument("budget_to_switch: steps and K must be positive");
  auto suggest = [&](int want_k) -> std::pair<int, int> {
    int best_k = -1, best_t = -1;
    for (int kk = 2; kk <= std::max(nfe_budget, 2); ++kk) {
      const int extra = nfe_budget - steps;
      if (extra <= 0 || extra % (kk - 1) != 0) continue;
      const int t = extra / (kk - 1);
      if (t < 1 || t >= steps) continue;
      if (best_k < 0 || std::abs(kk - want_k) < std::abs(best_k - want_k)) {
        best_k = kk;
        best_t = t;
      }
    }
    return {best_k, best_t};
  };
  if (k == 1) {
    if (nfe_budget != steps) {
      const auto [sk, st] = suggest(2);
      throw InfeasibleBudget("budget " + std::to_string(nfe_budget) + " with K=1 requires budget == steps (" +
                                 std::to_string(steps) + ")",
                             sk < 0 ? 1 : sk, st < 0 ? 0 : st);
    }
    return 0;
  }
  const int extra = nfe_budget - steps;
  if (extra > 0 && extra % (k - 1) == 0) {
    const int t = extra / (k - 1);
    if (t >= 1 && t < steps) return t;
  }
  const auto [sk, st] = suggest(k);
  std::string msg = "budget " + std::to_string(nfe_budget) + " is infeasible for K=" + std::to_string(k) +
                    " and " + std::to_string(steps) + " steps";
  if (sk > 0) msg += "; nearest feasible: K=" + std::to_string(sk) + " with t_switch=" + std::to_string(st);
  throw InfeasibleBudget(msg, sk, st);
}

}  // namespace dream
