#pragma once

// Step arithmetic for iterative decoding: the cosine reveal schedule and the
// compute-budget relation between candidate count and switch step.

#include <stdexcept>
#include <string>
#include <vector>

namespace dream {

/// Masking ratio remaining after `step`: cos(pi/2 * (step + 1) / steps).
double anneal_ratio(int step, int steps);

/// Tokens revealed at each step. Every entry is >= 1 and the entries sum to
/// n_tokens; requires 1 <= steps <= n_tokens.
std::vector<int> unmask_plan(int steps, int n_tokens);

class InfeasibleBudget : public std::invalid_argument {
 public:
  InfeasibleBudget(const std::string& what, int suggested_k, int suggested_switch)
      : std::invalid_argument(what), suggested_k_(suggested_k), suggested_switch_(suggested_switch) {}
  int suggested_k() const { return suggested_k_; }
  int suggested_switch() const { return suggested_switch_; }  // -1 when no suggestion exists

 private:
  int suggested_k_;
  int suggested_switch_;
};

/// T_switch with K * T_switch + (steps - T_switch) == nfe_budget. K == 1
/// requires nfe_budget == steps and yields 0 (plain decoding).
int budget_to_switch(int nfe_budget, int steps, int k);

/// Decoding steps executed over all trajectories.
inline int trajectory_steps(int steps, int k, int t_switch) { return k <= 1 ? steps : k * t_switch + (steps - t_switch); }

}  // namespace dream
