#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "fblab/env.hpp"
#include "fblab/mlp.hpp"
#include "fblab/rng.hpp"

namespace fblab {

struct TabularPolicy {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> q;  // row-major [state][action]
  double epsilon = 0.1;   // exploration used when acting stochastically

  double value(int s, int a) const { return q[static_cast<std::size_t>(s) * n_actions + a]; }
  // Lowest action index wins ties.
  int greedy_action(int s) const;
  bool operator==(const TabularPolicy&) const = default;
};

// a = clip(-k1 * p - k2 * v) with optional Gaussian exploration noise.
struct PdPolicy {
  double k1 = 0.0;
  double k2 = 0.0;
  double action_noise = 0.1;
  bool operator==(const PdPolicy&) const = default;
};

struct RandomPolicy {
  bool operator==(const RandomPolicy&) const = default;
};

// Behavioural-cloning network over observations: logits (GridNav) or the
// scalar action (PointMass).
struct ClonedPolicy {
  Mlp net;
  bool operator==(const ClonedPolicy&) const = default;
};

struct Policy {
  std::variant<TabularPolicy, PdPolicy, RandomPolicy, ClonedPolicy> kind = RandomPolicy{};
  bool greedy_eval = true;

  // greedy=true picks the deterministic action (argmax / noiseless gains).
  double act(const EnvSpec& spec, std::span<const double> obs, Rng& rng, bool greedy) const;
  void check_compatible(const EnvSpec& spec) const;
  bool operator==(const Policy&) const = default;
};

struct Checkpoint {
  Policy policy;
  long train_step = 0;
  double eval_return = 0.0;
  bool operator==(const Checkpoint&) const = default;
};

struct ExpertConfig {
  long total_steps = 20000;
  int n_checkpoints = 20;
  // Tabular Q-learning.
  double learning_rate = 0.5;
  double epsilon = 0.2;
  double behavior_epsilon = 0.1;  // stored in checkpoints, used by rollouts
  // PointMass gain search.
  int pd_refine_rounds = 8;
  int pd_grid_points = 5;
  double pd_action_noise = 0.1;
  // Evaluation protocol.
  int eval_episodes = 10;
  std::uint64_t eval_seed = 20240601;
  bool stochastic_eval = false;
};

struct EvalResult {
  double mean = 0.0;
  std::vector<double> returns;  // undiscounted ground-truth episode returns
};

EvalResult evaluate_policy(const Policy& policy, const EnvSpec& spec, int n_episodes, std::uint64_t seed,
                           bool greedy = true);

// Checkpoints ordered by train_step; the last one is the trained expert.
std::vector<Checkpoint> train_expert(const EnvSpec& spec, const ExpertConfig& config, std::uint64_t seed);

struct ValueTable {
  enum class Kind { Exact, FiniteHorizon, Approx };
  // Fitted-value-iteration grid for PointMass.
  struct Grid {
    double p_lo = -4.0, p_hi = 4.0;
    double v_lo = -3.0, v_hi = 3.0;
    int p_points = 81, v_points = 61;
    std::vector<double> actions{-1.0, -0.5, 0.0, 0.5, 1.0};
  };

  Kind kind = Kind::Exact;
  EnvSpec spec;
  double gamma = 0.99;
  std::vector<double> values;  // Exact: per cell; FiniteHorizon: (horizon+1) x cells; Approx: grid
  Grid grid;
  double residual = 0.0;  // final sup-norm Bellman residual

  bool approx() const { return kind == Kind::Approx; }
  double at(const EnvState& state) const;
};

// Infinite-horizon value iteration on GridNav (goal absorbing, V(goal) = 0).
ValueTable exact_value_function(const EnvSpec& spec, double gamma);
// Time-indexed optimal values for the fixed-horizon GridNav task.
ValueTable finite_horizon_value_function(const EnvSpec& spec, double gamma);
// Discretised fitted value iteration for PointMass; flagged approx.
ValueTable approx_value_function(const EnvSpec& spec, double gamma, const ValueTable::Grid& grid = {});

// Greedy tabular policy from a value table (GridNav, exact kinds).
Policy greedy_policy_from_values(const ValueTable& values);

struct ExpertEnsemble {
  std::vector<Policy> experts;      // sorted by eval_return, best first
  std::vector<double> eval_returns;
  std::vector<int> run_indices;     // which run each expert came from
  std::optional<ValueTable> exact_values;
};

// Keeps each run's final checkpoint and returns the best k; ties go to the
// lower run index.
ExpertEnsemble select_top_experts(std::span<const std::vector<Checkpoint>> runs, int k);

}  // namespace fblab
