#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "fblab/env.hpp"
#include "fblab/expert.hpp"
#include "fblab/reward.hpp"

namespace fblab {

inline constexpr double kStdFloor = 1e-8;

// Welford accumulator; variance() is the population variance.
class RunningStats {
 public:
  void update(double x);
  long count() const { return count_; }
  double mean() const { return mean_; }
  double m2() const { return m2_; }
  double variance() const { return count_ > 0 ? m2_ / static_cast<double>(count_) : 0.0; }
  double stddev() const;

 private:
  long count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// (r - mean) / max(std, kStdFloor). Callers update the stats with r first.
double standardize(const RunningStats& stats, double r);
// Update-then-standardize.
double observe_and_standardize(RunningStats& stats, double r);

double combine_average(std::span<const double> predictions);
// sum(mu_i / sigma_i) / sum(1 / sigma_i) with sigma floored at kStdFloor.
double combine_uncertainty_weighted(std::span<const double> means, std::span<const double> stds);

struct RewardSource {
  enum class Kind { GroundTruth, Single, JointAverage, JointUncertaintyWeighted };
  Kind kind = Kind::GroundTruth;
  std::vector<std::shared_ptr<const RewardEnsemble>> models;
  bool standardize = false;

  static RewardSource ground_truth(bool standardize = false);
  static RewardSource single(std::shared_ptr<const RewardEnsemble> model, bool standardize = true);
  static RewardSource joint_average(std::vector<std::shared_ptr<const RewardEnsemble>> models);
  static RewardSource joint_uncertainty_weighted(std::vector<std::shared_ptr<const RewardEnsemble>> models);
  void validate(const EnvSpec& spec) const;
};

std::string_view to_string(RewardSource::Kind kind);

struct WrappedTransition {
  Transition transition;  // reward replaced by the agent-visible value
  double ground_truth_reward = 0.0;
};

// Turns a reward source into per-step agent rewards. Owns the per-source
// running statistics of one training run.
class RewardWrapper {
 public:
  RewardWrapper(const EnvSpec& spec, RewardSource source);
  // Agent-visible reward for a ground-truth transition; updates the stats.
  double reward(const Transition& t);
  WrappedTransition wrapped_step(Env& env, double action);
  const RewardSource& source() const { return source_; }
  const std::vector<RunningStats>& stats() const { return stats_; }

 private:
  struct Prediction {
    std::vector<double> mean;
    std::vector<double> spread;
  };
  const Prediction& predict(const Transition& t);

  EnvSpec spec_;
  RewardSource source_;
  std::vector<RunningStats> stats_;
  std::map<std::vector<double>, Prediction> cache_;  // discrete envs only
  Prediction scratch_;
};

struct AgentConfig {
  enum class Algorithm { QLearning, CemPolicySearch };
  Algorithm algorithm = Algorithm::QLearning;
  long budget = 20000;     // environment steps
  long eval_interval = 1000;
  int eval_episodes = 5;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 20240601;
  // Q-learning.
  double learning_rate = 0.5;
  double epsilon = 0.2;
  // CEM over PD gains.
  int cem_population = 16;
  int cem_elites = 4;
  int cem_episodes = 1;
  double cem_init_std = 3.0;

  static AgentConfig for_env(const EnvSpec& spec);
  void validate(const EnvSpec& spec) const;
};

struct CurvePoint {
  long step = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct AgentResult {
  std::vector<CurvePoint> curve;  // ground-truth evaluation returns
  Policy policy;
  double final_return = 0.0;  // ground-truth mean of the final policy
};

AgentResult train_agent(const EnvSpec& spec, const RewardSource& source, const AgentConfig& config);

}  // namespace fblab
