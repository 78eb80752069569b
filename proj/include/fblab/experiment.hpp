#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fblab/env.hpp"
#include "fblab/expert.hpp"
#include "fblab/feedback.hpp"
#include "fblab/noise.hpp"
#include "fblab/reward.hpp"
#include "fblab/rollout.hpp"

namespace fblab {

struct GeneratorConfig {
  int n_bins = 10;
  int n_pairs = 0;  // comparative and descriptive-preference pairs; 0 = buffer size
  double exclusion_frac = 0.1;
  int retry_multiplier = 20;
  bool allow_partial = false;
  int demo_segment_len = 50;
  int descriptive_k = 0;  // 0 = buffer size
  int kmeans_batch = 1000;
  int kmeans_max_epochs = 100;
  double kmeans_tolerance = 1e-6;
};

nlohmann::json to_json_value(const GeneratorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

// Builds one dataset per requested type from a buffer. Demonstrative and
// corrective share one expert pass; descriptive preferences reuse the
// descriptive clusters.
std::map<FeedbackType, FeedbackDataset> generate_feedback(std::span<const FeedbackType> types,
                                                          const RolloutBuffer& buffer, std::span<const Policy> experts,
                                                          const GeneratorConfig& config, std::uint64_t seed,
                                                          const std::string& created_at,
                                                          const std::string& buffer_hash);

// Trained experts, the feedback buffer and a disjoint held-out buffer.
struct ExperimentSetup {
  EnvSpec spec;
  std::vector<std::vector<Checkpoint>> runs;
  ExpertEnsemble experts;
  RolloutBuffer buffer;
  RolloutBuffer holdout;
};

struct SetupConfig {
  int n_runs = 4;
  ExpertConfig expert;
  RolloutConfig rollout;  // seed is overwritten from the setup seed
  int holdout_segments = 1000;
};

ExperimentSetup build_setup(const EnvSpec& spec, const SetupConfig& config, std::uint64_t seed);

// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

// Per-segment predicted sums on a buffer.
std::vector<double> predicted_sums(const RewardEnsemble& model, const RolloutBuffer& buffer);

// Correlation of a learned reward with ground-truth discounted returns.
std::optional<double> reward_correlation(const RewardEnsemble& model, const RolloutBuffer& buffer, double gamma);

struct PolicyAgreement {
  // Share of demo transitions whose action the policy reproduces (GridNav:
  // same action; PointMass: within 10% of the action range).
  double per_transition = 0.0;
  // GridNav: share of distinct demo-visited cells where the greedy action is
  // a most frequent demo action there. PointMass: same as per_transition.
  double per_state = 0.0;
};

PolicyAgreement policy_agreement(const Policy& policy, const std::vector<DemoInstance>& demos, const EnvSpec& spec);

}  // namespace fblab
