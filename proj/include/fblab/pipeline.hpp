#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fblab/downstream.hpp"
#include "fblab/experiment.hpp"
#include "fblab/noise.hpp"
#include "fblab/reports.hpp"
#include "fblab/reward.hpp"

namespace fblab {

inline constexpr int kConfigSchemaVersion = 1;

struct PipelineConfig {
  EnvSpec spec = EnvSpec::grid_nav();
  std::uint64_t seed = 1;
  // Stamped into dataset headers; fixed so reruns are byte-identical.
  std::string created_at = "1970-01-01T00:00:00Z";
  int threads = 1;

  SetupConfig setup;
  std::vector<FeedbackType> types{std::begin(kAllFeedbackTypes), std::end(kAllFeedbackTypes)};
  GeneratorConfig generator;
  double beta = 0.0;
  NoiseVariant noise_variant = NoiseVariant::TruncatedGaussian;
  TrainConfig train;

  AgentConfig agent;
  bool standardize_learned = true;
  // "ground_truth", a feedback type name, "joint_average" or
  // "joint_uncertainty_weighted". Empty selects all of them.
  std::vector<std::string> agent_sources;
  bool behavioral_cloning = true;
  BcConfig bc;

  int sequence_steps = 100;
  int histogram_bins = 20;
  bool noise_sweep = false;
  std::vector<double> sweep_betas{0.0, 0.25, 0.5, 0.75, 1.5, 3.0};
  std::vector<std::uint64_t> sweep_seeds{1, 2, 3};
  std::vector<FeedbackType> sweep_types{FeedbackType::Evaluative};

  // Small budgets covering the whole loop on GridNav.
  static PipelineConfig smoke();
  void validate() const;
};

nlohmann::json to_json_value(const PipelineConfig& c);
// Unknown keys and wrong types raise ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

enum class Stage { Experts, Collect, Feedback, Noise, Reward, Agents, Reports };
inline constexpr Stage kAllStages[] = {Stage::Experts, Stage::Collect, Stage::Feedback, Stage::Noise,
                                       Stage::Reward,  Stage::Agents,  Stage::Reports};
std::string_view to_string(Stage s);

struct PipelineRun {
  std::vector<Stage> executed;
  std::vector<Stage> skipped;
  std::filesystem::path manifest;
};

// Runs every stage up to and including `until`. A stage is skipped when the
// manifest holds a completed entry with the same key and all its artifacts
// still hash to the recorded values. Failures mark the stage in the manifest
// before rethrowing.
PipelineRun run_pipeline(const PipelineConfig& config, const std::filesystem::path& out, Stage until = Stage::Reports);

// Output directory when none is given: $FBLAB_CACHE_DIR (or ./fblab-cache)
// joined with the config hash.
std::filesystem::path default_output_dir(const PipelineConfig& config);
std::string config_hash(const PipelineConfig& config);

}  // namespace fblab
