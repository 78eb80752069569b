#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fblab/downstream.hpp"
#include "fblab/experiment.hpp"
#include "fblab/feedback.hpp"
#include "fblab/noise.hpp"
#include "fblab/reward.hpp"

namespace fblab {

// Written in place of correlations that are undefined.
inline constexpr const char* kUndefinedMarker = "NA";

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
  std::string to_csv() const;
};

struct Report {
  enum class Kind { Correlation, NoiseSweep, SequenceTrace, RLComparison, DatasetStats };
  Kind kind = Kind::Correlation;
  std::vector<Table> tables;
  nlohmann::json summary = nlohmann::json::object();

  const Table& table(const std::string& name) const;
  // One <table>.csv per table plus summary.json.
  void write(const std::filesystem::path& dir) const;
};

std::string_view to_string(Report::Kind kind);

// Shortest round-trip decimal.
std::string format_number(double v);
std::string format_optional(const std::optional<double>& v);

struct NamedPredictions {
  std::string name;
  std::vector<double> values;  // one per validation segment
};

// Pairwise Pearson matrix over the sources plus a leading "ground_truth"
// entry holding the discounted returns.
Report correlation_report(const std::vector<NamedPredictions>& sources, const std::vector<double>& ground_truth);
Report correlation_report(const std::vector<std::pair<std::string, const RewardEnsemble*>>& models,
                          const RolloutBuffer& validation, double gamma);

struct NoiseSweepConfig {
  EnvSpec spec = EnvSpec::grid_nav();
  SetupConfig setup;
  GeneratorConfig generator;
  TrainConfig train;
  std::vector<double> betas{0.0, 0.25, 0.5, 0.75, 1.5, 3.0};
  std::vector<FeedbackType> types{FeedbackType::Evaluative};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  NoiseVariant variant = NoiseVariant::TruncatedGaussian;
  int threads = 1;
};

struct SweepCell {
  FeedbackType type = FeedbackType::Evaluative;
  double beta = 0.0;
  std::uint64_t seed = 0;
  std::optional<double> correlation;
  std::string error;  // empty when the cell succeeded
};

struct NoiseSweepResult {
  std::vector<SweepCell> cells;  // ordered by (type, beta, seed)
  Report report;
};

// Regenerate, perturb, train and correlate per (type, beta, seed). A failing
// cell records its error and leaves the rest of the grid untouched.
NoiseSweepResult noise_sweep(const NoiseSweepConfig& config);

// Per-step ground-truth and predicted rewards along one trajectory of
// `policy`, restarting episodes until n_steps transitions are collected.
Report sequence_trace(const std::vector<std::pair<std::string, const RewardEnsemble*>>& models, const EnvSpec& spec,
                      const Policy& policy, int n_steps = 100, std::uint64_t seed = 0);

// Histograms and soundness counts for one dataset.
Report dataset_stats(const FeedbackDataset& dataset, int n_bins = 20);

struct RlEntry {
  std::string source;
  std::uint64_t seed = 0;
  double final_return = 0.0;
  std::vector<CurvePoint> curve;
};

// Final returns per source relative to the ground-truth and expert returns.
Report rl_comparison(const std::vector<RlEntry>& entries, double expert_return);

}  // namespace fblab
