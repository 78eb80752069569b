#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "fblab/downstream.hpp"
#include "fblab/env.hpp"
#include "fblab/expert.hpp"
#include "fblab/feedback.hpp"
#include "fblab/reward.hpp"
#include "fblab/rollout.hpp"

namespace fblab {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

std::string hex64(std::uint64_t v);
// FNV-1a over the serialized form; stable across runs and platforms.
std::string content_hash(std::string_view bytes);

// JSON conversions (found by nlohmann through ADL).
void to_json(json& j, const EnvSpec& s);
void from_json(const json& j, EnvSpec& s);
void to_json(json& j, const EnvState& s);
void from_json(const json& j, EnvState& s);
void to_json(json& j, const Transition& t);
void from_json(const json& j, Transition& t);
void to_json(json& j, const Segment& s);
void from_json(const json& j, Segment& s);
void to_json(json& j, const RatingInstance& r);
void from_json(const json& j, RatingInstance& r);
void to_json(json& j, const SegmentPreference& p);
void from_json(const json& j, SegmentPreference& p);
void to_json(json& j, const DemoInstance& d);
void from_json(const json& j, DemoInstance& d);
void to_json(json& j, const CorrectionInstance& c);
void from_json(const json& j, CorrectionInstance& c);
void to_json(json& j, const ClusterDescription& c);
void from_json(const json& j, ClusterDescription& c);
void to_json(json& j, const ClusterPreference& p);
void from_json(const json& j, ClusterPreference& p);
void to_json(json& j, const Mlp& m);
void from_json(const json& j, Mlp& m);
void to_json(json& j, const Policy& p);
void from_json(const json& j, Policy& p);
void to_json(json& j, const Checkpoint& c);
void from_json(const json& j, Checkpoint& c);
void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);
void to_json(json& j, const RolloutConfig& c);
void from_json(const json& j, RolloutConfig& c);

// Line-delimited dataset file: a header record, then one record per instance.
void write_dataset(const FeedbackDataset& dataset, const std::filesystem::path& path);
// Raises SchemaError, TruncatedFileError, HashMismatchError or (when
// `expected` is given and differs) DatasetTypeError.
FeedbackDataset read_dataset(const std::filesystem::path& path, std::optional<FeedbackType> expected = std::nullopt);
std::string dataset_hash(const FeedbackDataset& dataset);

void write_buffer(const RolloutBuffer& buffer, const std::filesystem::path& path);
RolloutBuffer read_buffer(const std::filesystem::path& path);
std::string buffer_hash(const RolloutBuffer& buffer);

struct StoredRewardModel {
  RewardEnsemble ensemble;
  TrainConfig config;
  FeedbackType feedback_type = FeedbackType::Evaluative;
  std::string dataset_hash;
  bool operator==(const StoredRewardModel&) const = default;
};
void write_reward_model(const StoredRewardModel& model, const std::filesystem::path& path);
StoredRewardModel read_reward_model(const std::filesystem::path& path);

struct ExpertRuns {
  EnvSpec spec;
  std::vector<std::vector<Checkpoint>> runs;
  bool operator==(const ExpertRuns&) const = default;
};
void write_experts(const ExpertRuns& experts, const std::filesystem::path& path);
ExpertRuns read_experts(const std::filesystem::path& path);

// Epoch traces as CSV rows (member, epoch, train_loss, val_loss, best_val_loss).
void write_loss_traces(const std::vector<std::vector<EpochRecord>>& traces, const std::filesystem::path& path);
// Learning curve CSV (step, eval_return_mean, eval_return_min, eval_return_max).
void write_curve(const std::vector<CurvePoint>& curve, const std::filesystem::path& path);

// Whole-file helpers with atomic replacement.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace fblab
