#pragma once

#include <cstdint>
#include "json.hpp"
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fblab/env.hpp"
#include "fblab/expert.hpp"
#include "fblab/kmeans.hpp"
#include "fblab/rollout.hpp"

namespace fblab {

enum class FeedbackType { Evaluative, Comparative, Demonstrative, Corrective, Descriptive, DescriptivePreference };

inline constexpr FeedbackType kAllFeedbackTypes[] = {
    FeedbackType::Evaluative,  FeedbackType::Comparative, FeedbackType::Demonstrative,
    FeedbackType::Corrective,  FeedbackType::Descriptive, FeedbackType::DescriptivePreference};

std::string_view to_string(FeedbackType t);
FeedbackType feedback_type_from_string(std::string_view name);

enum class PreferenceLabel { FirstPreferred, SecondPreferred };

struct RatingInstance {
  Segment segment;
  int rating = 1;  // 1..=n_bins
  double underlying_return = 0.0;
  bool operator==(const RatingInstance&) const = default;
};

struct SegmentPreference {
  Segment first;
  Segment second;
  PreferenceLabel label = PreferenceLabel::FirstPreferred;
  double first_return = 0.0;
  double second_return = 0.0;
  double return_gap() const { return first_return - second_return; }
  bool operator==(const SegmentPreference&) const = default;
};

struct DemoInstance {
  Segment demo_segment;
  EnvState origin_snapshot;
  double expert_return = 0.0;
  double original_return = 0.0;
  bool operator==(const DemoInstance&) const = default;
};

// (original, improved) pair sharing an initial snapshot. The label starts as
// SecondPreferred (the improvement) and may be flipped by noise.
struct CorrectionInstance {
  Segment original;
  Segment improved;
  double original_return = 0.0;
  double improved_return = 0.0;
  PreferenceLabel label = PreferenceLabel::SecondPreferred;
  bool operator==(const CorrectionInstance&) const = default;
};

struct ClusterDescription {
  std::vector<double> representative;  // mean raw encoding of the members
  double mean_reward = 0.0;
  int member_count = 1;
  int cluster_id = 0;
  bool operator==(const ClusterDescription&) const = default;
};

struct ClusterPreference {
  ClusterDescription first;
  ClusterDescription second;
  PreferenceLabel label = PreferenceLabel::FirstPreferred;
  bool operator==(const ClusterPreference&) const = default;
};

// Provenance carried by every dataset.
struct Provenance {
  EnvId env_id = EnvId::GridNav;
  std::uint64_t seed = 0;
  double beta = 0.0;
  std::string noise_variant = "none";
  std::uint64_t noise_seed = 0;
  nlohmann::json generator_config = nlohmann::json::object();
  std::string created_at;
  std::string source_buffer_hash;
  bool operator==(const Provenance&) const = default;
};

using FeedbackInstances =
    std::variant<std::vector<RatingInstance>, std::vector<SegmentPreference>, std::vector<DemoInstance>,
                 std::vector<CorrectionInstance>, std::vector<ClusterDescription>, std::vector<ClusterPreference>>;

struct FeedbackDataset {
  FeedbackType type = FeedbackType::Evaluative;
  Provenance provenance;
  FeedbackInstances instances;

  std::size_t size() const;
  bool operator==(const FeedbackDataset&) const = default;

  template <class T>
  const std::vector<T>& as() const {
    return std::get<std::vector<T>>(instances);
  }
  template <class T>
  std::vector<T>& as() {
    return std::get<std::vector<T>>(instances);
  }
};

// Equal-width bins over calibration returns; bin 0 holds the lowest returns.
struct BinCalibration {
  int n_bins = 10;
  double lo = 0.0;
  double hi = 1.0;
  double bin_width = 0.1;

  // Half-open bins with a closed top edge; out-of-range values clamp.
  int bin_index(double value) const;
  int rating(double value) const { return bin_index(value) + 1; }
  bool operator==(const BinCalibration&) const = default;
};

BinCalibration calibrate_bins(std::span<const double> returns, int n_bins = 10);
BinCalibration calibrate_bins(const RolloutBuffer& buffer, int n_bins, double gamma);

std::vector<RatingInstance> gen_evaluative(const RolloutBuffer& buffer, const BinCalibration& calibration,
                                           double gamma);

struct ComparativeConfig {
  int n_pairs = 0;  // 0 selects one pair per segment
  double exclusion_frac = 0.1;
  int retry_multiplier = 20;
  bool allow_partial = false;
  std::uint64_t seed = 0;
};

std::vector<SegmentPreference> gen_comparative(const RolloutBuffer& buffer, double gamma,
                                               const ComparativeConfig& config);

struct InstructiveFeedback {
  std::vector<DemoInstance> demos;
  std::vector<CorrectionInstance> corrections;
  std::vector<int> skipped_segments;  // snapshot restore failures
};

// Every expert rolls out from each segment's restored snapshot; the best demo
// is kept when it strictly beats the original return.
InstructiveFeedback gen_demonstrative_and_corrective(const RolloutBuffer& buffer, std::span<const Policy> experts,
                                                     double gamma, int segment_len);

// Advice pairs (observation, expert action) for settings without state
// resets. Not part of the default pipeline.
struct ActionAdvice {
  Observation obs;
  double expert_action = 0.0;
};
std::vector<ActionAdvice> gen_action_advice(const RolloutBuffer& buffer, const Policy& expert);

struct DescriptiveConfig {
  int k = 0;  // 0 selects the number of segments in the buffer
  int batch_size = 1000;
  int max_epochs = 100;
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
};

std::vector<ClusterDescription> gen_descriptive(const RolloutBuffer& buffer, const DescriptiveConfig& config);

struct DescriptivePreferenceConfig {
  int n_pairs = 0;  // 0 selects one pair per cluster
  int retry_multiplier = 20;
  bool allow_partial = false;
  std::uint64_t seed = 0;
};

std::vector<ClusterPreference> gen_descriptive_prefs(std::span<const ClusterDescription> clusters,
                                                     const DescriptivePreferenceConfig& config);

// V_e(s_0) - (sum_i gamma^i r_i + gamma^H V_e(s_H)).
double optimality_gap(const Segment& segment, const ValueTable& values, double gamma);

// Ratings from binning the negated optimality gap instead of returns.
std::vector<RatingInstance> gen_evaluative_regret(const RolloutBuffer& buffer, const ValueTable& values,
                                                  double gamma, int n_bins = 10);

}  // namespace fblab
