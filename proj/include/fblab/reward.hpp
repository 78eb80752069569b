#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fblab/env.hpp"
#include "fblab/expert.hpp"
#include "fblab/feedback.hpp"
#include "fblab/mlp.hpp"

namespace fblab {

enum class LossKind { Mse, BradleyTerry };

// Loss used for a feedback type: ratings and descriptions regress, the rest
// are pairwise.
LossKind loss_kind_for(FeedbackType type);

// Mean over members; spread is the population std across members.
struct RewardEnsemble {
  EnvSpec spec;
  std::vector<Mlp> members;

  int feature_dim() const;
  // One row per state-action encoding.
  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const;
  Eigen::VectorXd spread(const Eigen::MatrixXd& features) const;
  double predict_step(std::span<const double> features) const;
  double predict_segment(const Segment& segment) const;
  bool operator==(const RewardEnsemble&) const = default;
};

struct TrainConfig {
  std::vector<int> hidden{64, 64, 64};
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  int batch_size = 128;
  int max_epochs = 100;
  int patience = 5;
  double beta_rationality = 1.0;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  int n_members = 4;
  int threads = 1;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Deduplicated state-action encodings shared by all items of a training set.
class FeatureTable {
 public:
  explicit FeatureTable(int dim = 0) : dim_(dim) {}
  int dim() const { return dim_; }
  int intern(std::span<const double> features);
  Eigen::Index rows() const { return static_cast<Eigen::Index>(data_.size()) / std::max(dim_, 1); }
  std::span<const double> row(int i) const { return {data_.data() + static_cast<std::size_t>(i) * dim_, static_cast<std::size_t>(dim_)}; }

 private:
  int dim_;
  std::vector<double> data_;
  std::map<std::vector<double>, int> index_;
};

// A segment as (row, multiplicity) terms: its predicted reward is the
// weighted sum of per-row outputs.
struct WeightedRows {
  std::vector<int> rows;
  std::vector<double> counts;
};

// Training items in network-ready form. For MSE items `target` is v_fb; for
// pairwise items it is 1 when `first` is preferred and 0 otherwise.
struct LabeledFeedback {
  LossKind kind = LossKind::Mse;
  FeatureTable table;
  std::vector<WeightedRows> first;
  std::vector<WeightedRows> second;
  std::vector<double> target;

  std::size_t size() const { return target.size(); }
  WeightedRows encode(const EnvSpec& spec, const Segment& segment);
  WeightedRows encode_single(std::span<const double> features);
  void add_regression(WeightedRows item, double value);
  void add_preference(WeightedRows a, WeightedRows b, bool first_preferred);
};

// Converts a dataset to training items. Pair order is shuffled with `seed`
// so that both label classes occur; demonstrations are paired 1:1 with
// length-matched random-policy segments.
LabeledFeedback to_labeled(const FeedbackDataset& dataset, const EnvSpec& spec, std::uint64_t seed);

double predict_segment_reward(const Mlp& net, const EnvSpec& spec, const Segment& segment);
double predict_rows(const Mlp& net, const FeatureTable& table, const WeightedRows& item);

// Log-space logistic of beta * (sum_a - sum_b).
double bt_prob(double sum_a, double sum_b, double beta_rationality);
double bt_prob(const Mlp& net, const EnvSpec& spec, const Segment& a, const Segment& b, double beta_rationality);

// Item-index batches into a LabeledFeedback; empty batches raise DomainError.
double mse_loss(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch);
double bt_loss(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch,
               double beta_rationality);
double loss_of(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch,
               double beta_rationality);
// Analytic gradient of loss_of w.r.t. the flat parameters.
Eigen::VectorXd gradient_of_loss(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch,
                                 double beta_rationality, double* loss_out = nullptr);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double best_val_loss = 0.0;
};

struct TrainResult {
  RewardEnsemble ensemble;
  std::vector<std::vector<EpochRecord>> traces;  // one per member
  std::size_t n_train = 0;
  std::size_t n_val = 0;
};

TrainResult train_reward_model(const LabeledFeedback& data, const EnvSpec& spec, const TrainConfig& config);
TrainResult train_reward_model(const FeedbackDataset& dataset, const EnvSpec& spec, const TrainConfig& config);

// Random-action segments under the rollout protocol: uniform start inside a
// random-policy episode, truncated at termination or max_len.
std::vector<Segment> sample_random_policy_segments(const EnvSpec& spec, int n, int max_len, std::uint64_t seed);
// One random segment per requested length.
std::vector<Segment> sample_matched_random_segments(const EnvSpec& spec, std::span<const int> lengths,
                                                    std::uint64_t seed);

struct BcConfig {
  std::vector<int> hidden{32, 32};
  double learning_rate = 1e-3;
  int batch_size = 32;
  int epochs = 20;
  double entropy_coef = 1e-3;  // GridNav only
  std::uint64_t seed = 0;
};

Policy behavioral_cloning(const std::vector<DemoInstance>& demos, const EnvSpec& spec, const BcConfig& config);

}  // namespace fblab
