#include "fblab/reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include "fblab/errors.hpp"
#include "fblab/rollout.hpp"

namespace fblab {

LossKind loss_kind_for(FeedbackType type) {
  return type == FeedbackType::Evaluative || type == FeedbackType::Descriptive ? LossKind::Mse
                                                                                : LossKind::BradleyTerry;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || weight_decay < 0.0 || batch_size < 1 || max_epochs < 1 || patience < 1 ||
      !(beta_rationality > 0.0) || n_members < 1)
    throw ConfigError("invalid reward training configuration");
  if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must lie in [0, 1)");
  for (int h : hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
}

// ---------------------------------------------------------------- ensemble

int RewardEnsemble::feature_dim() const { return members.empty() ? 0 : members.front().input_dim(); }

Eigen::VectorXd RewardEnsemble::predict(const Eigen::MatrixXd& features) const {
  if (members.empty()) throw ConfigError("empty reward ensemble");
  if (features.cols() != feature_dim()) throw ShapeError("feature dimension does not match the reward model");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(features.rows());
  for (const auto& m : members) sum += m.forward(features).col(0);
  return sum / static_cast<double>(members.size());
}

Eigen::VectorXd RewardEnsemble::spread(const Eigen::MatrixXd& features) const {
  if (members.empty()) throw ConfigError("empty reward ensemble");
  if (features.cols() != feature_dim()) throw ShapeError("feature dimension does not match the reward model");
  const auto n = static_cast<double>(members.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(features.rows());
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(features.rows());
  for (const auto& m : members) {
    const Eigen::VectorXd y = m.forward(features).col(0);
    sum += y;
    sq += y.array().square().matrix();
  }
  const Eigen::ArrayXd mean = sum.array() / n;
  return (sq.array() / n - mean.square()).max(0.0).sqrt().matrix();
}

double RewardEnsemble::predict_step(std::span<const double> features) const {
  const Eigen::MatrixXd x =
      Eigen::Map<const Eigen::RowVectorXd>(features.data(), static_cast<Eigen::Index>(features.size()));
  return predict(x)(0);
}

namespace {

Eigen::MatrixXd segment_features(const EnvSpec& spec, const Segment& segment, int dim) {
  if (dim != spec.feature_dim()) throw ShapeError("reward model input does not match the environment encoding");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(segment.size()), dim);
  for (std::size_t i = 0; i < segment.size(); ++i) {
    const auto f = encode(spec, segment.transitions[i]);
    for (int j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), j) = f[j];
  }
  return x;
}

}  // namespace

double RewardEnsemble::predict_segment(const Segment& segment) const {
  if (segment.empty()) return 0.0;
  return predict(segment_features(spec, segment, feature_dim())).sum();
}

double predict_segment_reward(const Mlp& net, const EnvSpec& spec, const Segment& segment) {
  const Eigen::MatrixXd x = segment_features(spec, segment, net.input_dim());
  if (x.rows() == 0) return 0.0;
  return net.forward(x).sum();
}

// ---------------------------------------------------------------- encoding

int FeatureTable::intern(std::span<const double> features) {
  if (static_cast<int>(features.size()) != dim_) throw ShapeError("feature vector has the wrong dimension");
  std::vector<double> key(features.begin(), features.end());
  const auto [it, inserted] = index_.emplace(std::move(key), static_cast<int>(rows()));
  if (inserted) data_.insert(data_.end(), features.begin(), features.end());
  return it->second;
}

WeightedRows LabeledFeedback::encode(const EnvSpec& spec, const Segment& segment) {
  if (table.dim() != spec.feature_dim()) throw ShapeError("feature table does not match the environment");
  WeightedRows w;
  for (const auto& t : segment.transitions) {
    const int r = table.intern(fblab::encode(spec, t));
    const auto it = std::find(w.rows.begin(), w.rows.end(), r);
    if (it == w.rows.end()) {
      w.rows.push_back(r);
      w.counts.push_back(1.0);
    } else {
      w.counts[static_cast<std::size_t>(it - w.rows.begin())] += 1.0;
    }
  }
  return w;
}

WeightedRows LabeledFeedback::encode_single(std::span<const double> features) {
  return WeightedRows{{table.intern(features)}, {1.0}};
}

void LabeledFeedback::add_regression(WeightedRows item, double value) {
  if (kind != LossKind::Mse) throw DatasetTypeError("regression item added to a pairwise set");
  first.push_back(std::move(item));
  target.push_back(value);
}

void LabeledFeedback::add_preference(WeightedRows a, WeightedRows b, bool first_preferred) {
  if (kind != LossKind::BradleyTerry) throw DatasetTypeError("pairwise item added to a regression set");
  first.push_back(std::move(a));
  second.push_back(std::move(b));
  target.push_back(first_preferred ? 1.0 : 0.0);
}

LabeledFeedback to_labeled(const FeedbackDataset& dataset, const EnvSpec& spec, std::uint64_t seed) {
  LabeledFeedback out;
  out.kind = loss_kind_for(dataset.type);
  out.table = FeatureTable(spec.feature_dim());
  Rng order(derive_seed(seed, "pair-order"));
  auto add_pair = [&](WeightedRows a, WeightedRows b, bool a_preferred) {
    if (order.bernoulli(0.5)) out.add_preference(std::move(b), std::move(a), !a_preferred);
    else out.add_preference(std::move(a), std::move(b), a_preferred);
  };
  std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, std::vector<RatingInstance>>) {
          for (const auto& r : v) out.add_regression(out.encode(spec, r.segment), r.rating);
        } else if constexpr (std::is_same_v<V, std::vector<SegmentPreference>>) {
          for (const auto& p : v)
            add_pair(out.encode(spec, p.first), out.encode(spec, p.second),
                     p.label == PreferenceLabel::FirstPreferred);
        } else if constexpr (std::is_same_v<V, std::vector<CorrectionInstance>>) {
          for (const auto& c : v)
            add_pair(out.encode(spec, c.original), out.encode(spec, c.improved),
                     c.label == PreferenceLabel::FirstPreferred);
        } else if constexpr (std::is_same_v<V, std::vector<DemoInstance>>) {
          std::vector<int> lengths;
          for (const auto& d : v) lengths.push_back(static_cast<int>(d.demo_segment.size()));
          const auto random = sample_matched_random_segments(spec, lengths, derive_seed(seed, "demo-negatives"));
          for (std::size_t i = 0; i < v.size(); ++i)
            add_pair(out.encode(spec, v[i].demo_segment), out.encode(spec, random[i]), true);
        } else if constexpr (std::is_same_v<V, std::vector<ClusterDescription>>) {
          for (const auto& c : v) out.add_regression(out.encode_single(c.representative), c.mean_reward);
        } else {
          for (const auto& p : v)
            add_pair(out.encode_single(p.first.representative), out.encode_single(p.second.representative),
                     p.label == PreferenceLabel::FirstPreferred);
        }
      },
      dataset.instances);
  return out;
}

// ---------------------------------------------------------------- losses

double predict_rows(const Mlp& net, const FeatureTable& table, const WeightedRows& item) {
  if (net.input_dim() != table.dim()) throw ShapeError("reward model input does not match the feature table");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(item.rows.size()), table.dim());
  for (std::size_t i = 0; i < item.rows.size(); ++i) {
    const auto r = table.row(item.rows[i]);
    for (int j = 0; j < table.dim(); ++j) x(static_cast<Eigen::Index>(i), j) = r[j];
  }
  const Eigen::VectorXd y = net.forward(x).col(0);
  double s = 0.0;
  for (std::size_t i = 0; i < item.rows.size(); ++i) s += item.counts[i] * y(static_cast<Eigen::Index>(i));
  return s;
}

namespace {

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Forward pass over the distinct rows a batch touches.
struct BatchEval {
  std::vector<int> local;     // table row -> position in x, or -1
  std::vector<int> used;      // table rows in x order
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Mlp::Tape tape;

  BatchEval(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch, bool record) {
    if (net.input_dim() != data.table.dim()) throw ShapeError("reward model input does not match the feature table");
    local.assign(static_cast<std::size_t>(data.table.rows()), -1);
    auto touch = [&](const WeightedRows& w) {
      for (int r : w.rows)
        if (local[static_cast<std::size_t>(r)] < 0) {
          local[static_cast<std::size_t>(r)] = static_cast<int>(used.size());
          used.push_back(r);
        }
    };
    for (std::size_t i : batch) {
      if (i >= data.size()) throw DomainError("batch index out of range");
      touch(data.first[i]);
      if (data.kind == LossKind::BradleyTerry) touch(data.second[i]);
    }
    const int d = data.table.dim();
    x.resize(static_cast<Eigen::Index>(used.size()), d);
    for (std::size_t k = 0; k < used.size(); ++k) {
      const auto r = data.table.row(used[k]);
      for (int j = 0; j < d; ++j) x(static_cast<Eigen::Index>(k), j) = r[j];
    }
    y = (record ? net.forward(x, tape) : net.forward(x)).col(0);
  }

  double sum(const WeightedRows& w) const {
    double s = 0.0;
    for (std::size_t k = 0; k < w.rows.size(); ++k) s += w.counts[k] * y(local[static_cast<std::size_t>(w.rows[k])]);
    return s;
  }
  void scatter(const WeightedRows& w, double g, Eigen::MatrixXd& grad) const {
    for (std::size_t k = 0; k < w.rows.size(); ++k) grad(local[static_cast<std::size_t>(w.rows[k])], 0) += w.counts[k] * g;
  }
};

void require_batch(const LabeledFeedback& data, std::span<const std::size_t> batch, LossKind kind) {
  if (batch.empty()) throw DomainError("empty batch");
  if (data.kind != kind) throw DatasetTypeError("loss does not match the feedback kind");
}

// Per-item loss and its derivative w.r.t. the item's sum(s).
struct ItemLoss {
  double loss;
  double d_first;
  double d_second;
};

ItemLoss item_loss(const LabeledFeedback& data, const BatchEval& ev, std::size_t i, double beta) {
  if (data.kind == LossKind::Mse) {
    const double r = ev.sum(data.first[i]) - data.target[i];
    return {r * r, 2.0 * r, 0.0};
  }
  const double delta = beta * (ev.sum(data.first[i]) - ev.sum(data.second[i]));
  const double y = data.target[i];
  // -[y log s(delta) + (1 - y) log s(-delta)]
  const double loss = y * softplus(-delta) + (1.0 - y) * softplus(delta);
  const double g = beta * (sigmoid(delta) - y);
  return {loss, g, -g};
}

}  // namespace

double bt_prob(double sum_a, double sum_b, double beta_rationality) {
  if (!(beta_rationality > 0.0)) throw DomainError("beta_rationality must be positive");
  return std::exp(-softplus(-beta_rationality * (sum_a - sum_b)));
}

double bt_prob(const Mlp& net, const EnvSpec& spec, const Segment& a, const Segment& b, double beta_rationality) {
  return bt_prob(predict_segment_reward(net, spec, a), predict_segment_reward(net, spec, b), beta_rationality);
}

double mse_loss(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch) {
  require_batch(data, batch, LossKind::Mse);
  const BatchEval ev(net, data, batch, false);
  double total = 0.0;
  for (std::size_t i : batch) total += item_loss(data, ev, i, 1.0).loss;
  return total / static_cast<double>(batch.size());
}

double bt_loss(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch,
               double beta_rationality) {
  if (!(beta_rationality > 0.0)) throw DomainError("beta_rationality must be positive");
  require_batch(data, batch, LossKind::BradleyTerry);
  const BatchEval ev(net, data, batch, false);
  double total = 0.0;
  for (std::size_t i : batch) total += item_loss(data, ev, i, beta_rationality).loss;
  return total / static_cast<double>(batch.size());
}

double loss_of(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch,
               double beta_rationality) {
  return data.kind == LossKind::Mse ? mse_loss(net, data, batch) : bt_loss(net, data, batch, beta_rationality);
}

Eigen::VectorXd gradient_of_loss(const Mlp& net, const LabeledFeedback& data, std::span<const std::size_t> batch,
                                 double beta_rationality, double* loss_out) {
  if (batch.empty()) throw DomainError("empty batch");
  if (!(beta_rationality > 0.0)) throw DomainError("beta_rationality must be positive");
  const BatchEval ev(net, data, batch, true);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(ev.x.rows(), 1);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t i : batch) {
    const ItemLoss l = item_loss(data, ev, i, beta_rationality);
    total += l.loss;
    ev.scatter(data.first[i], l.d_first * inv_n, grad);
    if (data.kind == LossKind::BradleyTerry) ev.scatter(data.second[i], l.d_second * inv_n, grad);
  }
  if (loss_out) *loss_out = total * inv_n;
  return net.backward(ev.tape, grad);
}

// ---------------------------------------------------------------- training

namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// Stratified by label for pairwise data.
Split split_items(const LabeledFeedback& data, double fraction, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "validation-split"));
  std::vector<std::vector<std::size_t>> groups(data.kind == LossKind::BradleyTerry ? 2 : 1);
  for (std::size_t i = 0; i < data.size(); ++i)
    groups[data.kind == LossKind::BradleyTerry && data.target[i] > 0.5 ? 1 : 0].push_back(i);
  Split s;
  for (auto& g : groups) {
    shuffle(g, rng);
    auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(g.size())));
    if (n_val >= g.size()) n_val = g.size() > 1 ? g.size() - 1 : 0;
    s.val.insert(s.val.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.insert(s.train.end(), g.begin() + static_cast<std::ptrdiff_t>(n_val), g.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  return s;
}

struct MemberResult {
  Mlp net;
  std::vector<EpochRecord> trace;
};

MemberResult train_member(const LabeledFeedback& data, const Split& split, const TrainConfig& cfg, int member) {
  Rng rng(derive_seed(cfg.seed, "member", static_cast<std::uint64_t>(member)));
  std::vector<std::size_t> boot(split.train.size());
  for (auto& b : boot) b = split.train[rng.uniform_index(split.train.size())];

  std::vector<int> sizes{data.table.dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(1);
  MemberResult out{Mlp(sizes, derive_seed(cfg.seed, "member-init", static_cast<std::uint64_t>(member))), {}};
  Adam adam(out.net.n_params(), Adam::Options{cfg.learning_rate, cfg.weight_decay});

  const std::vector<std::size_t>& val = split.val.empty() ? split.train : split.val;
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_params = out.net.params();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle(boot, rng);
    double train_total = 0.0;
    for (std::size_t start = 0; start < boot.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(boot.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::span<const std::size_t> batch(boot.data() + start, end - start);
      double l = 0.0;
      const Eigen::VectorXd g = gradient_of_loss(out.net, data, batch, cfg.beta_rationality, &l);
      adam.step(out.net.params(), g);
      train_total += l * static_cast<double>(batch.size());
    }
    const double val_loss = loss_of(out.net, data, val, cfg.beta_rationality);
    if (std::isfinite(val_loss) && val_loss < best) {
      best = val_loss;
      best_params = out.net.params();
      since_best = 0;
    } else {
      ++since_best;
    }
    out.trace.push_back({epoch, train_total / static_cast<double>(boot.size()), val_loss, best});
    if (since_best >= cfg.patience) break;
  }
  out.net.params() = best_params;
  return out;
}

}  // namespace

TrainResult train_reward_model(const LabeledFeedback& data, const EnvSpec& spec, const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw ConfigError("cannot train a reward model on an empty dataset");
  if (data.table.dim() != spec.feature_dim()) throw ShapeError("training features do not match the environment");
  if (data.kind == LossKind::BradleyTerry) {
    for (double t : data.target)
      if (t != 0.0 && t != 1.0) throw ConfigError("preference labels must be hard");
    const bool one_class = std::all_of(data.target.begin(), data.target.end(),
                                       [&](double t) { return t == data.target.front(); });
    if (one_class) throw ConfigError("preference set contains a single label class");
  }

  const Split split = split_items(data, config.validation_fraction, config.seed);
  std::vector<MemberResult> members(static_cast<std::size_t>(config.n_members));
  const int threads = std::clamp(config.threads, 1, config.n_members);
  if (threads == 1) {
    for (int m = 0; m < config.n_members; ++m) members[m] = train_member(data, split, config, m);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (int m = t; m < config.n_members; m += threads) members[m] = train_member(data, split, config, m);
      });
    for (auto& th : pool) th.join();
  }

  TrainResult result;
  result.ensemble.spec = spec;
  result.n_train = split.train.size();
  result.n_val = split.val.size();
  for (auto& m : members) {
    result.ensemble.members.push_back(std::move(m.net));
    result.traces.push_back(std::move(m.trace));
  }
  return result;
}

TrainResult train_reward_model(const FeedbackDataset& dataset, const EnvSpec& spec, const TrainConfig& config) {
  if (dataset.size() == 0) throw ConfigError("cannot train a reward model on an empty dataset");
  return train_reward_model(to_labeled(dataset, spec, derive_seed(config.seed, "labeling")), spec, config);
}

// ---------------------------------------------------------------- random segments

std::vector<Segment> sample_random_policy_segments(const EnvSpec& spec, int n, int max_len, std::uint64_t seed) {
  if (n < 1) throw ConfigError("n must be at least 1");
  const Checkpoint random{Policy{RandomPolicy{}, false}, 0, 0.0};
  RolloutConfig rc;
  rc.n_segments = n;
  rc.max_len = max_len;
  rc.seed = derive_seed(seed, "random-policy");
  return collect_segments(std::span<const Checkpoint>(&random, 1), spec, rc).segments;
}

std::vector<Segment> sample_matched_random_segments(const EnvSpec& spec, std::span<const int> lengths,
                                                    std::uint64_t seed) {
  const Policy random{RandomPolicy{}, false};
  std::vector<Segment> out;
  out.reserve(lengths.size());
  Env env(spec);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] < 1) throw ConfigError("segment length must be at least 1");
    Rng rng(derive_seed(seed, "matched-random", i));
    std::vector<EnvState> before;
    std::vector<Transition> steps;
    Observation obs = env.reset(rng);
    while (true) {
      before.push_back(env.snapshot());
      steps.push_back(env.step(random.act(spec, obs, rng, false)));
      obs = steps.back().next_obs;
      if (steps.back().terminated) break;
    }
    // Start early enough to fit the whole length when the episode allows it.
    const std::size_t len = static_cast<std::size_t>(lengths[i]);
    const std::size_t latest = steps.size() > len ? steps.size() - len : 0;
    const std::size_t start = rng.uniform_index(latest + 1);
    Segment s;
    s.env_id = spec.env_id;
    s.initial_snapshot = before[start];
    for (std::size_t k = start; k < steps.size() && k - start < len; ++k) s.transitions.push_back(steps[k]);
    const std::size_t last = start + s.size() - 1;
    s.final_snapshot = last + 1 < before.size() ? before[last + 1] : env.snapshot();
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- behavioural cloning

Policy behavioral_cloning(const std::vector<DemoInstance>& demos, const EnvSpec& spec, const BcConfig& config) {
  if (config.batch_size < 1 || config.epochs < 1 || !(config.learning_rate > 0.0) || config.entropy_coef < 0.0)
    throw ConfigError("invalid behavioural cloning configuration");
  std::vector<const Transition*> pairs;
  for (const auto& d : demos)
    for (const auto& t : d.demo_segment.transitions) pairs.push_back(&t);
  if (pairs.empty()) throw ConfigError("behavioural cloning needs at least one demonstrated step");

  const bool discrete = spec.discrete();
  std::vector<int> sizes{spec.obs_dim};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(discrete ? spec.n_actions() : 1);
  Mlp net(sizes, derive_seed(config.seed, "bc-init"));
  Adam adam(net.n_params(), Adam::Options{config.learning_rate, 0.0});
  Rng rng(derive_seed(config.seed, "bc-order"));

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto m = static_cast<Eigen::Index>(end - start);
      Eigen::MatrixXd x(m, spec.obs_dim);
      for (Eigen::Index r = 0; r < m; ++r) {
        const Transition& t = *pairs[order[start + static_cast<std::size_t>(r)]];
        if (static_cast<int>(t.obs.size()) != spec.obs_dim) throw ShapeError("demo observation size mismatch");
        for (int j = 0; j < spec.obs_dim; ++j) x(r, j) = t.obs[j];
      }
      Mlp::Tape tape;
      const Eigen::MatrixXd out = net.forward(x, tape);
      Eigen::MatrixXd g(out.rows(), out.cols());
      for (Eigen::Index r = 0; r < m; ++r) {
        const double a = pairs[order[start + static_cast<std::size_t>(r)]]->action;
        if (discrete) {
          // softmax cross-entropy minus entropy_coef * H(p)
          const Eigen::RowVectorXd z = out.row(r).array() - out.row(r).maxCoeff();
          const Eigen::RowVectorXd p = z.array().exp() / z.array().exp().sum();
          const Eigen::RowVectorXd logp = z.array() - std::log(z.array().exp().sum());
          const double h = -(p.array() * logp.array()).sum();
          for (Eigen::Index k = 0; k < out.cols(); ++k)
            g(r, k) = p(k) - (k == static_cast<Eigen::Index>(a) ? 1.0 : 0.0) +
                      config.entropy_coef * p(k) * (logp(k) + h);
        } else {
          g(r, 0) = 2.0 * (out(r, 0) - a);
        }
      }
      g /= static_cast<double>(m);
      adam.step(net.params(), net.backward(tape, g));
    }
  }
  return Policy{ClonedPolicy{std::move(net)}, true};
}

}  // namespace fblab
