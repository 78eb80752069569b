#include "fblab/downstream.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "fblab/errors.hpp"

namespace fblab {

void RunningStats::update(double x) {
  if (!std::isfinite(x)) throw DomainError("running statistics require finite values");
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

double RunningStats::stddev() const { return std::sqrt(variance()); }

double standardize(const RunningStats& stats, double r) {
  return (r - stats.mean()) / std::max(stats.stddev(), kStdFloor);
}

double observe_and_standardize(RunningStats& stats, double r) {
  stats.update(r);
  return standardize(stats, r);
}

double combine_average(std::span<const double> predictions) {
  if (predictions.empty()) throw DomainError("cannot average zero predictions");
  return std::accumulate(predictions.begin(), predictions.end(), 0.0) / static_cast<double>(predictions.size());
}

double combine_uncertainty_weighted(std::span<const double> means, std::span<const double> stds) {
  if (means.size() != stds.size()) throw DomainError("means and stds differ in length");
  if (means.empty()) throw DomainError("cannot combine zero predictions");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (stds[i] < 0.0) throw DomainError("standard deviations must be non-negative");
    const double w = 1.0 / std::max(stds[i], kStdFloor);
    num += w * means[i];
    den += w;
  }
  return num / den;
}

// ---------------------------------------------------------------- sources

RewardSource RewardSource::ground_truth(bool standardize) { return RewardSource{Kind::GroundTruth, {}, standardize}; }

RewardSource RewardSource::single(std::shared_ptr<const RewardEnsemble> model, bool standardize) {
  return RewardSource{Kind::Single, {std::move(model)}, standardize};
}

RewardSource RewardSource::joint_average(std::vector<std::shared_ptr<const RewardEnsemble>> models) {
  return RewardSource{Kind::JointAverage, std::move(models), true};
}

RewardSource RewardSource::joint_uncertainty_weighted(std::vector<std::shared_ptr<const RewardEnsemble>> models) {
  return RewardSource{Kind::JointUncertaintyWeighted, std::move(models), true};
}

void RewardSource::validate(const EnvSpec& spec) const {
  switch (kind) {
    case Kind::GroundTruth:
      if (!models.empty()) throw ConfigError("ground-truth source takes no models");
      return;
    case Kind::Single:
      if (models.size() != 1) throw ConfigError("single source takes exactly one model");
      break;
    case Kind::JointAverage:
    case Kind::JointUncertaintyWeighted:
      if (models.size() < 2) throw ConfigError("joint sources need at least two models");
      break;
  }
  for (const auto& m : models) {
    if (!m || m->members.empty()) throw ConfigError("reward source holds an empty model");
    if (m->feature_dim() != spec.feature_dim()) throw ShapeError("reward model does not match the environment");
  }
}

std::string_view to_string(RewardSource::Kind kind) {
  switch (kind) {
    case RewardSource::Kind::GroundTruth: return "ground_truth";
    case RewardSource::Kind::Single: return "single";
    case RewardSource::Kind::JointAverage: return "joint_average";
    case RewardSource::Kind::JointUncertaintyWeighted: return "joint_uncertainty_weighted";
  }
  return "unknown";
}

RewardWrapper::RewardWrapper(const EnvSpec& spec, RewardSource source) : spec_(spec), source_(std::move(source)) {
  source_.validate(spec_);
  stats_.resize(std::max<std::size_t>(1, source_.models.size()));
}

const RewardWrapper::Prediction& RewardWrapper::predict(const Transition& t) {
  std::vector<double> f = encode(spec_, t);
  auto compute = [&](Prediction& p) {
    const Eigen::MatrixXd x = Eigen::Map<const Eigen::RowVectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
    p.mean.clear();
    p.spread.clear();
    for (const auto& m : source_.models) {
      p.mean.push_back(m->predict(x)(0));
      if (source_.kind == RewardSource::Kind::JointUncertaintyWeighted) p.spread.push_back(m->spread(x)(0));
    }
  };
  if (!spec_.discrete()) {
    compute(scratch_);
    return scratch_;
  }
  auto it = cache_.find(f);
  if (it == cache_.end()) {
    Prediction p;
    compute(p);
    it = cache_.emplace(std::move(f), std::move(p)).first;
  }
  return it->second;
}

double RewardWrapper::reward(const Transition& t) {
  if (source_.kind == RewardSource::Kind::GroundTruth)
    return source_.standardize ? observe_and_standardize(stats_[0], t.reward) : t.reward;

  const Prediction& p = predict(t);
  std::vector<double> means = p.mean;
  std::vector<double> stds = p.spread;
  // Each source is standardized on its own stream before combination; spreads
  // are rescaled by the same divisor.
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (!source_.standardize) continue;
    stats_[i].update(means[i]);
    const double scale = std::max(stats_[i].stddev(), kStdFloor);
    means[i] = (means[i] - stats_[i].mean()) / scale;
    if (!stds.empty()) stds[i] /= scale;
  }
  switch (source_.kind) {
    case RewardSource::Kind::Single: return means[0];
    case RewardSource::Kind::JointAverage: return combine_average(means);
    default: return combine_uncertainty_weighted(means, stds);
  }
}

WrappedTransition RewardWrapper::wrapped_step(Env& env, double action) {
  WrappedTransition w;
  w.transition = env.step(action);
  w.ground_truth_reward = w.transition.reward;
  w.transition.reward = reward(w.transition);
  return w;
}

// ---------------------------------------------------------------- agents

AgentConfig AgentConfig::for_env(const EnvSpec& spec) {
  AgentConfig c;
  if (spec.env_id == EnvId::PointMass) {
    c.algorithm = Algorithm::CemPolicySearch;
    c.budget = 40000;
    c.eval_interval = 4000;
  }
  return c;
}

void AgentConfig::validate(const EnvSpec& spec) const {
  if (budget < 0 || eval_interval < 1 || eval_episodes < 1) throw ConfigError("invalid agent budget settings");
  if (algorithm == Algorithm::QLearning && spec.env_id != EnvId::GridNav)
    throw UnsupportedEnvError("Q-learning agent requires GridNav");
  if (algorithm == Algorithm::CemPolicySearch && spec.env_id != EnvId::PointMass)
    throw UnsupportedEnvError("CEM gain search requires PointMass");
  if (cem_population < 2 || cem_elites < 1 || cem_elites > cem_population || cem_episodes < 1 ||
      !(cem_init_std > 0.0))
    throw ConfigError("invalid CEM settings");
}

namespace {

CurvePoint evaluate_point(const Policy& policy, const EnvSpec& spec, const AgentConfig& c, long step) {
  const EvalResult r = evaluate_policy(policy, spec, c.eval_episodes, c.eval_seed, true);
  const auto [mn, mx] = std::minmax_element(r.returns.begin(), r.returns.end());
  return {step, r.mean, *mn, *mx};
}

AgentResult train_q_agent(const EnvSpec& spec, RewardWrapper& wrapper, const AgentConfig& c) {
  TabularPolicy table;
  table.n_states = spec.n_cells();
  table.n_actions = spec.n_actions();
  table.q.assign(static_cast<std::size_t>(table.n_states) * table.n_actions, 0.0);
  table.epsilon = c.epsilon;
  Policy policy{table, true};
  auto& tab = std::get<TabularPolicy>(policy.kind);

  AgentResult result;
  if (c.budget == 0) {
    result.policy = policy;
    return result;
  }
  Rng rng(derive_seed(c.seed, "agent-q-learning"));
  Env env(spec);
  Observation obs = env.reset(rng);
  for (long step = 1; step <= c.budget; ++step) {
    const int s = cell_index(spec, cell_from_observation(spec, obs));
    const int a = static_cast<int>(policy.act(spec, obs, rng, false));
    const WrappedTransition w = wrapper.wrapped_step(env, a);
    const Transition& t = w.transition;
    const int s2 = cell_index(spec, cell_from_observation(spec, t.next_obs));
    double target = t.reward;
    if (!t.terminated || t.truncated) target += spec.gamma * tab.value(s2, tab.greedy_action(s2));
    double& q = tab.q[static_cast<std::size_t>(s) * tab.n_actions + a];
    q += c.learning_rate * (target - q);
    obs = t.terminated ? env.reset(rng) : t.next_obs;
    if (step % c.eval_interval == 0 || step == c.budget) result.curve.push_back(evaluate_point(policy, spec, c, step));
  }
  result.policy = policy;
  result.final_return = result.curve.back().mean;
  return result;
}

AgentResult train_cem_agent(const EnvSpec& spec, RewardWrapper& wrapper, const AgentConfig& c) {
  AgentResult result;
  double mu[2] = {0.0, 0.0};
  double sd[2] = {c.cem_init_std, c.cem_init_std};
  auto make_policy = [](double k1, double k2) { return Policy{PdPolicy{k1, k2, 0.0}, true}; };
  result.policy = make_policy(mu[0], mu[1]);
  if (c.budget == 0) return result;

  Rng rng(derive_seed(c.seed, "agent-cem"));
  Env env(spec);
  long steps = 0;
  long next_eval = c.eval_interval;
  std::vector<std::pair<double, std::array<double, 2>>> scored;
  while (steps < c.budget) {
    scored.clear();
    for (int i = 0; i < c.cem_population && steps < c.budget; ++i) {
      const std::array<double, 2> k{rng.normal(mu[0], sd[0]), rng.normal(mu[1], sd[1])};
      const Policy p = make_policy(k[0], k[1]);
      double total = 0.0;
      for (int e = 0; e < c.cem_episodes; ++e) {
        Observation obs = env.reset(rng);
        while (true) {
          const WrappedTransition w = wrapper.wrapped_step(env, p.act(spec, obs, rng, true));
          ++steps;
          total += w.transition.reward;
          obs = w.transition.next_obs;
          if (w.transition.terminated) break;
        }
      }
      scored.push_back({total / c.cem_episodes, k});
    }
    if (static_cast<int>(scored.size()) >= c.cem_elites) {
      std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      for (int j = 0; j < 2; ++j) {
        double m = 0.0;
        for (int e = 0; e < c.cem_elites; ++e) m += scored[e].second[j];
        m /= c.cem_elites;
        double v = 0.0;
        for (int e = 0; e < c.cem_elites; ++e) v += (scored[e].second[j] - m) * (scored[e].second[j] - m);
        mu[j] = m;
        sd[j] = std::sqrt(v / c.cem_elites) + 0.05;  // keeps some exploration
      }
    }
    result.policy = make_policy(mu[0], mu[1]);
    while (steps >= next_eval || steps >= c.budget) {
      result.curve.push_back(evaluate_point(result.policy, spec, c, std::min(steps, c.budget)));
      if (steps >= c.budget) break;
      next_eval += c.eval_interval;
    }
  }
  result.final_return = result.curve.back().mean;
  return result;
}

}  // namespace

AgentResult train_agent(const EnvSpec& spec, const RewardSource& source, const AgentConfig& config) {
  spec.validate();
  config.validate(spec);
  RewardWrapper wrapper(spec, source);
  return config.algorithm == AgentConfig::Algorithm::QLearning ? train_q_agent(spec, wrapper, config)
                                                               : train_cem_agent(spec, wrapper, config);
}

}  // namespace fblab
