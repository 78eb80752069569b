#include "doctest.h"

#include <cmath>
#include <memory>

#include "fblab/downstream.hpp"
#include "fblab/errors.hpp"
#include "fblab/expert.hpp"
#include "helpers.hpp"

using namespace fblab;

namespace {

// Ensemble of linear members whose output is w . x.
std::shared_ptr<RewardEnsemble> linear_model(const std::vector<std::vector<double>>& weights) {
  auto e = std::make_shared<RewardEnsemble>();
  e->spec = EnvSpec::grid_nav();
  for (const auto& w : weights) {
    Mlp m = Mlp::zeros({6, 1});
    for (int j = 0; j < 6; ++j) m.params()(j) = w[j];
    e->members.push_back(m);
  }
  return e;
}

}  // namespace

TEST_CASE("welford statistics") {
  RunningStats s;
  for (double x : {1.0, 2.0, 3.0}) s.update(x);
  CHECK(s.mean() == 2.0);
  CHECK(s.variance() == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  RunningStats one;
  one.update(4.2);
  CHECK(one.variance() == 0.0);
  RunningStats flat;
  for (int i = 0; i < 1000; ++i) flat.update(0.1);
  CHECK(flat.m2() == 0.0);
  CHECK_THROWS_AS(flat.update(std::nan("")), DomainError);
  CHECK_THROWS_AS(flat.update(INFINITY), DomainError);
}

TEST_CASE("welford agrees with two passes on random streams") {
  Rng rng(6);
  RunningStats s;
  std::vector<double> xs;
  for (int i = 0; i < 100000; ++i) {
    xs.push_back(rng.normal(1e3, 2.0));
    s.update(xs.back());
  }
  long double mean = 0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  long double var = 0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var /= xs.size();
  CHECK(std::fabs(s.mean() - static_cast<double>(mean)) / static_cast<double>(mean) < 1e-9);
  CHECK(std::fabs(s.variance() - static_cast<double>(var)) / static_cast<double>(var) < 1e-9);
}

TEST_CASE("online standardization") {
  RunningStats s;
  CHECK(observe_and_standardize(s, 7.5) == 0.0);
  RunningStats eq;
  for (int i = 0; i < 10; ++i) CHECK(observe_and_standardize(eq, -0.04) == 0.0);

  Rng rng(2);
  RunningStats st;
  double sum = 0, sumsq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double z = observe_and_standardize(st, rng.normal(3.0, 2.5));
    sum += z;
    sumsq += z * z;
  }
  const double m = sum / n;
  CHECK(std::fabs(m) < 0.05);
  CHECK(std::fabs(std::sqrt(sumsq / n - m * m) - 1.0) < 0.05);
}

TEST_CASE("average combination") {
  CHECK(combine_average(std::vector<double>{1, -1}) == 0.0);
  CHECK(combine_average(std::vector<double>{0.37}) == 0.37);
  CHECK(combine_average(std::vector<double>{1, 2, 6}) == combine_average(std::vector<double>{6, 1, 2}));
  CHECK_THROWS_AS(combine_average(std::vector<double>{}), DomainError);
}

TEST_CASE("uncertainty-weighted combination") {
  CHECK(combine_uncertainty_weighted(std::vector<double>{0, 4}, std::vector<double>{1, 3}) == 1.0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    std::vector<double> m{rng.normal(), rng.normal(), rng.normal()};
    const double sd = rng.uniform(0.1, 2.0);
    CHECK(std::fabs(combine_uncertainty_weighted(m, std::vector<double>(3, sd)) - combine_average(m)) <= 1e-12);
  }
  CHECK(combine_uncertainty_weighted(std::vector<double>{5, -3}, std::vector<double>{0, 1}) ==
        doctest::Approx(5.0).epsilon(1e-7));
  CHECK_THROWS_AS(combine_uncertainty_weighted(std::vector<double>{1}, std::vector<double>{1, 2}), DomainError);
  CHECK_THROWS_AS(combine_uncertainty_weighted(std::vector<double>{}, std::vector<double>{}), DomainError);
}

TEST_CASE("ground-truth wrapper is the identity") {
  const EnvSpec spec = EnvSpec::grid_nav();
  RewardWrapper w(spec, RewardSource::ground_truth());
  Env env(spec);
  Rng rng(0);
  env.reset(rng);
  for (int i = 0; i < 30; ++i) {
    const WrappedTransition t = w.wrapped_step(env, i % 2 ? kUp : kRight);
    CHECK(t.transition.reward == t.ground_truth_reward);
    if (t.transition.terminated) break;
  }
}

TEST_CASE("single source reports the ensemble mean and keeps the side channel") {
  const EnvSpec spec = EnvSpec::grid_nav();
  auto model = linear_model({{1, 0, 0.5, 0, 0, 0}, {0, 1, 0.1, 0, 0, 0}});
  RewardWrapper w(spec, RewardSource::single(model, false));
  Env wrapped(spec), plain(spec);
  Rng a(3), b(3);
  wrapped.reset(a);
  plain.reset(b);
  const std::vector<double> actions{kUp, kUp, kRight, kDown, kRight, kRight};
  double side = 0.0, direct = 0.0;
  for (double act : actions) {
    const WrappedTransition t = w.wrapped_step(wrapped, act);
    const std::vector<double> f = encode(spec, t.transition);
    CHECK(t.transition.reward == doctest::Approx(0.5 * (f[0] + 0.5 * f[2]) + 0.5 * (f[1] + 0.1 * f[2])).epsilon(1e-14));
    side += t.ground_truth_reward;
    direct += plain.step(act).reward;
  }
  CHECK(side == direct);
}

TEST_CASE("source validation") {
  const EnvSpec spec = EnvSpec::grid_nav();
  auto model = linear_model({{1, 0, 0, 0, 0, 0}});
  CHECK_THROWS_AS(RewardWrapper(spec, RewardSource::joint_average({model})), ConfigError);
  CHECK_THROWS_AS(RewardWrapper(EnvSpec::point_mass(), RewardSource::single(model)), ShapeError);
  CHECK_THROWS_AS(RewardWrapper(spec, RewardSource::single(nullptr)), ConfigError);
}

TEST_CASE("joint sources standardize per model before combining") {
  const EnvSpec spec = EnvSpec::grid_nav();
  // Second model is an affine copy of the first; after standardization they agree.
  auto a = linear_model({{1, 2, 0, 0, 0, 0}});
  auto b = linear_model({{10, 20, 0, 0, 0, 0}});
  RewardWrapper joint(spec, RewardSource::joint_average({a, b}));
  RewardWrapper solo(spec, RewardSource::single(a, true));
  Env env(spec);
  Rng rng(1);
  env.reset(rng);
  for (int i = 0; i < 20; ++i) {
    const Transition t = env.step(i % 3 ? kUp : kRight);
    CHECK(joint.reward(t) == doctest::Approx(solo.reward(t)).epsilon(1e-12));
    if (t.terminated) break;
  }
  CHECK(joint.stats().size() == 2);
}

TEST_CASE("ground-truth q-learning reaches the value-iteration optimum") {
  const EnvSpec spec = EnvSpec::grid_nav();
  const double optimum = evaluate_policy(greedy_policy_from_values(exact_value_function(spec, spec.gamma)), spec, 1, 0).mean;
  AgentConfig cfg = AgentConfig::for_env(spec);
  cfg.seed = 1;
  const AgentResult r = train_agent(spec, RewardSource::ground_truth(), cfg);
  CHECK(r.final_return == optimum);
  CHECK(r.curve.size() == static_cast<std::size_t>(cfg.budget / cfg.eval_interval));
}

TEST_CASE("standardizing the ground truth keeps the greedy policy") {
  // Up and Right tie on most cells, so equality means both greedy routes take
  // only value-maximising moves.
  const EnvSpec spec = EnvSpec::grid_nav();
  const ValueTable v = exact_value_function(spec, spec.gamma);
  AgentConfig cfg = AgentConfig::for_env(spec);
  cfg.budget = 60000;
  for (bool standardize : {false, true}) {
    const auto r = train_agent(spec, RewardSource::ground_truth(standardize), cfg);
    Env env(spec);
    Rng rng(0);
    env.reset(rng);
    int steps = 0;
    while (true) {
      const EnvState s = env.state();
      const double a = r.policy.act(spec, env.observation(), rng, true);
      double best = -INFINITY;
      for (int b = 0; b < 4; ++b) {
        const auto [t, next] = step(spec, s, b);
        best = std::max(best, t.reward + (t.terminated ? 0.0 : spec.gamma * v.at(next)));
      }
      const auto [t, next] = step(spec, s, a);
      CHECK(t.reward + (t.terminated ? 0.0 : spec.gamma * v.at(next)) == doctest::Approx(best).epsilon(1e-12));
      env.step(a);
      ++steps;
      if (t.terminated) break;
    }
    CHECK(steps == 14);
  }
}

TEST_CASE("zero budget yields an empty curve") {
  AgentConfig cfg = AgentConfig::for_env(EnvSpec::grid_nav());
  cfg.budget = 0;
  CHECK(train_agent(EnvSpec::grid_nav(), RewardSource::ground_truth(), cfg).curve.empty());
  AgentConfig pm = AgentConfig::for_env(EnvSpec::point_mass());
  pm.budget = 0;
  CHECK(train_agent(EnvSpec::point_mass(), RewardSource::ground_truth(), pm).curve.empty());
}

TEST_CASE("cem on pointmass improves over zero gains") {
  const EnvSpec spec = EnvSpec::point_mass();
  AgentConfig cfg = AgentConfig::for_env(spec);
  cfg.seed = 2;
  const AgentResult r = train_agent(spec, RewardSource::ground_truth(), cfg);
  const double zero = evaluate_policy(Policy{PdPolicy{0, 0, 0}, true}, spec, cfg.eval_episodes, cfg.eval_seed).mean;
  CHECK(r.final_return > zero);
}

TEST_CASE("agent config and env mismatch") {
  AgentConfig cfg;
  CHECK_THROWS_AS(train_agent(EnvSpec::point_mass(), RewardSource::ground_truth(), cfg), UnsupportedEnvError);
  cfg.eval_interval = 0;
  CHECK_THROWS_AS(train_agent(EnvSpec::grid_nav(), RewardSource::ground_truth(), cfg), ConfigError);
}
