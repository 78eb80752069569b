#include "doctest.h"

#include <cmath>

#include "fblab/errors.hpp"
#include "fblab/expert.hpp"
#include "fblab/reward.hpp"
#include "helpers.hpp"

using namespace fblab;
using testutil::grid_state;

namespace {

const EnvSpec kGrid = EnvSpec::grid_nav();

Mlp small_net(std::uint64_t seed) { return Mlp({6, 8, 8, 1}, seed); }

// Regression set over single feature rows with the given targets.
LabeledFeedback regression_rows(const std::vector<std::vector<double>>& rows, const std::vector<double>& targets) {
  LabeledFeedback d;
  d.kind = LossKind::Mse;
  d.table = FeatureTable(6);
  for (std::size_t i = 0; i < rows.size(); ++i) d.add_regression(d.encode_single(rows[i]), targets[i]);
  return d;
}

std::vector<std::size_t> all_items(const LabeledFeedback& d) {
  std::vector<std::size_t> v(d.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
  return v;
}

double net_output(const Mlp& net, const std::vector<double>& row) {
  Eigen::MatrixXd x(1, 6);
  for (int j = 0; j < 6; ++j) x(0, j) = row[j];
  return net.forward(x)(0, 0);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("segment prediction is the sum of step predictions") {
  const Mlp net = small_net(1);
  const Segment a = testutil::walk(kGrid, grid_state(0, 0), {kUp});
  CHECK(predict_segment_reward(net, kGrid, a) == doctest::Approx(net_output(net, encode(kGrid, a.transitions[0]))).epsilon(1e-14));

  const Segment whole = testutil::walk(kGrid, grid_state(1, 1), {kUp, kRight, kRight, kDown, kLeft});
  Segment head = whole, tail = whole;
  head.transitions.resize(2);
  tail.transitions.erase(tail.transitions.begin(), tail.transitions.begin() + 2);
  CHECK(predict_segment_reward(net, kGrid, whole) ==
        doctest::Approx(predict_segment_reward(net, kGrid, head) + predict_segment_reward(net, kGrid, tail)).epsilon(1e-12));

  const Mlp zero = Mlp::zeros({6, 8, 1});
  CHECK(predict_segment_reward(zero, kGrid, whole) == 0.0);
  CHECK_THROWS_AS(predict_segment_reward(Mlp({3, 4, 1}, 1), kGrid, whole), ShapeError);
}

TEST_CASE("ensemble prediction is the member mean") {
  RewardEnsemble e;
  e.spec = kGrid;
  e.members = {small_net(1), small_net(2), small_net(3)};
  const Segment s = testutil::walk(kGrid, grid_state(2, 5), {kRight, kDown});
  double mean = 0.0;
  for (const auto& m : e.members) mean += predict_segment_reward(m, kGrid, s) / 3.0;
  CHECK(e.predict_segment(s) == doctest::Approx(mean).epsilon(1e-12));
  CHECK_THROWS_AS(e.predict(Eigen::MatrixXd::Zero(2, 3)), ShapeError);
}

TEST_CASE("mse loss") {
  const std::vector<double> row{0.5, 0.5, 1, 0, 0, 0};
  const Mlp zero = Mlp::zeros({6, 4, 1});
  // Prediction 0 against target 2 adds (0 - 2)^2.
  auto d = regression_rows({row}, {0.0});
  auto all = all_items(d);
  CHECK(mse_loss(zero, d, all) == 0.0);

  // Last-layer bias 1 makes every prediction 1.
  Mlp one = Mlp::zeros({6, 4, 1});
  one.params()(one.n_params() - 1) = 1.0;
  auto d3 = regression_rows({row}, {3.0});
  CHECK(mse_loss(one, d3, all) == 4.0);

  auto twice = regression_rows({row, row, {0, 0, 0, 1, 0, 0}}, {3.0, 3.0, -1.0});
  const std::vector<std::size_t> batch{0, 2}, doubled{0, 2, 0, 2};
  CHECK(mse_loss(one, twice, batch) == mse_loss(one, twice, doubled));
  CHECK_THROWS_AS(mse_loss(one, twice, std::vector<std::size_t>{}), DomainError);
}

TEST_CASE("mse gradient vanishes at a perfect fit") {
  const Mlp net = small_net(5);
  const std::vector<std::vector<double>> rows{{0, 0, 1, 0, 0, 0}, {0.2, 0.4, 0, 1, 0, 0}};
  auto d = regression_rows(rows, {net_output(net, rows[0]), net_output(net, rows[1])});
  const auto g = gradient_of_loss(net, d, all_items(d), 1.0);
  CHECK(g.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("bradley-terry probability") {
  CHECK(bt_prob(2.0, 2.0, 1.0) == 0.5);
  CHECK(bt_prob(1.0, 0.0, 1.0) == doctest::Approx(0.731059).epsilon(1e-6));
  CHECK(std::fabs(bt_prob(1.0, 0.0, 1.0) - logistic(1.0)) < 1e-15);
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.normal(0, 5), b = rng.normal(0, 5), beta = rng.uniform(0.1, 3);
    CHECK(bt_prob(a, b, beta) + bt_prob(b, a, beta) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(bt_prob(a + 3.0, b + 3.0, beta) == doctest::Approx(bt_prob(a, b, beta)).epsilon(1e-12));
  }
  // No overflow in the tails.
  CHECK(bt_prob(1000.0, 0.0, 1.0) == 1.0);
  CHECK(bt_prob(0.0, 1000.0, 1.0) >= 0.0);
  CHECK_THROWS_AS(bt_prob(0.0, 1.0, 0.0), DomainError);
}

TEST_CASE("bradley-terry loss values") {
  LabeledFeedback d;
  d.kind = LossKind::BradleyTerry;
  d.table = FeatureTable(6);
  const std::vector<double> ra{0, 0, 1, 0, 0, 0}, rb{0, 0, 0, 1, 0, 0};
  d.add_preference(d.encode_single(ra), d.encode_single(rb), true);
  Mlp zero = Mlp::zeros({6, 1});
  const std::vector<std::size_t> b0{0};
  CHECK(bt_loss(zero, d, b0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // Linear net: output = weight . x, so row a scores w2 and row b scores w3.
  Mlp lin = Mlp::zeros({6, 1});
  lin.params()(2) = 0.7;
  lin.params()(3) = -0.4;
  const double p = logistic(1.1);
  CHECK(bt_loss(lin, d, b0, 1.0) == doctest::Approx(-std::log(p)).epsilon(1e-14));
  d.target[0] = 0.0;
  CHECK(bt_loss(lin, d, b0, 1.0) == doctest::Approx(-std::log(1.0 - p)).epsilon(1e-14));
  d.target[0] = 1.0;

  lin.params()(2) = 15.0;
  lin.params()(3) = -15.0;
  CHECK(bt_loss(lin, d, b0, 1.0) < 1e-3);
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(11);
  LabeledFeedback mse;
  mse.kind = LossKind::Mse;
  mse.table = FeatureTable(6);
  LabeledFeedback bt;
  bt.kind = LossKind::BradleyTerry;
  bt.table = FeatureTable(6);
  for (int i = 0; i < 12; ++i) {
    std::vector<double> acts;
    for (int k = 0; k < 4; ++k) acts.push_back(static_cast<double>(rng.uniform_index(4)));
    const Segment a = testutil::walk(kGrid, grid_state(static_cast<int>(rng.uniform_index(7)), 2), acts);
    const Segment b = testutil::walk(kGrid, grid_state(3, static_cast<int>(rng.uniform_index(7))), acts);
    mse.add_regression(mse.encode(kGrid, a), rng.uniform(1, 10));
    bt.add_preference(bt.encode(kGrid, a), bt.encode(kGrid, b), i % 3 != 0);
  }
  for (LabeledFeedback* data : {&mse, &bt}) {
    Mlp net = small_net(4);
    const auto batch = all_items(*data);
    const Eigen::VectorXd g = gradient_of_loss(net, *data, batch, 1.3);
    for (int probe = 0; probe < 10; ++probe) {
      Eigen::VectorXd dir(net.n_params());
      for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = rng.normal();
      dir.normalize();
      const double h = 1e-5;
      const Eigen::VectorXd p0 = net.params();
      net.params() = p0 + h * dir;
      const double up = loss_of(net, *data, batch, 1.3);
      net.params() = p0 - h * dir;
      const double down = loss_of(net, *data, batch, 1.3);
      net.params() = p0;
      const double fd = (up - down) / (2 * h);
      const double an = g.dot(dir);
      CHECK(std::fabs(fd - an) <= 1e-4 * std::max(1e-8, std::fabs(an)) + 1e-9);
    }
  }
}

TEST_CASE("training on a constant rating") {
  LabeledFeedback d;
  d.kind = LossKind::Mse;
  d.table = FeatureTable(6);
  Rng rng(3);
  for (int i = 0; i < 200; ++i)
    d.add_regression(d.encode_single(std::vector<double>{rng.uniform(), rng.uniform(), 1, 0, 0, 0}), 0.5);
  TrainConfig cfg;
  cfg.hidden = {16, 16};
  cfg.n_members = 2;
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.weight_decay = 0.0;
  const TrainResult r = train_reward_model(d, kGrid, cfg);
  for (const auto& trace : r.traces) {
    for (const auto& e : trace) CHECK(std::isfinite(e.val_loss));
    CHECK(trace.back().best_val_loss < 1e-3);
  }
  CHECK(r.n_train + r.n_val == 200);
}

TEST_CASE("training orders well-separated preference pairs") {
  // Segments into the goal against segments in the far corner.
  FeedbackDataset ds;
  ds.type = FeedbackType::Comparative;
  std::vector<SegmentPreference> prefs;
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const Segment good = testutil::walk(kGrid, grid_state(5 + static_cast<int>(rng.uniform_index(2)), 6), {kUp, kRight, kRight});
    const Segment bad = testutil::walk(kGrid, grid_state(static_cast<int>(rng.uniform_index(3)), static_cast<int>(rng.uniform_index(3))),
                                       {static_cast<double>(rng.uniform_index(4)), kLeft, kDown});
    SegmentPreference p;
    const bool swap = i % 2;
    p.first = swap ? bad : good;
    p.second = swap ? good : bad;
    p.first_return = discounted_return(p.first, kGrid.gamma);
    p.second_return = discounted_return(p.second, kGrid.gamma);
    p.label = swap ? PreferenceLabel::SecondPreferred : PreferenceLabel::FirstPreferred;
    prefs.push_back(p);
  }
  ds.instances = prefs;
  TrainConfig cfg;
  cfg.n_members = 2;
  cfg.seed = 1;
  const TrainResult r = train_reward_model(ds, kGrid, cfg);
  int correct = 0;
  for (const auto& p : prefs) {
    const bool first = r.ensemble.predict_segment(p.first) > r.ensemble.predict_segment(p.second);
    correct += first == (p.label == PreferenceLabel::FirstPreferred);
  }
  CHECK(correct >= 190);
}

TEST_CASE("training errors") {
  TrainConfig cfg;
  LabeledFeedback empty;
  empty.table = FeatureTable(6);
  CHECK_THROWS_AS(train_reward_model(empty, kGrid, cfg), ConfigError);
  LabeledFeedback one_class;
  one_class.kind = LossKind::BradleyTerry;
  one_class.table = FeatureTable(6);
  for (int i = 0; i < 5; ++i)
    one_class.add_preference(one_class.encode_single(std::vector<double>{0, 0, 1, 0, 0, 0}),
                             one_class.encode_single(std::vector<double>{1, 1, 1, 0, 0, 0}), true);
  CHECK_THROWS_AS(train_reward_model(one_class, kGrid, cfg), ConfigError);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(one_class.add_regression({}, 1.0), DatasetTypeError);
}

TEST_CASE("loss kinds per feedback type") {
  CHECK(loss_kind_for(FeedbackType::Evaluative) == LossKind::Mse);
  CHECK(loss_kind_for(FeedbackType::Descriptive) == LossKind::Mse);
  for (auto t : {FeedbackType::Comparative, FeedbackType::Demonstrative, FeedbackType::Corrective,
                 FeedbackType::DescriptivePreference})
    CHECK(loss_kind_for(t) == LossKind::BradleyTerry);
}

TEST_CASE("demonstrations pair one-to-one with matched random segments") {
  const EnvSpec spec = kGrid;
  std::vector<DemoInstance> demos;
  for (int x = 0; x < 5; ++x) {
    DemoInstance d;
    d.demo_segment = testutil::walk(spec, grid_state(x, x), {kUp, kRight, kUp, kRight, kUp});
    demos.push_back(d);
  }
  FeedbackDataset ds;
  ds.type = FeedbackType::Demonstrative;
  ds.instances = demos;
  const LabeledFeedback a = to_labeled(ds, spec, 3), b = to_labeled(ds, spec, 3);
  CHECK(a.size() == demos.size());
  CHECK(a.target == b.target);

  std::vector<int> lengths{5, 1, 50, 3};
  const auto random = sample_matched_random_segments(spec, lengths, 4);
  REQUIRE(random.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(random[i].size() <= static_cast<std::size_t>(lengths[i]));
    CHECK(replay(spec, random[i]) == random[i]);
  }
  CHECK(sample_matched_random_segments(spec, lengths, 4) == random);
}

TEST_CASE("random segments score below expert demonstrations") {
  const EnvSpec spec = kGrid;
  const auto random = sample_random_policy_segments(spec, 300, 20, 2);
  const Policy optimal = greedy_policy_from_values(exact_value_function(spec, spec.gamma));
  double random_mean = 0.0, expert_mean = 0.0;
  Rng rng(0);
  for (const auto& s : random) {
    random_mean += discounted_return(s, spec.gamma) / random.size();
    Env env(spec);
    env.restore(s.initial_snapshot);
    Segment demo;
    for (std::size_t k = 0; k < s.size(); ++k) {
      demo.transitions.push_back(env.step(optimal.act(spec, env.observation(), rng, true)));
      if (demo.transitions.back().terminated) break;
    }
    expert_mean += discounted_return(demo, spec.gamma) / random.size();
  }
  CHECK(random_mean < expert_mean);
}

TEST_CASE("behavioural cloning") {
  const EnvSpec spec = kGrid;
  CHECK_THROWS_AS(behavioral_cloning({}, spec, BcConfig{}), ConfigError);

  // One repeated (s, a) pair and no entropy bonus.
  DemoInstance d;
  d.demo_segment = testutil::walk(spec, grid_state(3, 3), {kDown});
  std::vector<DemoInstance> repeated(50, d);
  BcConfig cfg;
  cfg.entropy_coef = 0.0;
  cfg.epochs = 300;
  const Policy p = behavioral_cloning(repeated, spec, cfg);
  Rng rng(1);
  CHECK(p.act(spec, observe(spec, grid_state(3, 3)), rng, true) == static_cast<double>(kDown));
  const auto& net = std::get<ClonedPolicy>(p.kind).net;
  Eigen::MatrixXd x(1, 2);
  x << 3.0 / 7, 3.0 / 7;
  const Eigen::RowVectorXd z = net.forward(x).row(0);
  const double pd = std::exp(z(kDown)) / z.array().exp().sum();
  CHECK(pd > 0.95);
}
