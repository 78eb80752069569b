#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "fblab/errors.hpp"
#include "fblab/feedback.hpp"
#include "helpers.hpp"

using namespace fblab;
using testutil::grid_state;

TEST_CASE("bin calibration") {
  const std::vector<double> r{0.0, 37.0, 100.0, 12.5};
  const BinCalibration c = calibrate_bins(r, 10);
  CHECK(c.lo == 0.0);
  CHECK(c.hi == 100.0);
  CHECK(c.bin_width == 10.0);
  CHECK(c.rating(100.0) == 10);
  CHECK(c.rating(99.0) == 10);
  CHECK(c.rating(0.0) == 1);
  CHECK(c.rating(54.0) == 6);
  CHECK(c.rating(-5.0) == 1);
  CHECK(c.rating(250.0) == 10);
  std::vector<double> shuffled{12.5, 100.0, 0.0, 37.0};
  CHECK(calibrate_bins(shuffled, 10) == c);
  CHECK_THROWS_AS(calibrate_bins(std::vector<double>{2, 2, 2}, 10), CalibrationError);
  CHECK_THROWS_AS(calibrate_bins(std::vector<double>{}, 10), CalibrationError);
}

TEST_CASE("bin index agrees with a linear scan over the edges") {
  const BinCalibration c = calibrate_bins(std::vector<double>{-3.0, 2.0}, 7);
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const double v = rng.uniform(-3.0, 2.0);
    int scan = 0;
    while (scan + 1 < c.n_bins && v >= c.lo + (scan + 1) * c.bin_width) ++scan;
    CHECK(c.bin_index(v) == scan);
  }
}

TEST_CASE("evaluative ratings follow returns") {
  const RolloutBuffer b = testutil::buffer_with_returns({0.0, 54.0, 99.0, 100.0});
  const auto ratings = gen_evaluative(b, calibrate_bins(b, 10, 0.99), 0.99);
  std::vector<int> got;
  for (const auto& r : ratings) got.push_back(r.rating);
  CHECK(got == std::vector<int>{1, 6, 10, 10});
  CHECK(ratings[1].underlying_return == 54.0);
}

TEST_CASE("comparative labels and exclusion threshold") {
  ComparativeConfig cfg;
  cfg.n_pairs = 20;
  cfg.seed = 3;
  // Two returns 5 and 3: population std 1.
  const auto clear = gen_comparative(testutil::buffer_with_returns({5.0, 3.0}), 0.99, cfg);
  REQUIRE(clear.size() == 20);
  for (const auto& p : clear) {
    CHECK((p.first_return > p.second_return) == (p.label == PreferenceLabel::FirstPreferred));
    CHECK(std::fabs(p.return_gap()) == 2.0);
  }

  // 5.00 vs 5.05 sits below 0.1 std of a buffer whose std is about 1.
  const RolloutBuffer b = testutil::buffer_with_returns({5.0, 5.05, 3.6, 6.4});
  cfg.n_pairs = 4;
  const auto prefs = gen_comparative(b, 0.99, cfg);
  for (const auto& p : prefs) {
    const double lo = std::min(p.first_return, p.second_return), hi = std::max(p.first_return, p.second_return);
    CHECK_FALSE((lo == 5.0 && hi == 5.05));
    CHECK(std::fabs(p.return_gap()) >= 0.1);
  }

  cfg.n_pairs = 1;
  CHECK_THROWS_AS(gen_comparative(testutil::buffer_with_returns({5.0, 5.0}), 0.99, cfg), GenerationExhaustedError);
  cfg.allow_partial = true;
  CHECK(gen_comparative(testutil::buffer_with_returns({5.0, 5.0}), 0.99, cfg).empty());
}

TEST_CASE("demonstrations take the best expert and must improve") {
  const EnvSpec spec = EnvSpec::grid_nav();
  const Policy optimal = greedy_policy_from_values(exact_value_function(spec, spec.gamma));
  const Policy wall = testutil::constant_policy(spec, kLeft);
  RolloutBuffer b;
  b.spec = spec;
  // Wanders away from a goal three steps off.
  b.segments.push_back(testutil::walk(spec, grid_state(5, 6), {kLeft, kDown, kLeft, kDown}));
  // Produced by the optimal expert itself.
  b.segments.push_back(testutil::walk(spec, grid_state(2, 2), {kUp, kUp, kUp, kUp}));
  b.provenance.resize(2);

  const std::vector<Policy> experts{wall, optimal};
  const auto fb = gen_demonstrative_and_corrective(b, experts, spec.gamma, 4);
  REQUIRE(fb.demos.size() == 1);
  REQUIRE(fb.corrections.size() == 1);
  const DemoInstance& d = fb.demos.front();
  CHECK(d.origin_snapshot == b.segments[0].initial_snapshot);
  CHECK(d.expert_return > d.original_return);
  CHECK(d.demo_segment.size() == 3);
  const Segment from_optimal = testutil::walk(spec, grid_state(5, 6), {kUp, kRight, kRight});
  CHECK(d.expert_return == doctest::Approx(discounted_return(from_optimal, spec.gamma)).epsilon(1e-15));
  const Segment from_wall = testutil::walk(spec, grid_state(5, 6), {kLeft, kLeft, kLeft, kLeft});
  CHECK(d.expert_return > discounted_return(from_wall, spec.gamma));
  CHECK(fb.corrections.front().original == b.segments[0]);
  CHECK(fb.corrections.front().label == PreferenceLabel::SecondPreferred);
}

TEST_CASE("demonstrations from the goal's neighbour reach the goal") {
  const EnvSpec spec = EnvSpec::grid_nav();
  const Policy optimal = greedy_policy_from_values(exact_value_function(spec, spec.gamma));
  RolloutBuffer b;
  b.spec = spec;
  b.segments.push_back(testutil::walk(spec, grid_state(6, 7), {kLeft, kLeft}));
  b.provenance.resize(1);
  const auto fb = gen_demonstrative_and_corrective(b, std::vector<Policy>{optimal}, spec.gamma, 5);
  REQUIRE(fb.demos.size() == 1);
  CHECK(fb.demos[0].demo_segment.size() == 1);
  CHECK(fb.demos[0].demo_segment.transitions[0].terminated);
  CHECK(fb.demos[0].expert_return == 1.0);
}

TEST_CASE("unrestorable snapshots are skipped") {
  const EnvSpec spec = EnvSpec::grid_nav();
  RolloutBuffer b;
  b.spec = spec;
  Segment bad = testutil::walk(spec, grid_state(1, 1), {kUp});
  bad.initial_snapshot = grid_state(20, 1);
  b.segments.push_back(bad);
  b.provenance.resize(1);
  const auto fb = gen_demonstrative_and_corrective(b, std::vector<Policy>{testutil::constant_policy(spec, kUp)},
                                                   spec.gamma, 3);
  CHECK(fb.demos.empty());
  CHECK(fb.skipped_segments == std::vector<int>{0});
  CHECK_THROWS_AS(gen_demonstrative_and_corrective(b, {}, spec.gamma, 3), ConfigError);
}

TEST_CASE("descriptive clusters partition the transitions") {
  const EnvSpec spec = EnvSpec::grid_nav();
  RolloutBuffer b;
  b.spec = spec;
  Rng rng(4);
  int total = 0;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> acts;
    for (int j = 0; j < 8; ++j) acts.push_back(static_cast<double>(rng.uniform_index(4)));
    b.segments.push_back(testutil::walk(spec, grid_state(static_cast<int>(rng.uniform_index(7)), 0), acts));
    b.provenance.push_back({});
    total += static_cast<int>(b.segments.back().size());
  }
  DescriptiveConfig cfg;
  const auto clusters = gen_descriptive(b, cfg);
  CHECK(clusters.size() == 40);
  int members = 0;
  for (const auto& c : clusters) {
    members += c.member_count;
    CHECK(c.member_count >= 1);
    CHECK(c.mean_reward == doctest::Approx(-0.04).epsilon(1e-12));
  }
  CHECK(members == total);

  // k = 1: representative is the mean raw encoding.
  cfg.k = 1;
  const auto one = gen_descriptive(b, cfg);
  std::vector<double> mean(6, 0.0);
  for (const auto& s : b.segments)
    for (const auto& t : s.transitions) {
      const auto f = encode(spec, t);
      for (int j = 0; j < 6; ++j) mean[j] += f[j] / total;
    }
  for (int j = 0; j < 6; ++j) CHECK(one[0].representative[j] == doctest::Approx(mean[j]).epsilon(1e-12));
}

TEST_CASE("descriptive representative of two points is their midpoint") {
  const EnvSpec spec = EnvSpec::point_mass();
  RolloutBuffer b;
  b.spec = spec;
  Segment s;
  s.env_id = EnvId::PointMass;
  Transition t;
  t.obs = {0.0, 0.0};
  t.action = 0.0;
  t.reward = -1.0;
  s.transitions.push_back(t);
  t.obs = {2.0, 2.0};
  t.action = 1.0;
  t.reward = -3.0;
  s.transitions.push_back(t);
  b.segments.push_back(s);
  b.provenance.resize(1);
  DescriptiveConfig cfg;
  cfg.k = 1;
  const auto c = gen_descriptive(b, cfg);
  CHECK(c[0].representative == std::vector<double>{1.0, 1.0, 0.5});
  CHECK(c[0].mean_reward == -2.0);
}

TEST_CASE("descriptive preferences") {
  ClusterDescription a, b, c;
  a.mean_reward = 0.5;
  b.mean_reward = -0.3;
  b.cluster_id = 1;
  c.cluster_id = 2;
  c.mean_reward = 0.5;
  const std::vector<ClusterDescription> two{a, b};
  DescriptivePreferenceConfig cfg;
  cfg.n_pairs = 1;
  const auto p = gen_descriptive_prefs(two, cfg);
  REQUIRE(p.size() == 1);
  const bool first_is_a = p[0].first.cluster_id == 0;
  CHECK(p[0].label == (first_is_a ? PreferenceLabel::FirstPreferred : PreferenceLabel::SecondPreferred));

  // a and c tie, so only the pairs involving b qualify.
  cfg.n_pairs = 2;
  const auto q = gen_descriptive_prefs(std::vector<ClusterDescription>{a, b, c}, cfg);
  for (const auto& x : q) CHECK(x.first.mean_reward != x.second.mean_reward);
  cfg.n_pairs = 3;
  CHECK_THROWS_AS(gen_descriptive_prefs(std::vector<ClusterDescription>{a, b, c}, cfg), GenerationExhaustedError);
  cfg.n_pairs = 4;
  CHECK_THROWS_AS(gen_descriptive_prefs(std::vector<ClusterDescription>{a, b, c}, cfg), ConfigError);
  cfg.n_pairs = 1;
  CHECK_THROWS_AS(gen_descriptive_prefs(std::vector<ClusterDescription>{a, c}, cfg), GenerationExhaustedError);
}

TEST_CASE("optimality gap") {
  const EnvSpec spec = EnvSpec::grid_nav();
  const double g = spec.gamma;
  const ValueTable v = exact_value_function(spec, g);
  CHECK(std::fabs(optimality_gap(testutil::walk(spec, grid_state(3, 3), {kUp, kRight, kUp, kRight}), v, g)) <= 1e-8);
  CHECK(std::fabs(optimality_gap(testutil::walk(spec, grid_state(5, 7), {kRight, kRight}), v, g)) <= 1e-8);

  // Left then Right returns to the start: regret is V0 (1 - g^2) + 0.04 (1 + g),
  // with V0 from the distance recursion at d = 8.
  double v0 = 1.0;
  for (int d = 2; d <= 8; ++d) v0 = -0.04 + g * v0;
  const double regret = v0 * (1 - g * g) + 0.04 * (1 + g);
  CHECK(optimality_gap(testutil::walk(spec, grid_state(3, 3), {kLeft, kRight}), v, g) ==
        doctest::Approx(regret).epsilon(1e-12));

  // Only endpoints and rewards enter.
  const double up_first = optimality_gap(testutil::walk(spec, grid_state(1, 1), {kUp, kRight}), v, g);
  const double right_first = optimality_gap(testutil::walk(spec, grid_state(1, 1), {kRight, kUp}), v, g);
  CHECK(up_first == right_first);

  CHECK_THROWS_AS(optimality_gap(Segment{}, v, g), DomainError);
  Segment pm = testutil::with_rewards({-1.0});
  pm.env_id = EnvId::PointMass;
  CHECK_THROWS_AS(optimality_gap(pm, v, g), UnsupportedEnvError);
}

TEST_CASE("regret ratings order segments by gap") {
  const EnvSpec spec = EnvSpec::grid_nav();
  const ValueTable v = exact_value_function(spec, spec.gamma);
  RolloutBuffer b;
  b.spec = spec;
  b.segments.push_back(testutil::walk(spec, grid_state(3, 3), {kUp, kRight}));
  b.segments.push_back(testutil::walk(spec, grid_state(3, 3), {kLeft, kRight}));
  b.segments.push_back(testutil::walk(spec, grid_state(3, 3), {kLeft, kDown}));
  b.provenance.resize(3);
  const auto r = gen_evaluative_regret(b, v, spec.gamma, 10);
  CHECK(r[0].rating == 10);
  CHECK(r[2].rating == 1);
  CHECK(r[1].rating > r[2].rating);
}

TEST_CASE("feedback type names round-trip") {
  for (auto t : kAllFeedbackTypes) CHECK(feedback_type_from_string(to_string(t)) == t);
  CHECK_THROWS_AS(feedback_type_from_string("telepathic"), ConfigError);
}
