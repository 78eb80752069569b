#include "fblab/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "fblab/errors.hpp"

namespace fblab {

nlohmann::json to_json_value(const GeneratorConfig& c) {
  return {{"n_bins", c.n_bins},
          {"n_pairs", c.n_pairs},
          {"exclusion_frac", c.exclusion_frac},
          {"retry_multiplier", c.retry_multiplier},
          {"allow_partial", c.allow_partial},
          {"demo_segment_len", c.demo_segment_len},
          {"descriptive_k", c.descriptive_k},
          {"kmeans_batch", c.kmeans_batch},
          {"kmeans_max_epochs", c.kmeans_max_epochs},
          {"kmeans_tolerance", c.kmeans_tolerance}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig d;
  GeneratorConfig c;
  c.n_bins = j.value("n_bins", d.n_bins);
  c.n_pairs = j.value("n_pairs", d.n_pairs);
  c.exclusion_frac = j.value("exclusion_frac", d.exclusion_frac);
  c.retry_multiplier = j.value("retry_multiplier", d.retry_multiplier);
  c.allow_partial = j.value("allow_partial", d.allow_partial);
  c.demo_segment_len = j.value("demo_segment_len", d.demo_segment_len);
  c.descriptive_k = j.value("descriptive_k", d.descriptive_k);
  c.kmeans_batch = j.value("kmeans_batch", d.kmeans_batch);
  c.kmeans_max_epochs = j.value("kmeans_max_epochs", d.kmeans_max_epochs);
  c.kmeans_tolerance = j.value("kmeans_tolerance", d.kmeans_tolerance);
  return c;
}

std::map<FeedbackType, FeedbackDataset> generate_feedback(std::span<const FeedbackType> types,
                                                          const RolloutBuffer& buffer, std::span<const Policy> experts,
                                                          const GeneratorConfig& config, std::uint64_t seed,
                                                          const std::string& created_at,
                                                          const std::string& buffer_hash) {
  auto wants = [&](FeedbackType t) { return std::find(types.begin(), types.end(), t) != types.end(); };
  const double gamma = buffer.spec.gamma;
  std::map<FeedbackType, FeedbackDataset> out;
  auto emit = [&](FeedbackType t, FeedbackInstances inst) {
    FeedbackDataset d;
    d.type = t;
    d.provenance.env_id = buffer.spec.env_id;
    d.provenance.seed = seed;
    d.provenance.generator_config = to_json_value(config);
    d.provenance.created_at = created_at;
    d.provenance.source_buffer_hash = buffer_hash;
    d.instances = std::move(inst);
    out[t] = std::move(d);
  };

  if (wants(FeedbackType::Evaluative))
    emit(FeedbackType::Evaluative, gen_evaluative(buffer, calibrate_bins(buffer, config.n_bins, gamma), gamma));

  if (wants(FeedbackType::Comparative)) {
    ComparativeConfig cc;
    cc.n_pairs = config.n_pairs;
    cc.exclusion_frac = config.exclusion_frac;
    cc.retry_multiplier = config.retry_multiplier;
    cc.allow_partial = config.allow_partial;
    cc.seed = derive_seed(seed, "comparative");
    emit(FeedbackType::Comparative, gen_comparative(buffer, gamma, cc));
  }

  if (wants(FeedbackType::Demonstrative) || wants(FeedbackType::Corrective)) {
    InstructiveFeedback inst = gen_demonstrative_and_corrective(buffer, experts, gamma, config.demo_segment_len);
    if (wants(FeedbackType::Demonstrative)) emit(FeedbackType::Demonstrative, std::move(inst.demos));
    if (wants(FeedbackType::Corrective)) emit(FeedbackType::Corrective, std::move(inst.corrections));
  }

  if (wants(FeedbackType::Descriptive) || wants(FeedbackType::DescriptivePreference)) {
    DescriptiveConfig dc;
    dc.k = config.descriptive_k;
    dc.batch_size = config.kmeans_batch;
    dc.max_epochs = config.kmeans_max_epochs;
    dc.tolerance = config.kmeans_tolerance;
    dc.seed = derive_seed(seed, "descriptive");
    std::vector<ClusterDescription> clusters = gen_descriptive(buffer, dc);
    if (wants(FeedbackType::DescriptivePreference)) {
      DescriptivePreferenceConfig pc;
      pc.n_pairs = config.n_pairs;
      pc.retry_multiplier = config.retry_multiplier;
      pc.allow_partial = config.allow_partial;
      pc.seed = derive_seed(seed, "descriptive-prefs");
      emit(FeedbackType::DescriptivePreference, gen_descriptive_prefs(clusters, pc));
    }
    if (wants(FeedbackType::Descriptive)) emit(FeedbackType::Descriptive, std::move(clusters));
  }
  return out;
}

ExperimentSetup build_setup(const EnvSpec& spec, const SetupConfig& config, std::uint64_t seed) {
  if (config.n_runs < 1) throw ConfigError("n_runs must be at least 1");
  ExperimentSetup s;
  s.spec = spec;
  for (int r = 0; r < config.n_runs; ++r)
    s.runs.push_back(train_expert(spec, config.expert, derive_seed(seed, "expert-run", static_cast<std::uint64_t>(r))));
  s.experts = select_top_experts(s.runs, config.n_runs);

  std::vector<Checkpoint> all;
  for (const auto& run : s.runs) all.insert(all.end(), run.begin(), run.end());
  RolloutConfig rc = config.rollout;
  rc.seed = derive_seed(seed, "buffer");
  s.buffer = collect_segments(all, spec, rc);
  RolloutConfig hc = config.rollout;
  hc.n_segments = config.holdout_segments;
  hc.seed = derive_seed(seed, "holdout");
  s.holdout = collect_segments(all, spec, hc);
  return s;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DomainError("pearson inputs differ in length");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<double> predicted_sums(const RewardEnsemble& model, const RolloutBuffer& buffer) {
  std::vector<double> out;
  out.reserve(buffer.size());
  for (const auto& seg : buffer.segments) out.push_back(model.predict_segment(seg));
  return out;
}

std::optional<double> reward_correlation(const RewardEnsemble& model, const RolloutBuffer& buffer, double gamma) {
  const auto pred = predicted_sums(model, buffer);
  const auto truth = buffer.returns(gamma);
  return pearson(pred, truth);
}

PolicyAgreement policy_agreement(const Policy& policy, const std::vector<DemoInstance>& demos, const EnvSpec& spec) {
  Rng rng(0);  // greedy actions consume no randomness
  const double tol = spec.discrete() ? 0.5 : 0.1 * (std::get<BoxScalar>(spec.action_space).hi -
                                                    std::get<BoxScalar>(spec.action_space).lo);
  long n = 0, agree = 0;
  std::map<int, std::vector<int>> counts;
  for (const auto& d : demos)
    for (const auto& t : d.demo_segment.transitions) {
      ++n;
      if (std::abs(policy.act(spec, t.obs, rng, true) - t.action) <= tol) ++agree;
      if (spec.discrete()) {
        auto& c = counts[cell_index(spec, cell_from_observation(spec, t.obs))];
        c.resize(static_cast<std::size_t>(spec.n_actions()), 0);
        c[static_cast<std::size_t>(std::lround(t.action))]++;
      }
    }
  if (n == 0) throw DomainError("agreement needs at least one demo transition");
  PolicyAgreement out;
  out.per_transition = static_cast<double>(agree) / static_cast<double>(n);
  out.per_state = out.per_transition;
  if (spec.discrete()) {
    int hits = 0;
    for (const auto& [cell, c] : counts) {
      const Observation obs = observe(spec, EnvState{spec.env_id, cell_from_index(spec, cell), 0, false, 0});
      const auto a = static_cast<std::size_t>(std::lround(policy.act(spec, obs, rng, true)));
      if (c[a] == *std::max_element(c.begin(), c.end())) ++hits;
    }
    out.per_state = static_cast<double>(hits) / static_cast<double>(counts.size());
  }
  return out;
}

}  // namespace fblab
