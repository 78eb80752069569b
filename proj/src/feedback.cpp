#include "fblab/feedback.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <string>
#include <utility>

#include "fblab/errors.hpp"

namespace fblab {

std::string_view to_string(FeedbackType t) {
  switch (t) {
    case FeedbackType::Evaluative: return "evaluative";
    case FeedbackType::Comparative: return "comparative";
    case FeedbackType::Demonstrative: return "demonstrative";
    case FeedbackType::Corrective: return "corrective";
    case FeedbackType::Descriptive: return "descriptive";
    case FeedbackType::DescriptivePreference: return "descriptive_preference";
  }
  return "unknown";
}

FeedbackType feedback_type_from_string(std::string_view name) {
  for (auto t : kAllFeedbackTypes)
    if (to_string(t) == name) return t;
  throw ConfigError("unknown feedback type: " + std::string(name));
}

std::size_t FeedbackDataset::size() const {
  return std::visit([](const auto& v) { return v.size(); }, instances);
}

int BinCalibration::bin_index(double value) const {
  if (value >= hi) return n_bins - 1;
  if (value <= lo) return 0;
  const int idx = static_cast<int>(std::floor((value - lo) / bin_width));
  return std::clamp(idx, 0, n_bins - 1);
}

BinCalibration calibrate_bins(std::span<const double> returns, int n_bins) {
  if (n_bins < 1) throw ConfigError("n_bins must be at least 1");
  if (returns.empty()) throw CalibrationError("empty calibration set");
  const auto [mn, mx] = std::minmax_element(returns.begin(), returns.end());
  if (!(*mx > *mn)) throw CalibrationError("calibration returns are all equal");
  BinCalibration c;
  c.n_bins = n_bins;
  c.lo = *mn;
  c.hi = *mx;
  c.bin_width = (c.hi - c.lo) / n_bins;
  return c;
}

BinCalibration calibrate_bins(const RolloutBuffer& buffer, int n_bins, double gamma) {
  const auto r = buffer.returns(gamma);
  return calibrate_bins(r, n_bins);
}

std::vector<RatingInstance> gen_evaluative(const RolloutBuffer& buffer, const BinCalibration& calibration,
                                           double gamma) {
  std::vector<RatingInstance> out;
  out.reserve(buffer.size());
  for (const auto& seg : buffer.segments) {
    RatingInstance r;
    r.segment = seg;
    r.underlying_return = discounted_return(seg, gamma);
    r.rating = calibration.rating(r.underlying_return);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

double population_std(std::span<const double> v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Two distinct indices drawn uniformly.
std::pair<std::size_t, std::size_t> draw_pair(std::size_t n, Rng& rng) {
  const std::size_t i = rng.uniform_index(n);
  std::size_t j = rng.uniform_index(n - 1);
  if (j >= i) ++j;
  return {i, j};
}

}  // namespace

std::vector<SegmentPreference> gen_comparative(const RolloutBuffer& buffer, double gamma,
                                               const ComparativeConfig& config) {
  if (buffer.size() < 2) throw ConfigError("comparative feedback needs at least two segments");
  if (config.exclusion_frac < 0.0) throw ConfigError("exclusion_frac must be non-negative");
  const auto returns = buffer.returns(gamma);
  const double threshold = config.exclusion_frac * population_std(returns);
  const std::size_t wanted = config.n_pairs > 0 ? static_cast<std::size_t>(config.n_pairs) : buffer.size();
  const std::size_t budget = wanted * static_cast<std::size_t>(std::max(1, config.retry_multiplier));

  Rng rng(derive_seed(config.seed, "comparative"));
  std::vector<SegmentPreference> out;
  out.reserve(wanted);
  for (std::size_t attempt = 0; attempt < budget && out.size() < wanted; ++attempt) {
    const auto [i, j] = draw_pair(buffer.size(), rng);
    const double gap = returns[i] - returns[j];
    if (gap == 0.0 || std::fabs(gap) < threshold) continue;
    SegmentPreference p;
    p.first = buffer.segments[i];
    p.second = buffer.segments[j];
    p.first_return = returns[i];
    p.second_return = returns[j];
    p.label = gap > 0.0 ? PreferenceLabel::FirstPreferred : PreferenceLabel::SecondPreferred;
    out.push_back(std::move(p));
  }
  if (out.size() < wanted && !config.allow_partial)
    throw GenerationExhaustedError("comparative: retry budget exhausted after " + std::to_string(out.size()) +
                                       " of " + std::to_string(wanted) + " pairs",
                                   out.size());
  return out;
}

InstructiveFeedback gen_demonstrative_and_corrective(const RolloutBuffer& buffer, std::span<const Policy> experts,
                                                     double gamma, int segment_len) {
  if (experts.empty()) throw ConfigError("at least one expert is required");
  if (segment_len < 1) throw ConfigError("segment_len must be at least 1");
  const EnvSpec& spec = buffer.spec;
  for (const auto& e : experts) e.check_compatible(spec);

  InstructiveFeedback out;
  Env env(spec);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const Segment& original = buffer.segments[i];
    Segment best;
    double best_return = 0.0;
    bool have_best = false;
    bool restore_failed = false;
    for (std::size_t e = 0; e < experts.size(); ++e) {
      try {
        env.restore(original.initial_snapshot);
      } catch (const DomainError&) {
        restore_failed = true;
        break;
      }
      Rng rng(derive_seed(0, "demo-rollout", i * experts.size() + e));
      Segment demo;
      demo.env_id = spec.env_id;
      demo.initial_snapshot = original.initial_snapshot;
      demo.source_checkpoint = -1;
      Observation obs = env.observation();
      for (int j = 0; j < segment_len; ++j) {
        Transition t = env.step(experts[e].act(spec, obs, rng, true));
        obs = t.next_obs;
        const bool done = t.terminated;
        demo.transitions.push_back(std::move(t));
        if (done) break;
      }
      demo.final_snapshot = env.snapshot();
      const double r = discounted_return(demo, gamma);
      if (!have_best || r > best_return) {
        best = std::move(demo);
        best_return = r;
        have_best = true;
      }
    }
    if (restore_failed) {
      out.skipped_segments.push_back(static_cast<int>(i));
      continue;
    }
    const double r_orig = discounted_return(original, gamma);
    if (!(best_return > r_orig)) continue;
    out.demos.push_back(DemoInstance{best, original.initial_snapshot, best_return, r_orig});
    out.corrections.push_back(
        CorrectionInstance{original, std::move(best), r_orig, best_return, PreferenceLabel::SecondPreferred});
  }
  return out;
}

std::vector<ActionAdvice> gen_action_advice(const RolloutBuffer& buffer, const Policy& expert) {
  expert.check_compatible(buffer.spec);
  std::vector<ActionAdvice> out;
  Rng rng(0);
  for (const auto& seg : buffer.segments)
    for (const auto& t : seg.transitions) out.push_back({t.obs, expert.act(buffer.spec, t.obs, rng, true)});
  return out;
}

std::vector<ClusterDescription> gen_descriptive(const RolloutBuffer& buffer, const DescriptiveConfig& config) {
  const EnvSpec& spec = buffer.spec;
  std::vector<std::vector<double>> raw;
  std::vector<double> rewards;
  for (const auto& seg : buffer.segments) {
    for (const auto& t : seg.transitions) {
      raw.push_back(encode(spec, t));
      rewards.push_back(t.reward);
    }
  }
  if (raw.empty()) throw ConfigError("descriptive feedback needs a non-empty buffer");
  const int k = config.k > 0 ? config.k : static_cast<int>(buffer.size());

  // Per-dimension z-scores for clustering; representatives stay in raw units.
  const std::size_t d = raw.front().size();
  std::vector<double> mean(d, 0.0), sd(d, 0.0);
  for (const auto& p : raw)
    for (std::size_t j = 0; j < d; ++j) mean[j] += p[j];
  for (double& m : mean) m /= static_cast<double>(raw.size());
  for (const auto& p : raw)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (p[j] - mean[j]) * (p[j] - mean[j]);
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(raw.size()));
    if (s == 0.0) s = 1.0;
  }
  std::vector<std::vector<double>> z = raw;
  for (auto& p : z)
    for (std::size_t j = 0; j < d; ++j) p[j] = (p[j] - mean[j]) / sd[j];

  KMeansOptions opt;
  opt.k = k;
  opt.batch_size = config.batch_size;
  opt.max_epochs = config.max_epochs;
  opt.tolerance = config.tolerance;
  opt.seed = derive_seed(config.seed, "descriptive");
  const KMeansResult km = minibatch_kmeans(z, opt);

  std::vector<ClusterDescription> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    out[c].cluster_id = c;
    out[c].member_count = 0;
    out[c].representative.assign(d, 0.0);
  }
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& c = out[static_cast<std::size_t>(km.assignments[i])];
    ++c.member_count;
    for (std::size_t j = 0; j < d; ++j) c.representative[j] += raw[i][j];
    c.mean_reward += rewards[i];
  }
  for (auto& c : out) {
    for (double& v : c.representative) v /= c.member_count;
    c.mean_reward /= c.member_count;
  }
  return out;
}

std::vector<ClusterPreference> gen_descriptive_prefs(std::span<const ClusterDescription> clusters,
                                                     const DescriptivePreferenceConfig& config) {
  if (clusters.size() < 2) throw ConfigError("descriptive preferences need at least two clusters");
  const std::size_t n = clusters.size();
  const std::size_t wanted = config.n_pairs > 0 ? static_cast<std::size_t>(config.n_pairs) : n;
  const std::size_t distinct = n * (n - 1) / 2;
  if (wanted > distinct) throw ConfigError("more descriptive pairs requested than distinct cluster pairs");
  const bool any_difference = std::any_of(clusters.begin(), clusters.end(), [&](const ClusterDescription& c) {
    return c.mean_reward != clusters.front().mean_reward;
  });
  if (!any_difference) throw GenerationExhaustedError("all clusters share the same mean reward", 0);

  const std::size_t budget = wanted * static_cast<std::size_t>(std::max(1, config.retry_multiplier));
  Rng rng(derive_seed(config.seed, "descriptive-prefs"));
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<ClusterPreference> out;
  out.reserve(wanted);
  for (std::size_t attempt = 0; attempt < budget && out.size() < wanted; ++attempt) {
    const auto [i, j] = draw_pair(n, rng);
    const double gap = clusters[i].mean_reward - clusters[j].mean_reward;
    if (gap == 0.0) continue;
    if (!used.insert({std::min(i, j), std::max(i, j)}).second) continue;
    out.push_back(ClusterPreference{clusters[i], clusters[j],
                                    gap > 0.0 ? PreferenceLabel::FirstPreferred : PreferenceLabel::SecondPreferred});
  }
  if (out.size() < wanted && !config.allow_partial)
    throw GenerationExhaustedError("descriptive preferences: retry budget exhausted after " +
                                       std::to_string(out.size()) + " of " + std::to_string(wanted) + " pairs",
                                   out.size());
  return out;
}

double optimality_gap(const Segment& segment, const ValueTable& values, double gamma) {
  if (segment.empty()) throw DomainError("optimality gap of an empty segment");
  if (values.spec.env_id != segment.env_id)
    throw UnsupportedEnvError("value table does not cover this environment");
  const double h = static_cast<double>(segment.size());
  return values.at(segment.initial_snapshot) -
         (discounted_return(segment, gamma) + std::pow(gamma, h) * values.at(segment.final_snapshot));
}

std::vector<RatingInstance> gen_evaluative_regret(const RolloutBuffer& buffer, const ValueTable& values,
                                                  double gamma, int n_bins) {
  if (buffer.spec.env_id != EnvId::GridNav || values.approx())
    throw UnsupportedEnvError("regret-based ratings require exact GridNav values");
  std::vector<double> score;
  score.reserve(buffer.size());
  for (const auto& seg : buffer.segments) score.push_back(-optimality_gap(seg, values, gamma));
  const BinCalibration cal = calibrate_bins(score, n_bins);
  std::vector<RatingInstance> out;
  for (std::size_t i = 0; i < buffer.size(); ++i)
    out.push_back(RatingInstance{buffer.segments[i], cal.rating(score[i]), score[i]});
  return out;
}

}  // namespace fblab
