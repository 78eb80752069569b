#include "fblab/noise.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fblab/errors.hpp"
#include "fblab/normal.hpp"

namespace fblab {

std::string_view to_string(NoiseVariant v) {
  return v == NoiseVariant::TruncatedGaussian ? "truncated_gaussian" : "plain_gaussian_equivalent";
}

NoiseVariant noise_variant_from_string(std::string_view name) {
  if (name == "truncated_gaussian") return NoiseVariant::TruncatedGaussian;
  if (name == "plain_gaussian_equivalent") return NoiseVariant::PlainGaussianEquivalent;
  throw ConfigError("unknown noise variant: " + std::string(name));
}

void NoiseConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be finite and non-negative");
}

namespace {

// Standard normal restricted to [a, b] with a <= 0 or b <= 0 handled by the
// caller's reflection, so the interval never sits deep in the upper tail.
double standard_truncated(double a, double b, Rng& rng) {
  const double fa = normal_cdf(a);
  const double fb = normal_cdf(b);
  const double u = rng.uniform_open();
  if (fb - fa > 1e-300) {
    const double x = normal_quantile(fa + u * (fb - fa));
    if (std::isfinite(x)) return std::clamp(x, a, b);
  }
  // Both CDF values underflowed: the density is exponential near b.
  const double rate = std::fabs(b);
  const double width = (b - a) * rate;
  const double e = -std::log1p(-u * -std::expm1(-width));
  return std::clamp(b - e / rate, a, b);
}

}  // namespace

double sample_truncated_gaussian(double mu, double sigma, double lo, double hi, Rng& rng) {
  if (!(lo < hi)) throw DomainError("truncation interval must satisfy lo < hi");
  if (!(sigma >= 0.0)) throw DomainError("sigma must be non-negative");
  if (sigma == 0.0) return std::clamp(mu, lo, hi);
  const double a = (lo - mu) / sigma;
  const double b = (hi - mu) / sigma;
  // Reflect upper-tail intervals into the lower tail where the CDF is accurate.
  const double z = a > 0.0 ? -standard_truncated(-b, -a, rng) : standard_truncated(a, b, rng);
  return std::clamp(mu + sigma * z, lo, hi);
}

double perturb_value(double value, double sigma, double lo, double hi, NoiseVariant variant, Rng& rng) {
  if (sigma == 0.0 || !(lo < hi)) return value;
  if (variant == NoiseVariant::TruncatedGaussian) return sample_truncated_gaussian(value, sigma, lo, hi, rng);
  return std::clamp(rng.normal(value, sigma / kPlainGaussianScale), lo, hi);
}

std::vector<RatingInstance> perturb_evaluative(const std::vector<RatingInstance>& ratings, const NoiseConfig& cfg,
                                               int n_bins) {
  cfg.validate();
  if (cfg.beta == 0.0) return ratings;
  std::vector<RatingInstance> out = ratings;
  const double sigma = cfg.beta * n_bins;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, "noise-evaluative", i));
    const double v = perturb_value(out[i].rating, sigma, 1.0, n_bins, cfg.variant, rng);
    out[i].rating = std::clamp(static_cast<int>(std::round(v)), 1, n_bins);
  }
  return out;
}

namespace {

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  void add(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double width() const { return hi - lo; }
};

PreferenceLabel label_from(double first, double second, PreferenceLabel fallback) {
  if (first > second) return PreferenceLabel::FirstPreferred;
  if (second > first) return PreferenceLabel::SecondPreferred;
  return fallback;
}

// Perturbs both returns of every pair and relabels from the noisy gap.
template <class T, class GetA, class GetB>
std::vector<T> perturb_pairs(const std::vector<T>& items, const NoiseConfig& cfg, std::string_view stream, GetA get_a,
                             GetB get_b) {
  cfg.validate();
  if (cfg.beta == 0.0 || items.empty()) return items;
  Range range;
  for (const auto& it : items) {
    range.add(get_a(it));
    range.add(get_b(it));
  }
  std::vector<T> out = items;
  if (!(range.width() > 0.0)) return out;
  const double sigma = cfg.beta * range.width();
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, stream, i));
    const double a = perturb_value(get_a(items[i]), sigma, range.lo, range.hi, cfg.variant, rng);
    const double b = perturb_value(get_b(items[i]), sigma, range.lo, range.hi, cfg.variant, rng);
    out[i].label = label_from(a, b, items[i].label);
  }
  return out;
}

}  // namespace

std::vector<SegmentPreference> perturb_return_based(const std::vector<SegmentPreference>& prefs,
                                                    const NoiseConfig& cfg) {
  return perturb_pairs(
      prefs, cfg, "noise-comparative", [](const SegmentPreference& p) { return p.first_return; },
      [](const SegmentPreference& p) { return p.second_return; });
}

std::vector<CorrectionInstance> perturb_return_based(const std::vector<CorrectionInstance>& corrections,
                                                     const NoiseConfig& cfg) {
  // "First" is the original segment, "second" the improvement.
  return perturb_pairs(
      corrections, cfg, "noise-corrective", [](const CorrectionInstance& c) { return c.original_return; },
      [](const CorrectionInstance& c) { return c.improved_return; });
}

std::vector<ClusterPreference> perturb_return_based(const std::vector<ClusterPreference>& prefs,
                                                    const NoiseConfig& cfg) {
  return perturb_pairs(
      prefs, cfg, "noise-descriptive-prefs", [](const ClusterPreference& p) { return p.first.mean_reward; },
      [](const ClusterPreference& p) { return p.second.mean_reward; });
}

std::vector<DemoInstance> perturb_demonstrations(const std::vector<DemoInstance>& demos, const EnvSpec& spec,
                                                 const NoiseConfig& cfg) {
  cfg.validate();
  if (cfg.beta == 0.0 || demos.empty()) return demos;
  const std::size_t d = static_cast<std::size_t>(spec.obs_dim);

  // Per-dimension statistics over every demo step; index d is the action.
  std::vector<Range> range(d + 1);
  std::vector<double> sum(d + 1, 0.0), sumsq(d + 1, 0.0);
  double n = 0.0;
  for (const auto& demo : demos) {
    for (const auto& t : demo.demo_segment.transitions) {
      if (t.obs.size() != d) throw ShapeError("demo observation does not match the environment");
      for (std::size_t j = 0; j <= d; ++j) {
        const double v = j < d ? t.obs[j] : t.action;
        range[j].add(v);
        sum[j] += v;
      }
      n += 1.0;
    }
  }
  if (n == 0.0) return demos;
  std::vector<double> mean(d + 1);
  for (std::size_t j = 0; j <= d; ++j) mean[j] = sum[j] / n;
  for (const auto& demo : demos)
    for (const auto& t : demo.demo_segment.transitions)
      for (std::size_t j = 0; j <= d; ++j) {
        const double v = (j < d ? t.obs[j] : t.action) - mean[j];
        sumsq[j] += v * v;
      }

  std::vector<DemoInstance> out = demos;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, "noise-demonstrative", i));
    auto& trans = out[i].demo_segment.transitions;
    for (auto& t : trans) {
      for (std::size_t j = 0; j <= d; ++j) {
        const double sigma = cfg.beta * std::sqrt(sumsq[j] / n);
        double& v = j < d ? t.obs[j] : t.action;
        v = perturb_value(v, sigma, range[j].lo, range[j].hi, cfg.variant, rng);
      }
      // Discrete actions stay valid indices.
      if (spec.discrete()) t.action = std::clamp(std::round(t.action), 0.0, spec.n_actions() - 1.0);
    }
    // Keep the segment self-consistent: each step starts where the last ended.
    for (std::size_t k = 0; k + 1 < trans.size(); ++k) trans[k].next_obs = trans[k + 1].obs;
  }
  return out;
}

std::vector<ClusterDescription> perturb_descriptive(const std::vector<ClusterDescription>& clusters,
                                                    const NoiseConfig& cfg, bool* degenerate) {
  cfg.validate();
  if (degenerate) *degenerate = false;
  if (cfg.beta == 0.0 || clusters.empty()) return clusters;
  Range range;
  for (const auto& c : clusters) range.add(c.mean_reward);
  if (!(range.width() > 0.0)) {
    if (degenerate) *degenerate = true;
    return clusters;
  }
  std::vector<ClusterDescription> out = clusters;
  const double sigma = cfg.beta * range.width();
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, "noise-descriptive", i));
    out[i].mean_reward = perturb_value(out[i].mean_reward, sigma, range.lo, range.hi, cfg.variant, rng);
  }
  return out;
}

FeedbackDataset perturb(const FeedbackDataset& dataset, const EnvSpec& spec, const NoiseConfig& cfg) {
  cfg.validate();
  FeedbackDataset out;
  out.type = dataset.type;
  out.provenance = dataset.provenance;
  out.provenance.beta = cfg.beta;
  out.provenance.noise_seed = cfg.seed;
  out.provenance.noise_variant = std::string(to_string(cfg.variant));
  std::visit(
      [&](const auto& v) {
        using V = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<V, std::vector<RatingInstance>>) {
          int n_bins = 10;
          if (out.provenance.generator_config.contains("n_bins"))
            n_bins = out.provenance.generator_config["n_bins"].template get<int>();
          out.instances = perturb_evaluative(v, cfg, n_bins);
        } else if constexpr (std::is_same_v<V, std::vector<DemoInstance>>) {
          out.instances = perturb_demonstrations(v, spec, cfg);
        } else if constexpr (std::is_same_v<V, std::vector<ClusterDescription>>) {
          out.instances = perturb_descriptive(v, cfg);
        } else {
          out.instances = perturb_return_based(v, cfg);
        }
      },
      dataset.instances);
  return out;
}

}  // namespace fblab
