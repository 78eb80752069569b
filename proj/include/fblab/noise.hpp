#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "fblab/feedback.hpp"
#include "fblab/rng.hpp"

namespace fblab {

enum class NoiseVariant { TruncatedGaussian, PlainGaussianEquivalent };

std::string_view to_string(NoiseVariant v);
NoiseVariant noise_variant_from_string(std::string_view name);

// A clipped plain Gaussian with sigma / kPlainGaussianScale perturbs about as
// strongly as the truncated Gaussian with sigma.
inline constexpr double kPlainGaussianScale = 4.0;

struct NoiseConfig {
  double beta = 0.0;
  std::uint64_t seed = 0;
  NoiseVariant variant = NoiseVariant::TruncatedGaussian;
  void validate() const;
};

// Gaussian N(mu, sigma) conditioned on [lo, hi], by inverse CDF.
double sample_truncated_gaussian(double mu, double sigma, double lo, double hi, Rng& rng);

// One perturbed value under the configured variant: truncated sample or
// clamped plain Gaussian with the scaled-down sigma.
double perturb_value(double value, double sigma, double lo, double hi, NoiseVariant variant, Rng& rng);

// Perturbed instances keep their ground-truth annotations (underlying_return,
// first_return, ...) so flips stay measurable; only the feedback signal moves.
std::vector<RatingInstance> perturb_evaluative(const std::vector<RatingInstance>& ratings, const NoiseConfig& cfg,
                                               int n_bins = 10);
std::vector<SegmentPreference> perturb_return_based(const std::vector<SegmentPreference>& prefs,
                                                    const NoiseConfig& cfg);
std::vector<CorrectionInstance> perturb_return_based(const std::vector<CorrectionInstance>& corrections,
                                                     const NoiseConfig& cfg);
std::vector<ClusterPreference> perturb_return_based(const std::vector<ClusterPreference>& prefs,
                                                    const NoiseConfig& cfg);
std::vector<DemoInstance> perturb_demonstrations(const std::vector<DemoInstance>& demos, const EnvSpec& spec,
                                                 const NoiseConfig& cfg);
// Returns the input unchanged (and sets *degenerate) when all rewards agree.
std::vector<ClusterDescription> perturb_descriptive(const std::vector<ClusterDescription>& clusters,
                                                    const NoiseConfig& cfg, bool* degenerate = nullptr);

// Dispatches on the dataset type and records (beta, seed, variant).
FeedbackDataset perturb(const FeedbackDataset& dataset, const EnvSpec& spec, const NoiseConfig& cfg);

}  // namespace fblab
