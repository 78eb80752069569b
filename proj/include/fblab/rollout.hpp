#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fblab/env.hpp"
#include "fblab/expert.hpp"

namespace fblab {

struct SegmentProvenance {
  int checkpoint_id = 0;
  int episode_id = 0;
  int start_index = 0;  // step index inside the episode
  bool operator==(const SegmentProvenance&) const = default;
};

struct RolloutConfig {
  int n_segments = 1000;
  int max_len = 50;
  std::uint64_t seed = 0;
  // Environment steps rolled out per checkpoint; 0 selects
  // n_segments * max_len / n_checkpoints.
  long steps_per_checkpoint = 0;
  bool operator==(const RolloutConfig&) const = default;
};

// The rollout buffer all feedback generators read from.
struct RolloutBuffer {
  EnvSpec spec;
  std::vector<Segment> segments;
  std::vector<SegmentProvenance> provenance;
  RolloutConfig config;

  std::size_t size() const { return segments.size(); }
  std::vector<double> returns(double gamma) const;
  bool operator==(const RolloutBuffer&) const = default;
};

// Rolls every checkpoint's behaviour (stochastic) policy for an equal step
// budget and cuts segments at uniformly random start positions. Segments are
// truncated at episode end and ordered by (checkpoint, episode, start).
RolloutBuffer collect_segments(std::span<const Checkpoint> checkpoints, const EnvSpec& spec,
                               const RolloutConfig& config);

}  // namespace fblab
