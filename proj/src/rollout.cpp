#include "fblab/rollout.hpp"

#include <algorithm>
#include <tuple>

#include "fblab/errors.hpp"

namespace fblab {

std::vector<double> RolloutBuffer::returns(double gamma) const {
  std::vector<double> r;
  r.reserve(segments.size());
  for (const auto& s : segments) r.push_back(discounted_return(s, gamma));
  return r;
}

namespace {

struct RecordedStep {
  EnvState before;
  Transition transition;
  int episode = 0;
  int index_in_episode = 0;
};

// Rolls the behaviour policy for at least `budget` steps, finishing the last
// episode so that no segment is cut by the budget.
std::vector<RecordedStep> record(const Policy& policy, const EnvSpec& spec, long budget, Rng& rng) {
  std::vector<RecordedStep> steps;
  steps.reserve(static_cast<std::size_t>(budget) + static_cast<std::size_t>(spec.horizon));
  Env env(spec);
  Observation obs = env.reset(rng);
  int episode = 0;
  int index = 0;
  while (true) {
    RecordedStep rs;
    rs.before = env.snapshot();
    rs.transition = env.step(policy.act(spec, obs, rng, false));
    rs.episode = episode;
    rs.index_in_episode = index++;
    const bool done = rs.transition.terminated;
    obs = rs.transition.next_obs;
    steps.push_back(std::move(rs));
    if (done) {
      if (static_cast<long>(steps.size()) >= budget) break;
      obs = env.reset(rng);
      ++episode;
      index = 0;
    }
  }
  return steps;
}

}  // namespace

RolloutBuffer collect_segments(std::span<const Checkpoint> checkpoints, const EnvSpec& spec,
                               const RolloutConfig& config) {
  if (config.n_segments < 1) throw ConfigError("n_segments must be at least 1");
  if (config.max_len < 1) throw ConfigError("max_len must be at least 1");
  if (checkpoints.empty()) throw ConfigError("at least one checkpoint is required");
  spec.validate();
  for (const auto& ck : checkpoints) ck.policy.check_compatible(spec);

  const int n_ckpt = static_cast<int>(checkpoints.size());
  const long budget = config.steps_per_checkpoint > 0
                          ? config.steps_per_checkpoint
                          : std::max<long>(1, static_cast<long>(config.n_segments) * config.max_len / n_ckpt);

  RolloutBuffer buffer;
  buffer.spec = spec;
  buffer.config = config;

  struct Pending {
    SegmentProvenance prov;
    Segment segment;
  };
  std::vector<Pending> pending;
  pending.reserve(static_cast<std::size_t>(config.n_segments));

  for (int c = 0; c < n_ckpt; ++c) {
    Rng rng(derive_seed(config.seed, "rollout", static_cast<std::uint64_t>(c)));
    const auto steps = record(checkpoints[c].policy, spec, budget, rng);
    // Round-robin share of the segment count.
    const int share = config.n_segments / n_ckpt + (c < config.n_segments % n_ckpt ? 1 : 0);
    for (int k = 0; k < share; ++k) {
      const std::size_t start = rng.uniform_index(steps.size());
      Pending p;
      p.prov = {c, steps[start].episode, steps[start].index_in_episode};
      p.segment.env_id = spec.env_id;
      p.segment.source_checkpoint = c;
      p.segment.initial_snapshot = steps[start].before;
      for (std::size_t i = start; i < steps.size() && static_cast<int>(i - start) < config.max_len; ++i) {
        p.segment.transitions.push_back(steps[i].transition);
        if (steps[i].transition.terminated) break;
      }
      const std::size_t last = start + p.segment.size() - 1;
      p.segment.final_snapshot = last + 1 < steps.size() && steps[last + 1].episode == steps[last].episode
                                     ? steps[last + 1].before
                                     : step(spec, steps[last].before, steps[last].transition.action).second;
      pending.push_back(std::move(p));
    }
  }
  std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
    return std::tie(a.prov.checkpoint_id, a.prov.episode_id, a.prov.start_index) <
           std::tie(b.prov.checkpoint_id, b.prov.episode_id, b.prov.start_index);
  });
  for (auto& p : pending) {
    buffer.provenance.push_back(p.prov);
    buffer.segments.push_back(std::move(p.segment));
  }
  return buffer;
}

}  // namespace fblab
