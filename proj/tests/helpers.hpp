#pragma once

#include <initializer_list>
#include <vector>

#include "fblab/env.hpp"
#include "fblab/expert.hpp"
#include "fblab/rollout.hpp"

namespace testutil {

inline fblab::EnvState grid_state(int x, int y, int step_count = 0) {
  fblab::EnvState s;
  s.env_id = fblab::EnvId::GridNav;
  s.physical = fblab::GridCell{x, y};
  s.step_count = step_count;
  return s;
}

// Segment obtained by stepping `actions` from `start`.
inline fblab::Segment walk(const fblab::EnvSpec& spec, const fblab::EnvState& start, const std::vector<double>& actions) {
  fblab::Segment seg;
  seg.env_id = spec.env_id;
  seg.initial_snapshot = start;
  fblab::EnvState s = start;
  for (double a : actions) {
    auto [t, next] = fblab::step(spec, s, a);
    seg.transitions.push_back(t);
    s = next;
    if (t.terminated) break;
  }
  seg.final_snapshot = s;
  return seg;
}

// Segment with the given rewards on dummy GridNav transitions.
inline fblab::Segment with_rewards(std::initializer_list<double> rewards) {
  fblab::Segment seg;
  for (double r : rewards) {
    fblab::Transition t;
    t.obs = {0.0, 0.0};
    t.next_obs = {0.0, 0.0};
    t.reward = r;
    seg.transitions.push_back(t);
  }
  return seg;
}

// Tabular policy that always takes `action`.
inline fblab::Policy constant_policy(const fblab::EnvSpec& spec, int action) {
  fblab::TabularPolicy t;
  t.n_states = spec.n_cells();
  t.n_actions = 4;
  t.q.assign(static_cast<std::size_t>(t.n_states) * 4, 0.0);
  for (int s = 0; s < t.n_states; ++s) t.q[static_cast<std::size_t>(s) * 4 + action] = 1.0;
  fblab::Policy p;
  p.kind = t;
  return p;
}

// GridNav buffer of one-step segments whose rewards are the given returns.
inline fblab::RolloutBuffer buffer_with_returns(std::initializer_list<double> returns) {
  fblab::RolloutBuffer b;
  b.spec = fblab::EnvSpec::grid_nav();
  for (double r : returns) {
    b.segments.push_back(with_rewards({r}));
    b.provenance.push_back({});
  }
  return b;
}

}  // namespace testutil
