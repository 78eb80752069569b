#include "fblab/env.hpp"

#include <cmath>
#include <string>

#include "fblab/errors.hpp"

namespace fblab {

std::string_view to_string(EnvId id) { return id == EnvId::GridNav ? "GridNav" : "PointMass"; }

EnvId env_id_from_string(std::string_view name) {
  if (name == "GridNav") return EnvId::GridNav;
  if (name == "PointMass") return EnvId::PointMass;
  throw ConfigError("unknown env_id: " + std::string(name));
}

EnvSpec EnvSpec::grid_nav(int grid_size, int horizon, double gamma) {
  EnvSpec s;
  s.env_id = EnvId::GridNav;
  s.obs_dim = 2;
  s.action_space = DiscreteActions{4};
  s.horizon = horizon;
  s.gamma = gamma;
  s.grid_size = grid_size;
  s.validate();
  return s;
}

EnvSpec EnvSpec::point_mass(int horizon, double gamma) {
  EnvSpec s;
  s.env_id = EnvId::PointMass;
  s.obs_dim = 2;
  s.action_space = BoxScalar{-1.0, 1.0};
  s.horizon = horizon;
  s.gamma = gamma;
  s.validate();
  return s;
}

int EnvSpec::n_actions() const {
  if (const auto* d = std::get_if<DiscreteActions>(&action_space)) return d->n;
  throw DomainError("n_actions() on a continuous action space");
}

int EnvSpec::feature_dim() const { return env_id == EnvId::GridNav ? 2 + n_actions() : 3; }

void EnvSpec::validate() const {
  if (horizon <= 0) throw ConfigError("horizon must be positive");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  if (obs_dim != 2) throw ConfigError("both built-in environments have obs_dim 2");
  if (env_id == EnvId::GridNav) {
    if (grid_size < 2) throw ConfigError("grid_size must be at least 2");
    if (!discrete() || n_actions() != 4) throw ConfigError("GridNav uses Discrete(4)");
  } else {
    if (discrete()) throw ConfigError("PointMass uses a scalar box action space");
    if (!(dt > 0.0)) throw ConfigError("dt must be positive");
  }
}

std::vector<double> Segment::rewards() const {
  std::vector<double> r;
  r.reserve(transitions.size());
  for (const auto& t : transitions) r.push_back(t.reward);
  return r;
}

GridCell goal_cell(const EnvSpec& spec) { return {spec.grid_size - 1, spec.grid_size - 1}; }

int cell_index(const EnvSpec& spec, GridCell c) { return c.y * spec.grid_size + c.x; }

GridCell cell_from_index(const EnvSpec& spec, int index) {
  return {index % spec.grid_size, index / spec.grid_size};
}

GridCell grid_move(const EnvSpec& spec, GridCell c, int action) {
  GridCell n = c;
  switch (action) {
    case kUp: n.y += 1; break;
    case kRight: n.x += 1; break;
    case kDown: n.y -= 1; break;
    case kLeft: n.x -= 1; break;
    default: throw DomainError("invalid GridNav action " + std::to_string(action));
  }
  // Bumping into a wall leaves the agent in place.
  if (n.x < 0 || n.y < 0 || n.x >= spec.grid_size || n.y >= spec.grid_size) return c;
  return n;
}

GridCell cell_from_observation(const EnvSpec& spec, std::span<const double> obs) {
  if (obs.size() != 2) throw ShapeError("GridNav observation must have 2 entries");
  const double scale = spec.grid_size - 1;
  return {static_cast<int>(std::lround(obs[0] * scale)), static_cast<int>(std::lround(obs[1] * scale))};
}

void validate_action(const EnvSpec& spec, double action) {
  if (!std::isfinite(action)) throw DomainError("non-finite action");
  if (const auto* d = std::get_if<DiscreteActions>(&spec.action_space)) {
    if (action != std::floor(action) || action < 0 || action >= d->n)
      throw DomainError("invalid discrete action index " + std::to_string(action));
  } else {
    const auto& box = std::get<BoxScalar>(spec.action_space);
    if (action < box.lo || action > box.hi) throw DomainError("scalar action out of range");
  }
}

EnvState reset_state(const EnvSpec& spec, Rng& rng) {
  EnvState s;
  s.env_id = spec.env_id;
  s.step_count = 0;
  s.done = false;
  s.rng_state = rng.next_u64();
  if (spec.env_id == EnvId::GridNav) {
    s.physical = GridCell{0, 0};
  } else {
    const double p = rng.uniform(-2.0, 2.0);
    const double v = rng.uniform(-0.5, 0.5);
    s.physical = PointMassState{p, v};
  }
  return s;
}

Observation observe(const EnvSpec& spec, const EnvState& state) {
  if (state.env_id != spec.env_id) throw DomainError("state belongs to a different environment");
  if (spec.env_id == EnvId::GridNav) {
    const auto& c = std::get<GridCell>(state.physical);
    const double scale = spec.grid_size - 1;
    return {c.x / scale, c.y / scale};
  }
  const auto& pm = std::get<PointMassState>(state.physical);
  return {pm.p, pm.v};
}

std::pair<Transition, EnvState> step(const EnvSpec& spec, const EnvState& state, double action) {
  if (state.env_id != spec.env_id) throw DomainError("state belongs to a different environment");
  if (state.done || state.step_count >= spec.horizon) throw DomainError("step on a finished episode");
  validate_action(spec, action);

  Transition t;
  t.obs = observe(spec, state);
  t.action = action;
  EnvState next = state;
  next.step_count = state.step_count + 1;

  bool absorbing = false;
  if (spec.env_id == EnvId::GridNav) {
    const auto cell = std::get<GridCell>(state.physical);
    const auto moved = grid_move(spec, cell, static_cast<int>(action));
    next.physical = moved;
    absorbing = moved == goal_cell(spec);
    t.reward = absorbing ? 1.0 : -0.04;
  } else {
    const auto pm = std::get<PointMassState>(state.physical);
    t.reward = -(pm.p * pm.p + 0.1 * pm.v * pm.v + 0.01 * action * action);
    next.physical = PointMassState{pm.p + pm.v * spec.dt, pm.v + action * spec.dt};
  }
  const bool at_horizon = next.step_count >= spec.horizon;
  t.terminated = absorbing || at_horizon;
  t.truncated = at_horizon && !absorbing;
  next.done = t.terminated;
  t.next_obs = observe(spec, next);
  return {std::move(t), std::move(next)};
}

Env::Env(EnvSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  state_.env_id = spec_.env_id;
  if (spec_.env_id == EnvId::PointMass) state_.physical = PointMassState{};
}

Observation Env::reset(Rng& rng) {
  state_ = reset_state(spec_, rng);
  return observe(spec_, state_);
}

Transition Env::step(double action) {
  auto [t, next] = fblab::step(spec_, state_, action);
  state_ = std::move(next);
  return t;
}

void Env::restore(const EnvState& snapshot) {
  if (snapshot.env_id != spec_.env_id) throw DomainError("snapshot from a different environment");
  if (spec_.env_id == EnvId::GridNav) {
    const auto* c = std::get_if<GridCell>(&snapshot.physical);
    if (!c || c->x < 0 || c->y < 0 || c->x >= spec_.grid_size || c->y >= spec_.grid_size)
      throw DomainError("snapshot cell outside the grid");
  } else if (!std::holds_alternative<PointMassState>(snapshot.physical)) {
    throw DomainError("snapshot payload does not match PointMass");
  }
  state_ = snapshot;
}

double discounted_return(std::span<const double> rewards, double gamma) {
  if (rewards.empty()) throw DomainError("discounted_return of an empty segment");
  double total = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    total += discount * r;
    discount *= gamma;
  }
  return total;
}

double discounted_return(const Segment& segment, double gamma) {
  if (segment.empty()) throw DomainError("discounted_return of an empty segment");
  double total = 0.0;
  double discount = 1.0;
  for (const auto& t : segment.transitions) {
    total += discount * t.reward;
    discount *= gamma;
  }
  return total;
}

std::vector<double> encode(const EnvSpec& spec, std::span<const double> obs, double action) {
  if (obs.size() != static_cast<std::size_t>(spec.obs_dim)) throw ShapeError("observation size mismatch");
  if (spec.env_id == EnvId::GridNav) {
    std::vector<double> f(6, 0.0);
    f[0] = obs[0];
    f[1] = obs[1];
    const long a = std::lround(action);
    if (a < 0 || a >= 4) throw DomainError("invalid discrete action for encoding");
    f[2 + a] = 1.0;
    return f;
  }
  return {obs[0], obs[1], action};
}

std::vector<double> encode(const EnvSpec& spec, const Transition& t) { return encode(spec, t.obs, t.action); }

Segment replay(const EnvSpec& spec, const Segment& segment) {
  Segment out;
  out.initial_snapshot = segment.initial_snapshot;
  out.source_checkpoint = segment.source_checkpoint;
  out.env_id = segment.env_id;
  EnvState s = segment.initial_snapshot;
  for (const auto& t : segment.transitions) {
    auto [nt, ns] = step(spec, s, t.action);
    out.transitions.push_back(std::move(nt));
    s = std::move(ns);
  }
  out.final_snapshot = s;
  return out;
}

}  // namespace fblab
