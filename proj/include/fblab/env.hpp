#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "fblab/rng.hpp"

namespace fblab {

enum class EnvId { GridNav, PointMass };

std::string_view to_string(EnvId id);
EnvId env_id_from_string(std::string_view name);

struct DiscreteActions {
  int n = 4;
  bool operator==(const DiscreteActions&) const = default;
};
struct BoxScalar {
  double lo = -1.0;
  double hi = 1.0;
  bool operator==(const BoxScalar&) const = default;
};
using ActionSpace = std::variant<DiscreteActions, BoxScalar>;

// Static description of an environment instance.
struct EnvSpec {
  EnvId env_id = EnvId::GridNav;
  int obs_dim = 2;
  ActionSpace action_space = DiscreteActions{4};
  int horizon = 64;
  double gamma = 0.99;
  int grid_size = 8;  // GridNav: side length of the square grid.
  double dt = 0.1;    // PointMass: integration step.

  static EnvSpec grid_nav(int grid_size = 8, int horizon = 64, double gamma = 0.99);
  static EnvSpec point_mass(int horizon = 100, double gamma = 0.99);

  bool discrete() const { return std::holds_alternative<DiscreteActions>(action_space); }
  int n_actions() const;  // discrete only
  int feature_dim() const;
  int n_cells() const { return grid_size * grid_size; }
  void validate() const;
  bool operator==(const EnvSpec&) const = default;
};

// GridNav actions.
enum GridAction : int { kUp = 0, kRight = 1, kDown = 2, kLeft = 3 };

struct GridCell {
  int x = 0;
  int y = 0;
  bool operator==(const GridCell&) const = default;
};
struct PointMassState {
  double p = 0.0;
  double v = 0.0;
  bool operator==(const PointMassState&) const = default;
};

// Full restorable environment state ("state copy").
struct EnvState {
  EnvId env_id = EnvId::GridNav;
  std::variant<GridCell, PointMassState> physical = GridCell{};
  int step_count = 0;
  bool done = false;
  std::uint64_t rng_state = 0;
  bool operator==(const EnvState&) const = default;
};

using Observation = std::vector<double>;

struct Transition {
  Observation obs;       // observation before the action
  double action = 0.0;   // GridNav: integral index; PointMass: scalar force
  double reward = 0.0;   // ground-truth r(s, a)
  Observation next_obs;  // observation after the action
  bool terminated = false;  // episode over (goal or horizon)
  bool truncated = false;   // ended by the horizon rather than an absorbing state
  bool operator==(const Transition&) const = default;
};

// Bounded slice of one episode; never continues past a terminated transition.
struct Segment {
  std::vector<Transition> transitions;
  EnvState initial_snapshot;
  EnvState final_snapshot;  // state after the last transition
  int source_checkpoint = -1;
  EnvId env_id = EnvId::GridNav;

  std::size_t size() const { return transitions.size(); }
  bool empty() const { return transitions.empty(); }
  std::vector<double> rewards() const;
  bool operator==(const Segment&) const = default;
};

// Pure dynamics.
EnvState reset_state(const EnvSpec& spec, Rng& rng);
std::pair<Transition, EnvState> step(const EnvSpec& spec, const EnvState& state, double action);
Observation observe(const EnvSpec& spec, const EnvState& state);
void validate_action(const EnvSpec& spec, double action);

GridCell goal_cell(const EnvSpec& spec);
int cell_index(const EnvSpec& spec, GridCell c);
GridCell cell_from_index(const EnvSpec& spec, int index);
GridCell grid_move(const EnvSpec& spec, GridCell c, int action);
GridCell cell_from_observation(const EnvSpec& spec, std::span<const double> obs);

// Mutable single-threaded environment handle around the pure dynamics.
class Env {
 public:
  explicit Env(EnvSpec spec);
  const EnvSpec& spec() const { return spec_; }
  const EnvState& state() const { return state_; }
  Observation reset(Rng& rng);
  Transition step(double action);
  EnvState snapshot() const { return state_; }
  void restore(const EnvState& snapshot);
  Observation observation() const { return observe(spec_, state_); }

 private:
  EnvSpec spec_;
  EnvState state_;
};

double discounted_return(std::span<const double> rewards, double gamma);
double discounted_return(const Segment& segment, double gamma);

// Reward-model / k-means input for a state-action pair.
std::vector<double> encode(const EnvSpec& spec, std::span<const double> obs, double action);
std::vector<double> encode(const EnvSpec& spec, const Transition& t);

// Replays the segment's actions from its initial snapshot and returns the
// regenerated segment (used for restorability checks).
Segment replay(const EnvSpec& spec, const Segment& segment);

}  // namespace fblab
