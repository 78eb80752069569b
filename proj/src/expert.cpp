#include "fblab/expert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fblab/errors.hpp"

namespace fblab {

int TabularPolicy::greedy_action(int s) const {
  int best = 0;
  for (int a = 1; a < n_actions; ++a)
    if (value(s, a) > value(s, best)) best = a;
  return best;
}

namespace {

int random_argmax(const TabularPolicy& t, int s, Rng& rng) {
  double best = -std::numeric_limits<double>::infinity();
  int count = 0;
  int choice = 0;
  for (int a = 0; a < t.n_actions; ++a) {
    const double q = t.value(s, a);
    if (q > best) {
      best = q;
      count = 1;
      choice = a;
    } else if (q == best) {
      // Reservoir sampling over the tied maxima.
      ++count;
      if (rng.uniform_index(count) == 0) choice = a;
    }
  }
  return choice;
}

double clip(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

}  // namespace

double Policy::act(const EnvSpec& spec, std::span<const double> obs, Rng& rng, bool greedy) const {
  return std::visit(
      [&](const auto& p) -> double {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TabularPolicy>) {
          const int s = cell_index(spec, cell_from_observation(spec, obs));
          if (greedy) return p.greedy_action(s);
          if (rng.bernoulli(p.epsilon)) return static_cast<double>(rng.uniform_index(p.n_actions));
          return random_argmax(p, s, rng);
        } else if constexpr (std::is_same_v<T, PdPolicy>) {
          const auto& box = std::get<BoxScalar>(spec.action_space);
          double a = -p.k1 * obs[0] - p.k2 * obs[1];
          if (!greedy && p.action_noise > 0.0) a += p.action_noise * rng.normal();
          return clip(a, box.lo, box.hi);
        } else if constexpr (std::is_same_v<T, RandomPolicy>) {
          if (spec.discrete()) return static_cast<double>(rng.uniform_index(spec.n_actions()));
          const auto& box = std::get<BoxScalar>(spec.action_space);
          return rng.uniform(box.lo, box.hi);
        } else {
          Eigen::MatrixXd x(1, static_cast<Eigen::Index>(obs.size()));
          for (std::size_t i = 0; i < obs.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = obs[i];
          const Eigen::RowVectorXd out = p.net.forward(x).row(0);
          if (spec.discrete()) {
            Eigen::Index best = 0;
            out.maxCoeff(&best);
            if (greedy) return static_cast<double>(best);
            const Eigen::ArrayXd e = (out.array() - out.maxCoeff()).exp();
            double u = rng.uniform() * e.sum();
            for (Eigen::Index a = 0; a < e.size(); ++a) {
              u -= e[a];
              if (u < 0.0) return static_cast<double>(a);
            }
            return static_cast<double>(e.size() - 1);
          }
          const auto& box = std::get<BoxScalar>(spec.action_space);
          return clip(out[0], box.lo, box.hi);
        }
      },
      kind);
}

void Policy::check_compatible(const EnvSpec& spec) const {
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TabularPolicy>) {
          if (spec.env_id != EnvId::GridNav || p.n_states != spec.n_cells() || p.n_actions != spec.n_actions() ||
              p.q.size() != static_cast<std::size_t>(p.n_states) * p.n_actions)
            throw DomainError("tabular policy does not match the environment");
        } else if constexpr (std::is_same_v<T, PdPolicy>) {
          if (spec.env_id != EnvId::PointMass) throw DomainError("PD policy requires PointMass");
          if (!std::isfinite(p.k1) || !std::isfinite(p.k2)) throw DomainError("PD gains must be finite");
        } else if constexpr (std::is_same_v<T, ClonedPolicy>) {
          if (p.net.input_dim() != spec.obs_dim) throw ShapeError("cloned policy input size mismatch");
          const int want = spec.discrete() ? spec.n_actions() : 1;
          if (p.net.output_dim() != want) throw ShapeError("cloned policy output size mismatch");
        }
      },
      kind);
}

EvalResult evaluate_policy(const Policy& policy, const EnvSpec& spec, int n_episodes, std::uint64_t seed,
                           bool greedy) {
  if (n_episodes < 1) throw ConfigError("n_episodes must be at least 1");
  policy.check_compatible(spec);
  EvalResult result;
  Env env(spec);
  for (int ep = 0; ep < n_episodes; ++ep) {
    Rng rng(derive_seed(seed, "eval-episode", static_cast<std::uint64_t>(ep)));
    Observation obs = env.reset(rng);
    double total = 0.0;
    while (true) {
      const Transition t = env.step(policy.act(spec, obs, rng, greedy));
      total += t.reward;
      obs = t.next_obs;
      if (t.terminated) break;
    }
    result.returns.push_back(total);
  }
  result.mean = std::accumulate(result.returns.begin(), result.returns.end(), 0.0) / n_episodes;
  return result;
}

namespace {

void validate_expert_config(const ExpertConfig& c) {
  if (c.total_steps <= 0) throw ConfigError("expert training budget must be positive");
  if (c.n_checkpoints < 2) throw ConfigError("need at least two checkpoints");
  if (c.eval_episodes < 1) throw ConfigError("eval_episodes must be at least 1");
}

double checkpoint_eval(const Policy& p, const EnvSpec& spec, const ExpertConfig& c) {
  return evaluate_policy(p, spec, c.eval_episodes, c.eval_seed, !c.stochastic_eval).mean;
}

std::vector<Checkpoint> train_q_learning(const EnvSpec& spec, const ExpertConfig& c, std::uint64_t seed) {
  TabularPolicy table;
  table.n_states = spec.n_cells();
  table.n_actions = spec.n_actions();
  table.q.assign(static_cast<std::size_t>(table.n_states) * table.n_actions, 0.0);
  table.epsilon = c.epsilon;

  Rng rng(derive_seed(seed, "q-learning"));
  Env env(spec);
  Observation obs = env.reset(rng);
  std::vector<Checkpoint> out;
  int next_ckpt = 1;
  Policy behaviour{table, true};
  for (long step = 1; step <= c.total_steps; ++step) {
    auto& tab = std::get<TabularPolicy>(behaviour.kind);
    const int s = cell_index(spec, cell_from_observation(spec, obs));
    const int a = static_cast<int>(behaviour.act(spec, obs, rng, false));
    const Transition t = env.step(a);
    const int s2 = cell_index(spec, cell_from_observation(spec, t.next_obs));
    double target = t.reward;
    if (!t.terminated || t.truncated) target += spec.gamma * tab.value(s2, tab.greedy_action(s2));
    double& q = tab.q[static_cast<std::size_t>(s) * tab.n_actions + a];
    q += c.learning_rate * (target - q);
    obs = t.terminated ? env.reset(rng) : t.next_obs;

    const long due = c.total_steps * next_ckpt / c.n_checkpoints;
    if (step == due) {
      Checkpoint ck;
      TabularPolicy snapshot = tab;
      snapshot.epsilon = c.behavior_epsilon;
      ck.policy = Policy{snapshot, true};
      ck.train_step = step;
      ck.eval_return = checkpoint_eval(ck.policy, spec, c);
      out.push_back(std::move(ck));
      ++next_ckpt;
    }
  }
  return out;
}

std::vector<Checkpoint> train_pd_search(const EnvSpec& spec, const ExpertConfig& c, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "pd-search"));
  auto score = [&](double k1, double k2) {
    return checkpoint_eval(Policy{PdPolicy{k1, k2, c.pd_action_noise}, true}, spec, c);
  };
  // Iterated grid refinement around the incumbent; the span halves each round.
  double best_k1 = rng.uniform(0.5, 3.0);
  double best_k2 = rng.uniform(0.5, 3.0);
  double best = score(best_k1, best_k2);
  double span = 4.0;
  const int g = std::max(2, c.pd_grid_points);
  for (int round = 0; round < c.pd_refine_rounds; ++round) {
    const double c1 = best_k1;
    const double c2 = best_k2;
    for (int i = 0; i < g; ++i) {
      for (int j = 0; j < g; ++j) {
        const double k1 = std::max(0.0, c1 + span * (static_cast<double>(i) / (g - 1) - 0.5));
        const double k2 = std::max(0.0, c2 + span * (static_cast<double>(j) / (g - 1) - 0.5));
        const double s = score(k1, k2);
        if (s > best) {
          best = s;
          best_k1 = k1;
          best_k2 = k2;
        }
      }
    }
    span *= 0.5;
  }
  // Learning-curve surrogate: interpolate from a poor random setting to the
  // tuned gains.
  const double init_k1 = rng.uniform(-0.3, 0.1);
  const double init_k2 = rng.uniform(-0.3, 0.1);
  std::vector<Checkpoint> out;
  for (int i = 0; i < c.n_checkpoints; ++i) {
    const double w = static_cast<double>(i) / (c.n_checkpoints - 1);
    Checkpoint ck;
    ck.policy = Policy{PdPolicy{init_k1 + w * (best_k1 - init_k1), init_k2 + w * (best_k2 - init_k2),
                                c.pd_action_noise},
                       true};
    ck.train_step = c.total_steps * (i + 1) / c.n_checkpoints;
    ck.eval_return = checkpoint_eval(ck.policy, spec, c);
    out.push_back(std::move(ck));
  }
  return out;
}

}  // namespace

std::vector<Checkpoint> train_expert(const EnvSpec& spec, const ExpertConfig& config, std::uint64_t seed) {
  spec.validate();
  validate_expert_config(config);
  return spec.env_id == EnvId::GridNav ? train_q_learning(spec, config, seed) : train_pd_search(spec, config, seed);
}

double ValueTable::at(const EnvState& state) const {
  if (state.env_id != spec.env_id) throw DomainError("value lookup for a different environment");
  switch (kind) {
    case Kind::Exact: {
      const auto& c = std::get<GridCell>(state.physical);
      return values.at(static_cast<std::size_t>(cell_index(spec, c)));
    }
    case Kind::FiniteHorizon: {
      const auto& c = std::get<GridCell>(state.physical);
      const int t = std::clamp(state.step_count, 0, spec.horizon);
      return values.at(static_cast<std::size_t>(t) * spec.n_cells() + cell_index(spec, c));
    }
    case Kind::Approx: {
      const auto& pm = std::get<PointMassState>(state.physical);
      const double fp = (std::clamp(pm.p, grid.p_lo, grid.p_hi) - grid.p_lo) / (grid.p_hi - grid.p_lo) *
                        (grid.p_points - 1);
      const double fv = (std::clamp(pm.v, grid.v_lo, grid.v_hi) - grid.v_lo) / (grid.v_hi - grid.v_lo) *
                        (grid.v_points - 1);
      const int i0 = std::min(static_cast<int>(fp), grid.p_points - 2);
      const int j0 = std::min(static_cast<int>(fv), grid.v_points - 2);
      const double wp = fp - i0;
      const double wv = fv - j0;
      auto v = [&](int i, int j) { return values[static_cast<std::size_t>(i) * grid.v_points + j]; };
      return (1 - wp) * (1 - wv) * v(i0, j0) + wp * (1 - wv) * v(i0 + 1, j0) + (1 - wp) * wv * v(i0, j0 + 1) +
             wp * wv * v(i0 + 1, j0 + 1);
    }
  }
  return 0.0;
}

namespace {

void require_grid(const EnvSpec& spec) {
  if (spec.env_id != EnvId::GridNav)
    throw UnsupportedEnvError("exact values are only available for GridNav; use approx_value_function");
}

// r(s, a) and whether the move ends in the absorbing goal.
std::pair<double, bool> grid_outcome(const EnvSpec& spec, GridCell c, int a, GridCell& next) {
  next = grid_move(spec, c, a);
  const bool goal = next == goal_cell(spec);
  return {goal ? 1.0 : -0.04, goal};
}

}  // namespace

ValueTable exact_value_function(const EnvSpec& spec, double gamma) {
  require_grid(spec);
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  ValueTable vt;
  vt.kind = ValueTable::Kind::Exact;
  vt.spec = spec;
  vt.gamma = gamma;
  const int n = spec.n_cells();
  const int goal = cell_index(spec, goal_cell(spec));
  std::vector<double> v(static_cast<std::size_t>(n), 0.0);
  for (int iter = 0; iter < 100000; ++iter) {
    std::vector<double> nv(v.size(), 0.0);
    double residual = 0.0;
    for (int s = 0; s < n; ++s) {
      if (s == goal) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < spec.n_actions(); ++a) {
        GridCell next;
        const auto [r, absorbing] = grid_outcome(spec, cell_from_index(spec, s), a, next);
        const double q = r + (absorbing ? 0.0 : gamma * v[cell_index(spec, next)]);
        best = std::max(best, q);
      }
      nv[s] = best;
      residual = std::max(residual, std::fabs(best - v[s]));
    }
    v = std::move(nv);
    vt.residual = residual;
    if (residual < 1e-12) break;
  }
  // Report the residual of the returned table itself.
  double residual = 0.0;
  for (int s = 0; s < n; ++s) {
    if (s == goal) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (int a = 0; a < spec.n_actions(); ++a) {
      GridCell next;
      const auto [r, absorbing] = grid_outcome(spec, cell_from_index(spec, s), a, next);
      best = std::max(best, r + (absorbing ? 0.0 : gamma * v[cell_index(spec, next)]));
    }
    residual = std::max(residual, std::fabs(best - v[s]));
  }
  vt.residual = residual;
  vt.values = std::move(v);
  return vt;
}

ValueTable finite_horizon_value_function(const EnvSpec& spec, double gamma) {
  require_grid(spec);
  ValueTable vt;
  vt.kind = ValueTable::Kind::FiniteHorizon;
  vt.spec = spec;
  vt.gamma = gamma;
  const int n = spec.n_cells();
  const int goal = cell_index(spec, goal_cell(spec));
  vt.values.assign(static_cast<std::size_t>(spec.horizon + 1) * n, 0.0);
  for (int t = spec.horizon - 1; t >= 0; --t) {
    for (int s = 0; s < n; ++s) {
      if (s == goal) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (int a = 0; a < spec.n_actions(); ++a) {
        GridCell next;
        const auto [r, absorbing] = grid_outcome(spec, cell_from_index(spec, s), a, next);
        const double cont = absorbing ? 0.0 : vt.values[static_cast<std::size_t>(t + 1) * n + cell_index(spec, next)];
        best = std::max(best, r + gamma * cont);
      }
      vt.values[static_cast<std::size_t>(t) * n + s] = best;
    }
  }
  return vt;
}

ValueTable approx_value_function(const EnvSpec& spec, double gamma, const ValueTable::Grid& grid) {
  if (spec.env_id != EnvId::PointMass) throw UnsupportedEnvError("approx values are implemented for PointMass");
  if (grid.p_points < 2 || grid.v_points < 2 || grid.actions.empty()) throw ConfigError("degenerate value grid");
  ValueTable vt;
  vt.kind = ValueTable::Kind::Approx;
  vt.spec = spec;
  vt.gamma = gamma;
  vt.grid = grid;
  vt.values.assign(static_cast<std::size_t>(grid.p_points) * grid.v_points, 0.0);
  EnvState probe;
  probe.env_id = EnvId::PointMass;
  for (int iter = 0; iter < 20000; ++iter) {
    std::vector<double> next(vt.values.size());
    double residual = 0.0;
    for (int i = 0; i < grid.p_points; ++i) {
      const double p = grid.p_lo + (grid.p_hi - grid.p_lo) * i / (grid.p_points - 1);
      for (int j = 0; j < grid.v_points; ++j) {
        const double v = grid.v_lo + (grid.v_hi - grid.v_lo) * j / (grid.v_points - 1);
        double best = -std::numeric_limits<double>::infinity();
        for (double a : grid.actions) {
          const double r = -(p * p + 0.1 * v * v + 0.01 * a * a);
          probe.physical = PointMassState{p + v * spec.dt, v + a * spec.dt};
          best = std::max(best, r + gamma * vt.at(probe));
        }
        const std::size_t idx = static_cast<std::size_t>(i) * grid.v_points + j;
        next[idx] = best;
        residual = std::max(residual, std::fabs(best - vt.values[idx]));
      }
    }
    vt.values = std::move(next);
    vt.residual = residual;
    if (residual < 1e-8) break;
  }
  return vt;
}

Policy greedy_policy_from_values(const ValueTable& vt) {
  require_grid(vt.spec);
  if (vt.kind != ValueTable::Kind::Exact) throw ConfigError("greedy policy needs a stationary exact table");
  const EnvSpec& spec = vt.spec;
  TabularPolicy t;
  t.n_states = spec.n_cells();
  t.n_actions = spec.n_actions();
  t.q.assign(static_cast<std::size_t>(t.n_states) * t.n_actions, 0.0);
  t.epsilon = 0.0;
  for (int s = 0; s < t.n_states; ++s) {
    for (int a = 0; a < t.n_actions; ++a) {
      GridCell next;
      const auto [r, absorbing] = grid_outcome(spec, cell_from_index(spec, s), a, next);
      t.q[static_cast<std::size_t>(s) * t.n_actions + a] =
          r + (absorbing ? 0.0 : vt.gamma * vt.values[cell_index(spec, next)]);
    }
  }
  return Policy{t, true};
}

ExpertEnsemble select_top_experts(std::span<const std::vector<Checkpoint>> runs, int k) {
  if (k < 1) throw ConfigError("k must be at least 1");
  if (runs.size() < static_cast<std::size_t>(k)) throw ConfigError("fewer expert runs than requested experts");
  std::vector<int> order(runs.size());
  std::iota(order.begin(), order.end(), 0);
  for (const auto& r : runs)
    if (r.empty()) throw ConfigError("expert run without checkpoints");
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return runs[a].back().eval_return > runs[b].back().eval_return; });
  ExpertEnsemble e;
  for (int i = 0; i < k; ++i) {
    const auto& final = runs[order[i]].back();
    e.experts.push_back(final.policy);
    e.eval_returns.push_back(final.eval_return);
    e.run_indices.push_back(order[i]);
  }
  return e;
}

}  // namespace fblab
