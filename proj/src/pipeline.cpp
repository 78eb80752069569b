#include "fblab/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>

#include "fblab/errors.hpp"
#include "fblab/io.hpp"

namespace fblab {

using nlohmann::json;

// ---------------------------------------------------------------- config

namespace {

// Strict view of one config section: unknown keys and type mismatches are
// configuration errors.
class Section {
 public:
  Section(const json& j, std::string where, std::initializer_list<const char*> allowed) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j_.items())
      if (!ok.count(k)) throw ConfigError("unknown key " + where_ + "." + k);
  }
  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  template <class T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& ex) {
      throw ConfigError(where_ + "." + key + ": " + ex.what());
    }
  }

 private:
  const json& j_;
  std::string where_;
};

std::vector<FeedbackType> parse_types(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be a list of feedback type names");
  std::vector<FeedbackType> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ConfigError(where + " entries must be strings");
    try {
      out.push_back(feedback_type_from_string(v.get<std::string>()));
    } catch (const Error& ex) {
      throw ConfigError(where + ": " + ex.what());
    }
  }
  return out;
}

json type_names(const std::vector<FeedbackType>& types) {
  json a = json::array();
  for (FeedbackType t : types) a.push_back(to_string(t));
  return a;
}

json expert_json(const ExpertConfig& e) {
  return {{"total_steps", e.total_steps},         {"n_checkpoints", e.n_checkpoints},
          {"learning_rate", e.learning_rate},     {"epsilon", e.epsilon},
          {"behavior_epsilon", e.behavior_epsilon}, {"pd_refine_rounds", e.pd_refine_rounds},
          {"pd_grid_points", e.pd_grid_points},   {"pd_action_noise", e.pd_action_noise},
          {"eval_episodes", e.eval_episodes},     {"eval_seed", e.eval_seed},
          {"stochastic_eval", e.stochastic_eval}};
}

json agent_json(const AgentConfig& a) {
  return {{"algorithm", a.algorithm == AgentConfig::Algorithm::QLearning ? "q_learning" : "cem"},
          {"budget", a.budget},
          {"eval_interval", a.eval_interval},
          {"eval_episodes", a.eval_episodes},
          {"eval_seed", a.eval_seed},
          {"learning_rate", a.learning_rate},
          {"epsilon", a.epsilon},
          {"cem_population", a.cem_population},
          {"cem_elites", a.cem_elites},
          {"cem_episodes", a.cem_episodes},
          {"cem_init_std", a.cem_init_std}};
}

json bc_json(const BcConfig& b) {
  return {{"hidden", b.hidden},
          {"learning_rate", b.learning_rate},
          {"batch_size", b.batch_size},
          {"epochs", b.epochs},
          {"entropy_coef", b.entropy_coef}};
}

}  // namespace

PipelineConfig PipelineConfig::smoke() {
  PipelineConfig c;
  // Most clusters share the living-penalty reward, so distinct-reward pairs
  // can run short.
  c.generator.allow_partial = true;
  return c;
}

void PipelineConfig::validate() const {
  spec.validate();
  if (setup.n_runs < 1) throw ConfigError("experts.n_runs must be at least 1");
  if (setup.rollout.n_segments < 1 || setup.rollout.max_len < 1 || setup.holdout_segments < 2)
    throw ConfigError("rollout sizes must be positive (holdout at least 2)");
  if (types.empty()) throw ConfigError("feedback.types must not be empty");
  NoiseConfig nc;
  nc.beta = beta;
  nc.validate();
  train.validate();
  try {
    agent.validate(spec);
  } catch (const UnsupportedEnvError& e) {
    throw ConfigError(std::string("agent: ") + e.what());
  }
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (sequence_steps < 1 || histogram_bins < 1) throw ConfigError("report sizes must be positive");
  const std::set<std::string> joint{"ground_truth", "joint_average", "joint_uncertainty_weighted"};
  for (const auto& s : agent_sources) {
    if (joint.count(s)) continue;
    FeedbackType t;
    try {
      t = feedback_type_from_string(s);
    } catch (const Error&) {
      throw ConfigError("unknown agent source " + s);
    }
    if (std::find(types.begin(), types.end(), t) == types.end())
      throw ConfigError("agent source " + s + " is not among the feedback types");
  }
  if (noise_sweep && (sweep_betas.empty() || sweep_seeds.empty() || sweep_types.empty()))
    throw ConfigError("noise sweep grids must not be empty");
}

json to_json_value(const PipelineConfig& c) {
  json env = {{"id", to_string(c.spec.env_id)}, {"horizon", c.spec.horizon}, {"gamma", c.spec.gamma}};
  if (c.spec.env_id == EnvId::GridNav) env["grid_size"] = c.spec.grid_size;
  else env["dt"] = c.spec.dt;
  json experts = expert_json(c.setup.expert);
  experts["n_runs"] = c.setup.n_runs;
  json feedback = to_json_value(c.generator);
  feedback["types"] = type_names(c.types);
  json reward = c.train;
  reward.erase("seed");
  json agent = agent_json(c.agent);
  agent["standardize_learned"] = c.standardize_learned;
  agent["sources"] = c.agent_sources;
  json bc = bc_json(c.bc);
  bc["enabled"] = c.behavioral_cloning;
  return {{"schema_version", kConfigSchemaVersion},
          {"env", env},
          {"seed", c.seed},
          {"created_at", c.created_at},
          {"threads", c.threads},
          {"experts", experts},
          {"rollout",
           {{"n_segments", c.setup.rollout.n_segments},
            {"max_len", c.setup.rollout.max_len},
            {"steps_per_checkpoint", c.setup.rollout.steps_per_checkpoint},
            {"holdout_segments", c.setup.holdout_segments}}},
          {"feedback", feedback},
          {"noise", {{"beta", c.beta}, {"variant", to_string(c.noise_variant)}}},
          {"reward", reward},
          {"agent", agent},
          {"bc", bc},
          {"reports",
           {{"sequence_steps", c.sequence_steps},
            {"histogram_bins", c.histogram_bins},
            {"noise_sweep",
             {{"enabled", c.noise_sweep},
              {"betas", c.sweep_betas},
              {"seeds", c.sweep_seeds},
              {"types", type_names(c.sweep_types)}}}}}};
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig c;
  Section top(j, "config",
              {"schema_version", "env", "seed", "created_at", "threads", "experts", "rollout", "feedback", "noise",
               "reward", "agent", "bc", "reports"});
  int version = kConfigSchemaVersion;
  top.get("schema_version", version);
  if (version != kConfigSchemaVersion)
    throw ConfigError("config schema_version " + std::to_string(version) + " is not supported");

  if (top.has("env")) {
    Section env(top.at("env"), "env", {"id", "grid_size", "horizon", "gamma", "dt"});
    std::string id = "GridNav";
    env.get("id", id);
    EnvId eid;
    try {
      eid = env_id_from_string(id);
    } catch (const Error& ex) {
      throw ConfigError(std::string("env.id: ") + ex.what());
    }
    int horizon = eid == EnvId::GridNav ? 64 : 100;
    double gamma = 0.99;
    int grid = 8;
    env.get("horizon", horizon);
    env.get("gamma", gamma);
    env.get("grid_size", grid);
    c.spec = eid == EnvId::GridNav ? EnvSpec::grid_nav(grid, horizon, gamma) : EnvSpec::point_mass(horizon, gamma);
    env.get("dt", c.spec.dt);
  }
  c.agent = AgentConfig::for_env(c.spec);
  top.get("seed", c.seed);
  top.get("created_at", c.created_at);
  top.get("threads", c.threads);

  if (top.has("experts")) {
    Section s(top.at("experts"), "experts",
              {"n_runs", "total_steps", "n_checkpoints", "learning_rate", "epsilon", "behavior_epsilon",
               "pd_refine_rounds", "pd_grid_points", "pd_action_noise", "eval_episodes", "eval_seed",
               "stochastic_eval"});
    ExpertConfig& e = c.setup.expert;
    s.get("n_runs", c.setup.n_runs);
    s.get("total_steps", e.total_steps);
    s.get("n_checkpoints", e.n_checkpoints);
    s.get("learning_rate", e.learning_rate);
    s.get("epsilon", e.epsilon);
    s.get("behavior_epsilon", e.behavior_epsilon);
    s.get("pd_refine_rounds", e.pd_refine_rounds);
    s.get("pd_grid_points", e.pd_grid_points);
    s.get("pd_action_noise", e.pd_action_noise);
    s.get("eval_episodes", e.eval_episodes);
    s.get("eval_seed", e.eval_seed);
    s.get("stochastic_eval", e.stochastic_eval);
  }
  if (top.has("rollout")) {
    Section s(top.at("rollout"), "rollout", {"n_segments", "max_len", "steps_per_checkpoint", "holdout_segments"});
    s.get("n_segments", c.setup.rollout.n_segments);
    s.get("max_len", c.setup.rollout.max_len);
    s.get("steps_per_checkpoint", c.setup.rollout.steps_per_checkpoint);
    s.get("holdout_segments", c.setup.holdout_segments);
  }
  if (top.has("feedback")) {
    Section s(top.at("feedback"), "feedback",
              {"types", "n_bins", "n_pairs", "exclusion_frac", "retry_multiplier", "allow_partial",
               "demo_segment_len", "descriptive_k", "kmeans_batch", "kmeans_max_epochs", "kmeans_tolerance"});
    if (s.has("types")) c.types = parse_types(s.at("types"), "feedback.types");
    GeneratorConfig& g = c.generator;
    s.get("n_bins", g.n_bins);
    s.get("n_pairs", g.n_pairs);
    s.get("exclusion_frac", g.exclusion_frac);
    s.get("retry_multiplier", g.retry_multiplier);
    s.get("allow_partial", g.allow_partial);
    s.get("demo_segment_len", g.demo_segment_len);
    s.get("descriptive_k", g.descriptive_k);
    s.get("kmeans_batch", g.kmeans_batch);
    s.get("kmeans_max_epochs", g.kmeans_max_epochs);
    s.get("kmeans_tolerance", g.kmeans_tolerance);
  }
  if (top.has("noise")) {
    Section s(top.at("noise"), "noise", {"beta", "variant"});
    s.get("beta", c.beta);
    if (s.has("variant")) {
      std::string v;
      s.get("variant", v);
      try {
        c.noise_variant = noise_variant_from_string(v);
      } catch (const Error& ex) {
        throw ConfigError(std::string("noise.variant: ") + ex.what());
      }
    }
  }
  if (top.has("reward")) {
    Section s(top.at("reward"), "reward",
              {"hidden", "learning_rate", "weight_decay", "batch_size", "max_epochs", "patience",
               "beta_rationality", "validation_fraction", "n_members"});
    TrainConfig& t = c.train;
    s.get("hidden", t.hidden);
    s.get("learning_rate", t.learning_rate);
    s.get("weight_decay", t.weight_decay);
    s.get("batch_size", t.batch_size);
    s.get("max_epochs", t.max_epochs);
    s.get("patience", t.patience);
    s.get("beta_rationality", t.beta_rationality);
    s.get("validation_fraction", t.validation_fraction);
    s.get("n_members", t.n_members);
  }
  if (top.has("agent")) {
    Section s(top.at("agent"), "agent",
              {"algorithm", "budget", "eval_interval", "eval_episodes", "eval_seed", "learning_rate", "epsilon",
               "cem_population", "cem_elites", "cem_episodes", "cem_init_std", "standardize_learned", "sources"});
    AgentConfig& a = c.agent;
    if (s.has("algorithm")) {
      std::string name;
      s.get("algorithm", name);
      if (name == "q_learning") a.algorithm = AgentConfig::Algorithm::QLearning;
      else if (name == "cem") a.algorithm = AgentConfig::Algorithm::CemPolicySearch;
      else throw ConfigError("agent.algorithm must be q_learning or cem");
    }
    s.get("budget", a.budget);
    s.get("eval_interval", a.eval_interval);
    s.get("eval_episodes", a.eval_episodes);
    s.get("eval_seed", a.eval_seed);
    s.get("learning_rate", a.learning_rate);
    s.get("epsilon", a.epsilon);
    s.get("cem_population", a.cem_population);
    s.get("cem_elites", a.cem_elites);
    s.get("cem_episodes", a.cem_episodes);
    s.get("cem_init_std", a.cem_init_std);
    s.get("standardize_learned", c.standardize_learned);
    s.get("sources", c.agent_sources);
  }
  if (top.has("bc")) {
    Section s(top.at("bc"), "bc", {"enabled", "hidden", "learning_rate", "batch_size", "epochs", "entropy_coef"});
    s.get("enabled", c.behavioral_cloning);
    s.get("hidden", c.bc.hidden);
    s.get("learning_rate", c.bc.learning_rate);
    s.get("batch_size", c.bc.batch_size);
    s.get("epochs", c.bc.epochs);
    s.get("entropy_coef", c.bc.entropy_coef);
  }
  if (top.has("reports")) {
    Section s(top.at("reports"), "reports", {"sequence_steps", "histogram_bins", "noise_sweep"});
    s.get("sequence_steps", c.sequence_steps);
    s.get("histogram_bins", c.histogram_bins);
    if (s.has("noise_sweep")) {
      Section n(s.at("noise_sweep"), "reports.noise_sweep", {"enabled", "betas", "seeds", "types"});
      n.get("enabled", c.noise_sweep);
      n.get("betas", c.sweep_betas);
      n.get("seeds", c.sweep_seeds);
      if (n.has("types")) c.sweep_types = parse_types(n.at("types"), "reports.noise_sweep.types");
    }
  }
  c.validate();
  return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const DataError& ex) {
    throw ConfigError(ex.what());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& ex) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + ex.what());
  }
  return pipeline_config_from_json(j);
}

std::string config_hash(const PipelineConfig& config) {
  json j = to_json_value(config);
  j.erase("threads");
  return content_hash(j.dump());
}

std::filesystem::path default_output_dir(const PipelineConfig& config) {
  const char* env = std::getenv("FBLAB_CACHE_DIR");
  const std::filesystem::path root = env && *env ? std::filesystem::path(env) : std::filesystem::path("fblab-cache");
  return root / config_hash(config);
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Experts: return "experts";
    case Stage::Collect: return "collect";
    case Stage::Feedback: return "feedback";
    case Stage::Noise: return "noise";
    case Stage::Reward: return "reward";
    case Stage::Agents: return "agents";
    case Stage::Reports: return "reports";
  }
  return "unknown";
}

// ---------------------------------------------------------------- run

namespace {

namespace fs = std::filesystem;

// Stage keys chain the upstream key with the config slice each stage reads.
std::vector<std::string> stage_keys(const PipelineConfig& c) {
  const json j = to_json_value(c);
  const json slices[] = {
      {{"env", j["env"]}, {"seed", c.seed}, {"experts", j["experts"]}},
      {{"rollout", j["rollout"]}},
      {{"feedback", j["feedback"]}, {"created_at", c.created_at}},
      {{"noise", j["noise"]}},
      {{"reward", j["reward"]}},
      {{"agent", j["agent"]}, {"bc", j["bc"]}},
      {{"reports", j["reports"]}},
  };
  std::vector<std::string> keys;
  std::string prev;
  for (std::size_t i = 0; i < std::size(kAllStages); ++i) {
    prev = content_hash(prev + "|" + std::string(to_string(kAllStages[i])) + "|" + slices[i].dump());
    keys.push_back(prev);
  }
  return keys;
}

class Runner {
 public:
  Runner(const PipelineConfig& c, fs::path out) : c_(c), out_(std::move(out)) {
    fs::create_directories(out_);
    manifest_path_ = out_ / "manifest.json";
    if (fs::exists(manifest_path_)) {
      try {
        manifest_ = json::parse(read_text(manifest_path_));
      } catch (const json::exception&) {
        manifest_ = json::object();
      }
    }
    if (!manifest_.is_object() || manifest_.value("schema_version", 0) != kSchemaVersion) manifest_ = json::object();
    manifest_["schema_version"] = kSchemaVersion;
    manifest_["config_hash"] = config_hash(c_);
    manifest_["config"] = to_json_value(c_);
    if (!manifest_.contains("stages")) manifest_["stages"] = json::object();
  }

  PipelineRun run(Stage until) {
    const auto keys = stage_keys(c_);
    PipelineRun result;
    result.manifest = manifest_path_;
    for (std::size_t i = 0; i < std::size(kAllStages); ++i) {
      const Stage s = kAllStages[i];
      const std::string name(to_string(s));
      if (up_to_date(name, keys[i])) {
        result.skipped.push_back(s);
      } else {
        artifacts_.clear();
        manifest_["stages"][name] = {{"key", keys[i]}, {"status", "running"}};
        save_manifest();
        try {
          execute(s);
        } catch (const std::exception& ex) {
          manifest_["stages"][name]["status"] = "failed";
          manifest_["stages"][name]["error"] = ex.what();
          save_manifest();
          if (dynamic_cast<const ConfigError*>(&ex) || dynamic_cast<const DataError*>(&ex)) throw;
          throw StageError(name, ex.what());
        }
        json arts = json::object();
        for (const auto& rel : artifacts_) arts[rel] = content_hash(read_text(out_ / rel));
        manifest_["stages"][name] = {{"key", keys[i]}, {"status", "complete"}, {"artifacts", arts}};
        save_manifest();
        result.executed.push_back(s);
      }
      if (s == until) break;
    }
    return result;
  }

 private:
  bool up_to_date(const std::string& name, const std::string& key) const {
    const json& st = manifest_["stages"];
    if (!st.contains(name)) return false;
    const json& e = st[name];
    if (e.value("key", "") != key || e.value("status", "") != "complete" || !e.contains("artifacts")) return false;
    for (const auto& [rel, hash] : e["artifacts"].items()) {
      const fs::path p = out_ / rel;
      if (!fs::exists(p)) return false;
      try {
        if (content_hash(read_text(p)) != hash.get<std::string>()) return false;
      } catch (const DataError&) {
        return false;
      }
    }
    return true;
  }

  void save_manifest() { write_text(manifest_path_, manifest_.dump(2) + "\n"); }

  std::string record(const std::string& rel) {
    artifacts_.push_back(rel);
    return rel;
  }

  void execute(Stage s) {
    switch (s) {
      case Stage::Experts: return stage_experts();
      case Stage::Collect: return stage_collect();
      case Stage::Feedback: return stage_feedback();
      case Stage::Noise: return stage_noise();
      case Stage::Reward: return stage_reward();
      case Stage::Agents: return stage_agents();
      case Stage::Reports: return stage_reports();
    }
  }

  // Lazy artifact access: computed this run or read back from disk.
  const ExpertRuns& experts() {
    if (!experts_) experts_ = read_experts(out_ / "experts.json");
    return *experts_;
  }
  const RolloutBuffer& buffer() {
    if (!buffer_) buffer_ = read_buffer(out_ / "buffer.jsonl");
    return *buffer_;
  }
  const RolloutBuffer& holdout() {
    if (!holdout_) holdout_ = read_buffer(out_ / "holdout.jsonl");
    return *holdout_;
  }
  const FeedbackDataset& feedback(FeedbackType t) {
    auto it = feedback_.find(t);
    if (it == feedback_.end())
      it = feedback_.emplace(t, read_dataset(out_ / "feedback" / (std::string(to_string(t)) + ".jsonl"), t)).first;
    return it->second;
  }
  const FeedbackDataset& noisy(FeedbackType t) {
    auto it = noisy_.find(t);
    if (it == noisy_.end())
      it = noisy_.emplace(t, read_dataset(out_ / "noisy" / (std::string(to_string(t)) + ".jsonl"), t)).first;
    return it->second;
  }
  std::shared_ptr<const RewardEnsemble> model(FeedbackType t) {
    auto it = models_.find(t);
    if (it == models_.end()) {
      StoredRewardModel m = read_reward_model(out_ / "models" / (std::string(to_string(t)) + ".json"));
      it = models_.emplace(t, std::make_shared<const RewardEnsemble>(std::move(m.ensemble))).first;
    }
    return it->second;
  }
  ExpertEnsemble expert_ensemble() { return select_top_experts(experts().runs, c_.setup.n_runs); }

  void stage_experts() {
    ExpertRuns e;
    e.spec = c_.spec;
    for (int r = 0; r < c_.setup.n_runs; ++r)
      e.runs.push_back(train_expert(c_.spec, c_.setup.expert, derive_seed(c_.seed, "expert-run", static_cast<std::uint64_t>(r))));
    write_experts(e, out_ / record("experts.json"));
    experts_ = std::move(e);
  }

  void stage_collect() {
    std::vector<Checkpoint> all;
    for (const auto& run : experts().runs) all.insert(all.end(), run.begin(), run.end());
    RolloutConfig rc = c_.setup.rollout;
    rc.seed = derive_seed(c_.seed, "buffer");
    buffer_ = collect_segments(all, c_.spec, rc);
    RolloutConfig hc = c_.setup.rollout;
    hc.n_segments = c_.setup.holdout_segments;
    hc.seed = derive_seed(c_.seed, "holdout");
    holdout_ = collect_segments(all, c_.spec, hc);
    write_buffer(*buffer_, out_ / record("buffer.jsonl"));
    write_buffer(*holdout_, out_ / record("holdout.jsonl"));
  }

  void stage_feedback() {
    const ExpertEnsemble ens = expert_ensemble();
    auto data = generate_feedback(c_.types, buffer(), ens.experts, c_.generator, c_.seed, c_.created_at,
                                  buffer_hash(buffer()));
    feedback_.clear();
    for (auto& [t, d] : data) {
      write_dataset(d, out_ / record("feedback/" + std::string(to_string(t)) + ".jsonl"));
      feedback_.emplace(t, std::move(d));
    }
  }

  void stage_noise() {
    NoiseConfig nc;
    nc.beta = c_.beta;
    nc.seed = derive_seed(c_.seed, "noise");
    nc.variant = c_.noise_variant;
    noisy_.clear();
    for (FeedbackType t : c_.types) {
      FeedbackDataset d = perturb(feedback(t), c_.spec, nc);
      write_dataset(d, out_ / record("noisy/" + std::string(to_string(t)) + ".jsonl"));
      noisy_.emplace(t, std::move(d));
    }
  }

  void stage_reward() {
    TrainConfig tc = c_.train;
    tc.seed = c_.seed;
    tc.threads = c_.threads;
    models_.clear();
    for (FeedbackType t : c_.types) {
      const std::string name(to_string(t));
      const FeedbackDataset& d = noisy(t);
      TrainResult res = train_reward_model(d, c_.spec, tc);
      StoredRewardModel m{res.ensemble, tc, t, dataset_hash(d)};
      m.config.threads = 1;
      write_reward_model(m, out_ / record("models/" + name + ".json"));
      write_loss_traces(res.traces, out_ / record("models/" + name + "_loss.csv"));
      models_.emplace(t, std::make_shared<const RewardEnsemble>(std::move(res.ensemble)));
    }
  }

  std::vector<std::string> sources() const {
    if (!c_.agent_sources.empty()) return c_.agent_sources;
    std::vector<std::string> s{"ground_truth"};
    for (FeedbackType t : c_.types) s.emplace_back(to_string(t));
    if (c_.types.size() >= 2) {
      s.emplace_back("joint_average");
      s.emplace_back("joint_uncertainty_weighted");
    }
    return s;
  }

  RewardSource make_source(const std::string& name) {
    if (name == "ground_truth") return RewardSource::ground_truth(false);
    std::vector<std::shared_ptr<const RewardEnsemble>> all;
    for (FeedbackType t : c_.types) all.push_back(model(t));
    if (name == "joint_average") return RewardSource::joint_average(all);
    if (name == "joint_uncertainty_weighted") return RewardSource::joint_uncertainty_weighted(all);
    return RewardSource::single(model(feedback_type_from_string(name)), c_.standardize_learned);
  }

  void stage_agents() {
    AgentConfig ac = c_.agent;
    ac.seed = c_.seed;
    json entries = json::array();
    for (const auto& name : sources()) {
      const AgentResult r = train_agent(c_.spec, make_source(name), ac);
      write_curve(r.curve, out_ / record("agents/" + name + ".csv"));
      json curve = json::array();
      for (const auto& p : r.curve) curve.push_back({p.step, p.mean, p.min, p.max});
      entries.push_back({{"source", name}, {"seed", c_.seed}, {"final_return", r.final_return}, {"curve", curve}});
    }
    const ExpertEnsemble ens = expert_ensemble();
    json bc = nullptr;
    const bool has_demos =
        std::find(c_.types.begin(), c_.types.end(), FeedbackType::Demonstrative) != c_.types.end();
    if (c_.behavioral_cloning && has_demos) {
      const auto& demos = noisy(FeedbackType::Demonstrative).as<DemoInstance>();
      BcConfig bcc = c_.bc;
      bcc.seed = derive_seed(c_.seed, "behavioral-cloning");
      const Policy p = behavioral_cloning(demos, c_.spec, bcc);
      const EvalResult ev = evaluate_policy(p, c_.spec, ac.eval_episodes, ac.eval_seed);
      const PolicyAgreement ag = policy_agreement(p, demos, c_.spec);
      bc = {{"final_return", ev.mean},
            {"agreement_per_transition", ag.per_transition},
            {"agreement_per_state", ag.per_state}};
      entries.push_back({{"source", "behavioral_cloning"},
                         {"seed", c_.seed},
                         {"final_return", ev.mean},
                         {"curve", json::array({{ac.budget, ev.mean, *std::min_element(ev.returns.begin(), ev.returns.end()),
                                                 *std::max_element(ev.returns.begin(), ev.returns.end())}})}});
    }
    const json results = {{"expert_return", ens.eval_returns.front()}, {"entries", entries}, {"behavioral_cloning", bc}};
    write_text(out_ / record("agents/results.json"), results.dump(2) + "\n");
  }

  void stage_reports() {
    const fs::path dir = out_ / "reports";
    auto write_report = [&](const Report& r, const std::string& sub) {
      r.write(dir / sub);
      for (const auto& t : r.tables) record("reports/" + sub + "/" + t.name + ".csv");
      record("reports/" + sub + "/summary.json");
    };

    std::vector<std::pair<std::string, const RewardEnsemble*>> named;
    std::vector<std::shared_ptr<const RewardEnsemble>> keep;
    for (FeedbackType t : c_.types) {
      keep.push_back(model(t));
      named.emplace_back(std::string(to_string(t)), keep.back().get());
    }
    write_report(correlation_report(named, holdout(), c_.spec.gamma), "correlation");

    const auto& runs = experts().runs;
    const auto& run0 = runs.front();
    const Policy& mid = run0[run0.size() / 2].policy;
    write_report(sequence_trace(named, c_.spec, mid, c_.sequence_steps, c_.seed), "sequence_trace");

    for (FeedbackType t : c_.types)
      write_report(dataset_stats(noisy(t), c_.histogram_bins), "dataset_stats/" + std::string(to_string(t)));

    const json results = json::parse(read_text(out_ / "agents/results.json"));
    std::vector<RlEntry> entries;
    for (const auto& e : results.at("entries")) {
      RlEntry r;
      r.source = e.at("source").get<std::string>();
      r.seed = e.at("seed").get<std::uint64_t>();
      r.final_return = e.at("final_return").get<double>();
      for (const auto& p : e.at("curve")) r.curve.push_back({p[0].get<long>(), p[1].get<double>(), p[2].get<double>(), p[3].get<double>()});
      entries.push_back(std::move(r));
    }
    Report rl = rl_comparison(entries, results.at("expert_return").get<double>());
    if (!results.at("behavioral_cloning").is_null()) rl.summary["behavioral_cloning"] = results.at("behavioral_cloning");
    write_report(rl, "rl_comparison");

    if (c_.noise_sweep) {
      NoiseSweepConfig nc;
      nc.spec = c_.spec;
      nc.setup = c_.setup;
      nc.generator = c_.generator;
      nc.train = c_.train;
      nc.betas = c_.sweep_betas;
      nc.seeds = c_.sweep_seeds;
      nc.types = c_.sweep_types;
      nc.variant = c_.noise_variant;
      nc.threads = c_.threads;
      write_report(noise_sweep(nc).report, "noise_sweep");
    }
  }

  const PipelineConfig& c_;
  fs::path out_;
  fs::path manifest_path_;
  json manifest_ = json::object();
  std::vector<std::string> artifacts_;

  std::optional<ExpertRuns> experts_;
  std::optional<RolloutBuffer> buffer_;
  std::optional<RolloutBuffer> holdout_;
  std::map<FeedbackType, FeedbackDataset> feedback_;
  std::map<FeedbackType, FeedbackDataset> noisy_;
  std::map<FeedbackType, std::shared_ptr<const RewardEnsemble>> models_;
};

}  // namespace

PipelineRun run_pipeline(const PipelineConfig& config, const std::filesystem::path& out, Stage until) {
  config.validate();
  Runner runner(config, out);
  return runner.run(until);
}

}  // namespace fblab
