#include "fblab/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fblab/errors.hpp"
#include "fblab/rng.hpp"

namespace fblab {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string content_hash(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------- conversions

void to_json(json& j, const EnvSpec& s) {
  j = json{{"env_id", to_string(s.env_id)}, {"obs_dim", s.obs_dim}, {"horizon", s.horizon},
           {"gamma", s.gamma},             {"grid_size", s.grid_size}, {"dt", s.dt}};
  if (const auto* d = std::get_if<DiscreteActions>(&s.action_space)) {
    j["action_space"] = {{"discrete", d->n}};
  } else {
    const auto& b = std::get<BoxScalar>(s.action_space);
    j["action_space"] = {{"lo", b.lo}, {"hi", b.hi}};
  }
}

void from_json(const json& j, EnvSpec& s) {
  s.env_id = env_id_from_string(j.at("env_id").get<std::string>());
  s.obs_dim = j.at("obs_dim").get<int>();
  s.horizon = j.at("horizon").get<int>();
  s.gamma = j.at("gamma").get<double>();
  s.grid_size = j.at("grid_size").get<int>();
  s.dt = j.at("dt").get<double>();
  const json& a = j.at("action_space");
  if (a.contains("discrete")) s.action_space = DiscreteActions{a.at("discrete").get<int>()};
  else s.action_space = BoxScalar{a.at("lo").get<double>(), a.at("hi").get<double>()};
}

void to_json(json& j, const EnvState& s) {
  j = json{{"env_id", to_string(s.env_id)},
           {"step_count", s.step_count},
           {"done", s.done},
           {"rng_state", s.rng_state}};
  if (const auto* c = std::get_if<GridCell>(&s.physical)) j["cell"] = {c->x, c->y};
  else {
    const auto& pm = std::get<PointMassState>(s.physical);
    j["pv"] = {pm.p, pm.v};
  }
}

void from_json(const json& j, EnvState& s) {
  s.env_id = env_id_from_string(j.at("env_id").get<std::string>());
  s.step_count = j.at("step_count").get<int>();
  s.done = j.at("done").get<bool>();
  s.rng_state = j.at("rng_state").get<std::uint64_t>();
  if (j.contains("cell")) s.physical = GridCell{j["cell"].at(0).get<int>(), j["cell"].at(1).get<int>()};
  else s.physical = PointMassState{j.at("pv").at(0).get<double>(), j.at("pv").at(1).get<double>()};
}

void to_json(json& j, const Transition& t) {
  j = json{{"o", t.obs},        {"a", t.action},         {"r", t.reward},
           {"o2", t.next_obs},  {"term", t.terminated},  {"trunc", t.truncated}};
}

void from_json(const json& j, Transition& t) {
  t.obs = j.at("o").get<std::vector<double>>();
  t.action = j.at("a").get<double>();
  t.reward = j.at("r").get<double>();
  t.next_obs = j.at("o2").get<std::vector<double>>();
  t.terminated = j.at("term").get<bool>();
  t.truncated = j.at("trunc").get<bool>();
}

void to_json(json& j, const Segment& s) {
  j = json{{"transitions", s.transitions},
           {"initial", s.initial_snapshot},
           {"final", s.final_snapshot},
           {"source_checkpoint", s.source_checkpoint},
           {"env_id", to_string(s.env_id)}};
}

void from_json(const json& j, Segment& s) {
  s.transitions = j.at("transitions").get<std::vector<Transition>>();
  s.initial_snapshot = j.at("initial").get<EnvState>();
  s.final_snapshot = j.at("final").get<EnvState>();
  s.source_checkpoint = j.at("source_checkpoint").get<int>();
  s.env_id = env_id_from_string(j.at("env_id").get<std::string>());
}

namespace {

std::string label_name(PreferenceLabel l) { return l == PreferenceLabel::FirstPreferred ? "first" : "second"; }
PreferenceLabel label_from_name(const std::string& s) {
  if (s == "first") return PreferenceLabel::FirstPreferred;
  if (s == "second") return PreferenceLabel::SecondPreferred;
  throw SchemaError("unknown preference label: " + s);
}

}  // namespace

void to_json(json& j, const RatingInstance& r) {
  j = json{{"segment", r.segment}, {"rating", r.rating}, {"underlying_return", r.underlying_return}};
}
void from_json(const json& j, RatingInstance& r) {
  r.segment = j.at("segment").get<Segment>();
  r.rating = j.at("rating").get<int>();
  r.underlying_return = j.at("underlying_return").get<double>();
}

void to_json(json& j, const SegmentPreference& p) {
  j = json{{"first", p.first},
           {"second", p.second},
           {"label", label_name(p.label)},
           {"first_return", p.first_return},
           {"second_return", p.second_return}};
}
void from_json(const json& j, SegmentPreference& p) {
  p.first = j.at("first").get<Segment>();
  p.second = j.at("second").get<Segment>();
  p.label = label_from_name(j.at("label").get<std::string>());
  p.first_return = j.at("first_return").get<double>();
  p.second_return = j.at("second_return").get<double>();
}

void to_json(json& j, const DemoInstance& d) {
  j = json{{"demo", d.demo_segment},
           {"origin", d.origin_snapshot},
           {"expert_return", d.expert_return},
           {"original_return", d.original_return}};
}
void from_json(const json& j, DemoInstance& d) {
  d.demo_segment = j.at("demo").get<Segment>();
  d.origin_snapshot = j.at("origin").get<EnvState>();
  d.expert_return = j.at("expert_return").get<double>();
  d.original_return = j.at("original_return").get<double>();
}

void to_json(json& j, const CorrectionInstance& c) {
  j = json{{"original", c.original},
           {"improved", c.improved},
           {"original_return", c.original_return},
           {"improved_return", c.improved_return},
           {"label", label_name(c.label)}};
}
void from_json(const json& j, CorrectionInstance& c) {
  c.original = j.at("original").get<Segment>();
  c.improved = j.at("improved").get<Segment>();
  c.original_return = j.at("original_return").get<double>();
  c.improved_return = j.at("improved_return").get<double>();
  c.label = label_from_name(j.at("label").get<std::string>());
}

void to_json(json& j, const ClusterDescription& c) {
  j = json{{"representative", c.representative},
           {"mean_reward", c.mean_reward},
           {"member_count", c.member_count},
           {"cluster_id", c.cluster_id}};
}
void from_json(const json& j, ClusterDescription& c) {
  c.representative = j.at("representative").get<std::vector<double>>();
  c.mean_reward = j.at("mean_reward").get<double>();
  c.member_count = j.at("member_count").get<int>();
  c.cluster_id = j.at("cluster_id").get<int>();
}

void to_json(json& j, const ClusterPreference& p) {
  j = json{{"first", p.first}, {"second", p.second}, {"label", label_name(p.label)}};
}
void from_json(const json& j, ClusterPreference& p) {
  p.first = j.at("first").get<ClusterDescription>();
  p.second = j.at("second").get<ClusterDescription>();
  p.label = label_from_name(j.at("label").get<std::string>());
}

void to_json(json& j, const Mlp& m) {
  const auto& p = m.params();
  j = json{{"layer_sizes", m.layer_sizes()}, {"params", std::vector<double>(p.data(), p.data() + p.size())}};
}
void from_json(const json& j, Mlp& m) {
  m = Mlp::zeros(j.at("layer_sizes").get<std::vector<int>>());
  const auto p = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(p.size()) != m.n_params()) throw SchemaError("network parameter count mismatch");
  m.params() = Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
}

void to_json(json& j, const Policy& p) {
  j = json{{"greedy_eval", p.greedy_eval}};
  std::visit(
      [&](const auto& k) {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, TabularPolicy>) {
          j["kind"] = "tabular";
          j["n_states"] = k.n_states;
          j["n_actions"] = k.n_actions;
          j["q"] = k.q;
          j["epsilon"] = k.epsilon;
        } else if constexpr (std::is_same_v<T, PdPolicy>) {
          j["kind"] = "pd";
          j["k1"] = k.k1;
          j["k2"] = k.k2;
          j["action_noise"] = k.action_noise;
        } else if constexpr (std::is_same_v<T, RandomPolicy>) {
          j["kind"] = "random";
        } else {
          j["kind"] = "cloned";
          j["net"] = k.net;
        }
      },
      p.kind);
}

void from_json(const json& j, Policy& p) {
  p.greedy_eval = j.at("greedy_eval").get<bool>();
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "tabular") {
    p.kind = TabularPolicy{j.at("n_states").get<int>(), j.at("n_actions").get<int>(),
                           j.at("q").get<std::vector<double>>(), j.at("epsilon").get<double>()};
  } else if (kind == "pd") {
    p.kind = PdPolicy{j.at("k1").get<double>(), j.at("k2").get<double>(), j.at("action_noise").get<double>()};
  } else if (kind == "random") {
    p.kind = RandomPolicy{};
  } else if (kind == "cloned") {
    p.kind = ClonedPolicy{j.at("net").get<Mlp>()};
  } else {
    throw SchemaError("unknown policy kind: " + kind);
  }
}

void to_json(json& j, const Checkpoint& c) {
  j = json{{"policy", c.policy}, {"train_step", c.train_step}, {"eval_return", c.eval_return}};
}
void from_json(const json& j, Checkpoint& c) {
  c.policy = j.at("policy").get<Policy>();
  c.train_step = j.at("train_step").get<long>();
  c.eval_return = j.at("eval_return").get<double>();
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"hidden", c.hidden},
           {"learning_rate", c.learning_rate},
           {"weight_decay", c.weight_decay},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"beta_rationality", c.beta_rationality},
           {"seed", c.seed},
           {"validation_fraction", c.validation_fraction},
           {"n_members", c.n_members}};
}
void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.hidden = j.value("hidden", d.hidden);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.max_epochs = j.value("max_epochs", d.max_epochs);
  c.patience = j.value("patience", d.patience);
  c.beta_rationality = j.value("beta_rationality", d.beta_rationality);
  c.seed = j.value("seed", d.seed);
  c.validation_fraction = j.value("validation_fraction", d.validation_fraction);
  c.n_members = j.value("n_members", d.n_members);
}

void to_json(json& j, const RolloutConfig& c) {
  j = json{{"n_segments", c.n_segments},
           {"max_len", c.max_len},
           {"seed", c.seed},
           {"steps_per_checkpoint", c.steps_per_checkpoint}};
}
void from_json(const json& j, RolloutConfig& c) {
  RolloutConfig d;
  c.n_segments = j.value("n_segments", d.n_segments);
  c.max_len = j.value("max_len", d.max_len);
  c.seed = j.value("seed", d.seed);
  c.steps_per_checkpoint = j.value("steps_per_checkpoint", d.steps_per_checkpoint);
}

// ---------------------------------------------------------------- JSONL files

namespace {

std::string records_text(const FeedbackDataset& d) {
  std::string out;
  std::visit(
      [&](const auto& v) {
        for (const auto& item : v) {
          out += json(item).dump();
          out += '\n';
        }
      },
      d.instances);
  return out;
}

json dataset_header(const FeedbackDataset& d, const std::string& body) {
  const Provenance& p = d.provenance;
  return json{{"schema_version", kSchemaVersion},
              {"kind", "feedback_dataset"},
              {"env_id", to_string(p.env_id)},
              {"feedback_type", to_string(d.type)},
              {"config", p.generator_config},
              {"seed", p.seed},
              {"beta", p.beta},
              {"noise_variant", p.noise_variant},
              {"noise_seed", p.noise_seed},
              {"created_at", p.created_at},
              {"source_buffer_hash", p.source_buffer_hash},
              {"record_count", d.size()},
              {"content_hash", content_hash(body)}};
}

struct ParsedFile {
  json header;
  std::vector<std::string> lines;
  std::string body;
};

// Splits header and records and checks version, count and hash.
ParsedFile parse_jsonl(const std::filesystem::path& path, std::string_view kind) {
  const std::string text = read_text(path);
  ParsedFile f;
  const auto nl = text.find('\n');
  if (nl == std::string::npos) throw TruncatedFileError("missing header line in " + path.string());
  try {
    f.header = json::parse(text.substr(0, nl));
  } catch (const json::exception& e) {
    throw SchemaError("unreadable header in " + path.string() + ": " + e.what());
  }
  if (!f.header.is_object() || !f.header.contains("schema_version") || !f.header.contains("kind") ||
      !f.header.contains("record_count") || !f.header.contains("content_hash"))
    throw SchemaError("malformed header in " + path.string());
  if (f.header["schema_version"] != kSchemaVersion)
    throw SchemaError("unsupported schema version in " + path.string());
  if (f.header["kind"] != kind) throw DatasetTypeError(path.string() + " is not a " + std::string(kind));
  f.body = text.substr(nl + 1);
  std::size_t pos = 0;
  while (pos < f.body.size()) {
    const auto end = f.body.find('\n', pos);
    if (end == std::string::npos) throw TruncatedFileError("partial final record in " + path.string());
    f.lines.push_back(f.body.substr(pos, end - pos));
    pos = end + 1;
  }
  const auto expected = f.header["record_count"].get<std::size_t>();
  if (f.lines.size() < expected) throw TruncatedFileError("missing records in " + path.string());
  if (f.lines.size() > expected) throw SchemaError("unexpected trailing records in " + path.string());
  if (content_hash(f.body) != f.header["content_hash"].get<std::string>())
    throw HashMismatchError("content hash mismatch in " + path.string());
  return f;
}

template <class T>
std::vector<T> parse_records(const ParsedFile& f) {
  std::vector<T> out;
  out.reserve(f.lines.size());
  for (const auto& line : f.lines) out.push_back(json::parse(line).get<T>());
  return out;
}

}  // namespace

std::string dataset_hash(const FeedbackDataset& dataset) {
  const std::string body = records_text(dataset);
  json h = dataset_header(dataset, body);
  h.erase("created_at");
  return content_hash(h.dump() + body);
}

void write_dataset(const FeedbackDataset& dataset, const std::filesystem::path& path) {
  const std::string body = records_text(dataset);
  write_text(path, dataset_header(dataset, body).dump() + "\n" + body);
}

FeedbackDataset read_dataset(const std::filesystem::path& path, std::optional<FeedbackType> expected) {
  const ParsedFile f = parse_jsonl(path, "feedback_dataset");
  FeedbackDataset d;
  try {
    const json& h = f.header;
    d.type = feedback_type_from_string(h.at("feedback_type").get<std::string>());
    if (expected && *expected != d.type)
      throw DatasetTypeError(path.string() + " holds " + std::string(to_string(d.type)) + " feedback, expected " +
                             std::string(to_string(*expected)));
    d.provenance.env_id = env_id_from_string(h.at("env_id").get<std::string>());
    d.provenance.generator_config = h.at("config");
    d.provenance.seed = h.at("seed").get<std::uint64_t>();
    d.provenance.beta = h.at("beta").get<double>();
    d.provenance.noise_variant = h.at("noise_variant").get<std::string>();
    d.provenance.noise_seed = h.at("noise_seed").get<std::uint64_t>();
    d.provenance.created_at = h.at("created_at").get<std::string>();
    d.provenance.source_buffer_hash = h.at("source_buffer_hash").get<std::string>();
    switch (d.type) {
      case FeedbackType::Evaluative: d.instances = parse_records<RatingInstance>(f); break;
      case FeedbackType::Comparative: d.instances = parse_records<SegmentPreference>(f); break;
      case FeedbackType::Demonstrative: d.instances = parse_records<DemoInstance>(f); break;
      case FeedbackType::Corrective: d.instances = parse_records<CorrectionInstance>(f); break;
      case FeedbackType::Descriptive: d.instances = parse_records<ClusterDescription>(f); break;
      case FeedbackType::DescriptivePreference: d.instances = parse_records<ClusterPreference>(f); break;
    }
  } catch (const json::exception& e) {
    throw SchemaError("malformed record in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError("malformed header in " + path.string() + ": " + e.what());
  }
  return d;
}

namespace {

std::string buffer_body(const RolloutBuffer& b) {
  std::string out;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto& p = b.provenance[i];
    out += json{{"segment", b.segments[i]},
                {"checkpoint_id", p.checkpoint_id},
                {"episode_id", p.episode_id},
                {"start_index", p.start_index}}
               .dump();
    out += '\n';
  }
  return out;
}

json buffer_header(const RolloutBuffer& b, const std::string& body) {
  return json{{"schema_version", kSchemaVersion}, {"kind", "rollout_buffer"}, {"spec", b.spec},
              {"config", b.config},                {"record_count", b.size()}, {"content_hash", content_hash(body)}};
}

}  // namespace

std::string buffer_hash(const RolloutBuffer& buffer) {
  const std::string body = buffer_body(buffer);
  return content_hash(buffer_header(buffer, body).dump() + body);
}

void write_buffer(const RolloutBuffer& buffer, const std::filesystem::path& path) {
  const std::string body = buffer_body(buffer);
  write_text(path, buffer_header(buffer, body).dump() + "\n" + body);
}

RolloutBuffer read_buffer(const std::filesystem::path& path) {
  const ParsedFile f = parse_jsonl(path, "rollout_buffer");
  RolloutBuffer b;
  try {
    b.spec = f.header.at("spec").get<EnvSpec>();
    b.config = f.header.at("config").get<RolloutConfig>();
    for (const auto& line : f.lines) {
      const json j = json::parse(line);
      b.segments.push_back(j.at("segment").get<Segment>());
      b.provenance.push_back(
          {j.at("checkpoint_id").get<int>(), j.at("episode_id").get<int>(), j.at("start_index").get<int>()});
    }
  } catch (const json::exception& e) {
    throw SchemaError("malformed buffer record in " + path.string() + ": " + e.what());
  }
  return b;
}

// ---------------------------------------------------------------- single documents

namespace {

void write_document(const std::filesystem::path& path, std::string_view kind, const json& payload) {
  const std::string body = payload.dump();
  const json doc{{"schema_version", kSchemaVersion},
                 {"kind", kind},
                 {"content_hash", content_hash(body)},
                 {"payload", payload}};
  write_text(path, doc.dump() + "\n");
}

json read_document(const std::filesystem::path& path, std::string_view kind) {
  const std::string text = read_text(path);
  if (text.empty() || text.back() != '\n') throw TruncatedFileError("incomplete document " + path.string());
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError("unreadable document " + path.string() + ": " + e.what());
  }
  if (!doc.is_object() || doc.value("schema_version", -1) != kSchemaVersion || !doc.contains("payload"))
    throw SchemaError("unsupported document " + path.string());
  if (doc.value("kind", std::string()) != kind) throw DatasetTypeError(path.string() + " is not a " + std::string(kind));
  if (content_hash(doc["payload"].dump()) != doc.value("content_hash", std::string()))
    throw HashMismatchError("content hash mismatch in " + path.string());
  return doc["payload"];
}

}  // namespace

void write_reward_model(const StoredRewardModel& model, const std::filesystem::path& path) {
  write_document(path, "reward_model",
                 json{{"spec", model.ensemble.spec},
                      {"members", model.ensemble.members},
                      {"train_config", model.config},
                      {"feedback_type", to_string(model.feedback_type)},
                      {"dataset_hash", model.dataset_hash}});
}

StoredRewardModel read_reward_model(const std::filesystem::path& path) {
  const json p = read_document(path, "reward_model");
  StoredRewardModel m;
  try {
    m.ensemble.spec = p.at("spec").get<EnvSpec>();
    m.ensemble.members = p.at("members").get<std::vector<Mlp>>();
    m.config = p.at("train_config").get<TrainConfig>();
    m.feedback_type = feedback_type_from_string(p.at("feedback_type").get<std::string>());
    m.dataset_hash = p.at("dataset_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError("malformed reward model " + path.string() + ": " + e.what());
  }
  return m;
}

void write_experts(const ExpertRuns& experts, const std::filesystem::path& path) {
  write_document(path, "expert_runs", json{{"spec", experts.spec}, {"runs", experts.runs}});
}

ExpertRuns read_experts(const std::filesystem::path& path) {
  const json p = read_document(path, "expert_runs");
  ExpertRuns e;
  try {
    e.spec = p.at("spec").get<EnvSpec>();
    e.runs = p.at("runs").get<std::vector<std::vector<Checkpoint>>>();
  } catch (const json::exception& ex) {
    throw SchemaError("malformed expert file " + path.string() + ": " + ex.what());
  }
  return e;
}

void write_loss_traces(const std::vector<std::vector<EpochRecord>>& traces, const std::filesystem::path& path) {
  std::string out = "member,epoch,train_loss,val_loss,best_val_loss\n";
  for (std::size_t m = 0; m < traces.size(); ++m)
    for (const auto& r : traces[m])
      out += std::to_string(m) + "," + std::to_string(r.epoch) + "," + json(r.train_loss).dump() + "," +
             json(r.val_loss).dump() + "," + json(r.best_val_loss).dump() + "\n";
  write_text(path, out);
}

void write_curve(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
  std::string out = "step,eval_return_mean,eval_return_min,eval_return_max\n";
  for (const auto& c : curve)
    out += std::to_string(c.step) + "," + json(c.mean).dump() + "," + json(c.min).dump() + "," + json(c.max).dump() +
           "\n";
  write_text(path, out);
}

}  // namespace fblab
