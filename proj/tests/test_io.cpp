#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "fblab/errors.hpp"
#include "fblab/expert.hpp"
#include "fblab/io.hpp"
#include "helpers.hpp"

using namespace fblab;
namespace fs = std::filesystem;
using testutil::grid_state;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("fblab-io-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

Segment sample_segment(int x) {
  return testutil::walk(EnvSpec::grid_nav(), grid_state(x, 1, 3), {kUp, kRight, kLeft});
}

Provenance provenance() {
  Provenance p;
  p.seed = 42;
  p.beta = 0.1 + 0.2;  // not exactly representable as a short decimal
  p.noise_variant = "truncated_gaussian";
  p.noise_seed = 7;
  p.generator_config = {{"n_bins", 10}};
  p.created_at = "1970-01-01T00:00:00Z";
  p.source_buffer_hash = "abc";
  return p;
}

std::vector<FeedbackDataset> one_of_each() {
  std::vector<FeedbackDataset> out;
  auto make = [&](FeedbackType t, FeedbackInstances inst) {
    FeedbackDataset d;
    d.type = t;
    d.provenance = provenance();
    d.instances = std::move(inst);
    out.push_back(std::move(d));
  };
  make(FeedbackType::Evaluative, std::vector<RatingInstance>{{sample_segment(0), 3, -0.1171875}, {sample_segment(2), 9, 1.0 / 3}});
  SegmentPreference p{sample_segment(1), sample_segment(2), PreferenceLabel::SecondPreferred, -0.12, 0.7};
  make(FeedbackType::Comparative, std::vector<SegmentPreference>{p});
  make(FeedbackType::Demonstrative, std::vector<DemoInstance>{{sample_segment(3), grid_state(3, 1, 3), 0.5, -0.1}});
  make(FeedbackType::Corrective,
       std::vector<CorrectionInstance>{{sample_segment(4), sample_segment(5), -0.3, 0.2, PreferenceLabel::FirstPreferred}});
  ClusterDescription c{{0.1, 0.7, 1, 0, 0, 0}, -0.04, 12, 3};
  ClusterDescription c2{{0.3, 1.0 / 7, 0, 0.25, 0.75, 0}, 0.0123456789012345, 2, 4};
  make(FeedbackType::Descriptive, std::vector<ClusterDescription>{c, c2});
  make(FeedbackType::DescriptivePreference, std::vector<ClusterPreference>{{c, c2, PreferenceLabel::SecondPreferred}});
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST_CASE("datasets round-trip exactly") {
  TempDir tmp;
  for (const auto& d : one_of_each()) {
    const fs::path p = tmp.path / (std::string(to_string(d.type)) + ".jsonl");
    write_dataset(d, p);
    const FeedbackDataset back = read_dataset(p, d.type);
    CHECK(back == d);
    CHECK(dataset_hash(back) == dataset_hash(d));
    write_dataset(back, p.string() + ".again");
    CHECK(slurp(p) == slurp(p.string() + ".again"));
  }
}

TEST_CASE("dataset hash ignores the creation stamp only") {
  auto d = one_of_each().front();
  const std::string h = dataset_hash(d);
  d.provenance.created_at = "2030-01-01T00:00:00Z";
  CHECK(dataset_hash(d) == h);
  d.provenance.beta = 0.5;
  CHECK(dataset_hash(d) != h);
}

TEST_CASE("dataset read errors are distinct") {
  TempDir tmp;
  const auto d = one_of_each().front();
  const fs::path p = tmp.path / "ratings.jsonl";
  write_dataset(d, p);
  const std::string good = slurp(p);

  CHECK_THROWS_AS(read_dataset(p, FeedbackType::Comparative), DatasetTypeError);

  spit(p, "{not json" + good.substr(good.find('\n')));
  CHECK_THROWS_AS(read_dataset(p), SchemaError);

  std::string wrong_version = good;
  wrong_version.replace(wrong_version.find("\"schema_version\":1"), 18, "\"schema_version\":9");
  spit(p, wrong_version);
  CHECK_THROWS_AS(read_dataset(p), SchemaError);

  spit(p, good.substr(0, good.size() - 10));
  CHECK_THROWS_AS(read_dataset(p), TruncatedFileError);

  const auto last = good.rfind('\n', good.size() - 2);
  spit(p, good.substr(0, last + 1));
  CHECK_THROWS_AS(read_dataset(p), TruncatedFileError);

  std::string tampered = good;
  tampered.replace(tampered.find("\"rating\":9"), 10, "\"rating\":8");
  spit(p, tampered);
  CHECK_THROWS_AS(read_dataset(p), HashMismatchError);

  spit(p, "");
  CHECK_THROWS_AS(read_dataset(p), TruncatedFileError);
}

TEST_CASE("buffer round-trip") {
  TempDir tmp;
  RolloutBuffer b;
  b.spec = EnvSpec::grid_nav();
  b.config.n_segments = 2;
  b.config.seed = 5;
  b.segments = {sample_segment(0), sample_segment(4)};
  b.provenance = {{0, 1, 3}, {2, 0, 3}};
  write_buffer(b, tmp.path / "buf.jsonl");
  const RolloutBuffer back = read_buffer(tmp.path / "buf.jsonl");
  CHECK(back == b);
  CHECK(buffer_hash(back) == buffer_hash(b));
}

TEST_CASE("pointmass segments keep every bit") {
  TempDir tmp;
  const EnvSpec spec = EnvSpec::point_mass();
  Rng rng(8);
  RolloutBuffer b;
  b.spec = spec;
  for (int i = 0; i < 5; ++i) {
    Env env(spec);
    env.reset(rng);
    Segment s;
    s.env_id = EnvId::PointMass;
    s.initial_snapshot = env.snapshot();
    for (int k = 0; k < 7; ++k) s.transitions.push_back(env.step(rng.uniform(-1, 1)));
    s.final_snapshot = env.snapshot();
    b.segments.push_back(s);
    b.provenance.push_back({0, i, 0});
  }
  write_buffer(b, tmp.path / "pm.jsonl");
  CHECK(read_buffer(tmp.path / "pm.jsonl") == b);
}

TEST_CASE("reward model and expert round-trips") {
  TempDir tmp;
  StoredRewardModel m;
  m.ensemble.spec = EnvSpec::grid_nav();
  m.ensemble.members = {Mlp({6, 5, 1}, 1), Mlp({6, 5, 1}, 2)};
  m.config.seed = 99;
  m.feedback_type = FeedbackType::Corrective;
  m.dataset_hash = "feed";
  write_reward_model(m, tmp.path / "m.json");
  CHECK(read_reward_model(tmp.path / "m.json") == m);

  ExpertRuns runs;
  runs.spec = EnvSpec::grid_nav();
  ExpertConfig c;
  c.total_steps = 2000;
  c.n_checkpoints = 2;
  runs.runs.push_back(train_expert(runs.spec, c, 1));
  runs.runs.push_back({Checkpoint{Policy{PdPolicy{1.5, 0.25, 0.1}, true}, 7, -3.25}});
  write_experts(runs, tmp.path / "e.json");
  CHECK(read_experts(tmp.path / "e.json") == runs);
}

TEST_CASE("content hash is stable") {
  // FNV-1a 64 reference values.
  CHECK(content_hash("") == "cbf29ce484222325");
  CHECK(content_hash("a") == "af63dc4c8601ec8c");
  CHECK(hex64(255) == "00000000000000ff");
}
