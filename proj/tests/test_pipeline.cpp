#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fblab/errors.hpp"
#include "fblab/io.hpp"
#include "fblab/pipeline.hpp"

using namespace fblab;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny() {
  PipelineConfig c = PipelineConfig::smoke();
  c.setup.expert.total_steps = 4000;
  c.setup.expert.n_checkpoints = 4;
  c.setup.rollout.n_segments = 120;
  c.setup.rollout.max_len = 20;
  c.setup.holdout_segments = 60;
  c.types = {FeedbackType::Evaluative, FeedbackType::Comparative, FeedbackType::Demonstrative};
  c.train.hidden = {16};
  c.train.max_epochs = 4;
  c.train.patience = 2;
  c.train.n_members = 2;
  c.agent.budget = 2000;
  c.agent_sources = {"ground_truth", "comparative"};
  c.sequence_steps = 20;
  return c;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("fblab-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<Stage> stages_from(Stage first) {
  std::vector<Stage> out;
  for (auto s : kAllStages)
    if (static_cast<int>(s) >= static_cast<int>(first)) out.push_back(s);
  return out;
}

int run_cli(const std::string& args) {
  const int rc = std::system((std::string(FBLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST_CASE("config json round-trips and hashes without threads") {
  const PipelineConfig c = tiny();
  const PipelineConfig back = pipeline_config_from_json(to_json_value(c));
  CHECK(to_json_value(back) == to_json_value(c));
  PipelineConfig threaded = c;
  threaded.threads = 4;
  CHECK(config_hash(threaded) == config_hash(c));
  PipelineConfig noisy = c;
  noisy.beta = 0.5;
  CHECK(config_hash(noisy) != config_hash(c));
}

TEST_CASE("config parsing is strict") {
  nlohmann::json j = to_json_value(tiny());
  auto bad = j;
  bad["reward"]["learning_rte"] = 0.1;
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = j;
  bad["noise"]["beta"] = "high";
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = j;
  bad["env"]["id"] = "Atlantis";
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = j;
  bad["schema_version"] = 2;
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = j;
  bad["feedback"]["types"] = {"evaluative", "gestural"};
  CHECK_THROWS_AS(pipeline_config_from_json(bad), ConfigError);
  bad = j;
  bad["env"] = {{"id", "PointMass"}};
  bad["agent"]["algorithm"] = "q_learning";
  CHECK_THROWS_AS(pipeline_config_from_json(bad).validate(), ConfigError);
  bad = j;
  bad["noise"]["beta"] = -1.0;
  CHECK_THROWS_AS(pipeline_config_from_json(bad).validate(), ConfigError);
  // Missing sections fall back to defaults.
  const PipelineConfig minimal = pipeline_config_from_json(nlohmann::json{{"seed", 5}});
  CHECK(minimal.seed == 5);
  CHECK(minimal.spec == EnvSpec::grid_nav());
}

TEST_CASE("pipeline memoizes and tracks dependencies") {
  TempDir tmp("pipeline");
  PipelineConfig c = tiny();
  const PipelineRun first = run_pipeline(c, tmp.path);
  CHECK(first.executed == stages_from(Stage::Experts));
  CHECK(fs::exists(tmp.path / "manifest.json"));
  CHECK(fs::exists(tmp.path / "reports" / "correlation" / "vs_ground_truth.csv"));
  CHECK(fs::exists(tmp.path / "agents" / "results.json"));

  const PipelineRun again = run_pipeline(c, tmp.path);
  CHECK(again.executed.empty());
  CHECK(again.skipped.size() == 7);

  c.beta = 0.5;
  CHECK(run_pipeline(c, tmp.path).executed == stages_from(Stage::Noise));

  c.train.max_epochs = 3;
  CHECK(run_pipeline(c, tmp.path).executed == stages_from(Stage::Reward));

  // A damaged artifact reruns its stage; the rebuilt bytes match, so later stages stay cached.
  {
    std::ofstream out(tmp.path / "buffer.jsonl", std::ios::app);
    out << "junk\n";
  }
  CHECK(run_pipeline(c, tmp.path).executed == std::vector<Stage>{Stage::Collect});

  // Stopping early leaves later stages untouched.
  c.seed = 2;
  const PipelineRun partial = run_pipeline(c, tmp.path, Stage::Feedback);
  CHECK(partial.executed == std::vector<Stage>{Stage::Experts, Stage::Collect, Stage::Feedback});
}

TEST_CASE("pipeline outputs are reproducible") {
  TempDir a("repro-a"), b("repro-b");
  const PipelineConfig c = tiny();
  run_pipeline(c, a.path, Stage::Noise);
  run_pipeline(c, b.path, Stage::Noise);
  for (const char* f : {"buffer.jsonl", "holdout.jsonl", "feedback/comparative.jsonl", "noisy/demonstrative.jsonl"})
    CHECK(read_text(a.path / f) == read_text(b.path / f));
}

TEST_CASE("cli exit codes") {
  TempDir tmp("cli");
  fs::create_directories(tmp.path);
  const fs::path cfg = tmp.path / "config.json";
  {
    std::ofstream out(cfg);
    out << to_json_value(tiny()).dump(2);
  }
  CHECK(run_cli("config --config " + cfg.string()) == 0);
  CHECK(run_cli("collect --config " + cfg.string() + " --out " + (tmp.path / "out").string()) == 0);
  CHECK(fs::exists(tmp.path / "out" / "buffer.jsonl"));
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("collect --config " + (tmp.path / "missing.json").string()) == 2);
  {
    std::ofstream out(tmp.path / "bad.json");
    out << R"({"noise": {"beta": 0.5, "colour": "pink"}})";
  }
  CHECK(run_cli("collect --config " + (tmp.path / "bad.json").string()) == 2);
  // An unreadable manifest is discarded and the stages rerun.
  {
    std::ofstream out(tmp.path / "out" / "manifest.json");
    out << "{";
  }
  CHECK(run_cli("collect --config " + cfg.string() + " --out " + (tmp.path / "out").string()) == 0);
  CHECK(fs::exists(tmp.path / "out" / "buffer.jsonl"));
}
