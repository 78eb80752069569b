// Command-line front end. Every verb runs the pipeline up to its stage, so
// earlier stages come from the output directory when they are up to date.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fblab/errors.hpp"
#include "fblab/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitStage = 4;

struct Verb {
  const char* name;
  const char* help;
  fblab::Stage until;
};

constexpr Verb kVerbs[] = {
    {"train-expert", "Train the expert runs", fblab::Stage::Experts},
    {"collect", "Collect the rollout and held-out buffers", fblab::Stage::Collect},
    {"gen-feedback", "Generate the feedback datasets", fblab::Stage::Feedback},
    {"perturb", "Apply the configured noise level", fblab::Stage::Noise},
    {"train-reward", "Train one reward ensemble per feedback type", fblab::Stage::Reward},
    {"train-agent", "Train agents on every configured reward source", fblab::Stage::Agents},
    {"report", "Write the analysis reports", fblab::Stage::Reports},
    {"pipeline", "Run every stage", fblab::Stage::Reports},
};

std::string join_stages(const std::vector<fblab::Stage>& stages) {
  std::string s;
  for (auto st : stages) {
    if (!s.empty()) s += ' ';
    s += fblab::to_string(st);
  }
  return s.empty() ? "-" : s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic feedback benchmark: experts, feedback, noise, reward models and agents"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::pair<CLI::App*, fblab::Stage>> subs;
  for (const auto& v : kVerbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    sub->add_option("--config", config_path, "Pipeline config (JSON); defaults to the smoke config");
    sub->add_option("--out", out_dir, "Output directory; defaults to $FBLAB_CACHE_DIR/<config hash>");
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--threads", threads, "Cap on worker threads")->check(CLI::PositiveNumber);
    subs.emplace_back(sub, v.until);
  }
  CLI::App* show = app.add_subcommand("config", "Print the effective config as JSON");
  show->add_option("--config", config_path, "Pipeline config (JSON); defaults to the smoke config");
  show->add_option("--seed", seed, "Override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    fblab::PipelineConfig config =
        config_path.empty() ? fblab::PipelineConfig::smoke() : fblab::load_pipeline_config(config_path);
    if (seed) config.seed = *seed;
    if (threads) config.threads = *threads;
    config.validate();

    if (show->parsed()) {
      std::cout << fblab::to_json_value(config).dump(2) << "\n";
      return 0;
    }
    for (const auto& [sub, until] : subs) {
      if (!sub->parsed()) continue;
      const std::filesystem::path out = out_dir.empty() ? fblab::default_output_dir(config) : std::filesystem::path(out_dir);
      const fblab::PipelineRun run = fblab::run_pipeline(config, out, until);
      std::cout << "output:   " << out.string() << "\n"
                << "executed: " << join_stages(run.executed) << "\n"
                << "skipped:  " << join_stages(run.skipped) << "\n";
    }
    return 0;
  } catch (const fblab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const fblab::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "stage failure: " << e.what() << "\n";
    return kExitStage;
  }
}
