#include "fblab/reports.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <thread>

#include "fblab/errors.hpp"
#include "fblab/io.hpp"

namespace fblab {

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw DomainError("row width does not match table " + name);
  rows.push_back(std::move(row));
}

std::string Table::to_csv() const {
  // RFC 4180 quoting for cells holding separators or quotes.
  auto quoted = [](const std::string& c) {
    if (c.find_first_of(",\"\n\r") == std::string::npos) return c;
    std::string q = "\"";
    for (char ch : c) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + '"';
  };
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) s += ',';
      s += quoted(cells[i]);
    }
    return s + '\n';
  };
  std::string out = line(columns);
  for (const auto& r : rows) out += line(r);
  return out;
}

const Table& Report::table(const std::string& name) const {
  for (const auto& t : tables)
    if (t.name == name) return t;
  throw DomainError("report has no table " + name);
}

void Report::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& t : tables) write_text(dir / (t.name + ".csv"), t.to_csv());
  nlohmann::json s = summary;
  s["kind"] = to_string(kind);
  write_text(dir / "summary.json", s.dump(2) + "\n");
}

std::string_view to_string(Report::Kind kind) {
  switch (kind) {
    case Report::Kind::Correlation: return "correlation";
    case Report::Kind::NoiseSweep: return "noise_sweep";
    case Report::Kind::SequenceTrace: return "sequence_trace";
    case Report::Kind::RLComparison: return "rl_comparison";
    case Report::Kind::DatasetStats: return "dataset_stats";
  }
  return "unknown";
}

std::string format_number(double v) { return nlohmann::json(v).dump(); }

std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : kUndefinedMarker; }

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

struct Summary {
  double mean = 0.0, min = 0.0, max = 0.0;
  int n = 0;
};

Summary summarize(const std::vector<double>& xs) {
  Summary s;
  if (xs.empty()) return s;
  s.n = static_cast<int>(xs.size());
  s.min = *std::min_element(xs.begin(), xs.end());
  s.max = *std::max_element(xs.begin(), xs.end());
  for (double x : xs) s.mean += x;
  s.mean /= s.n;
  return s;
}

Table histogram(const std::string& name, const std::vector<double>& values, int n_bins) {
  Table t{name, {"bin_lo", "bin_hi", "count"}, {}};
  if (values.empty()) return t;
  const double lo = *std::min_element(values.begin(), values.end());
  const double hi = *std::max_element(values.begin(), values.end());
  const double width = (hi - lo) / n_bins;
  std::vector<long> counts(static_cast<std::size_t>(n_bins), 0);
  for (double v : values) {
    int b = width > 0.0 ? static_cast<int>(std::floor((v - lo) / width)) : 0;
    counts[static_cast<std::size_t>(std::clamp(b, 0, n_bins - 1))]++;
  }
  for (int b = 0; b < n_bins; ++b)
    t.add_row({format_number(lo + b * width), format_number(b + 1 == n_bins ? hi : lo + (b + 1) * width),
               std::to_string(counts[static_cast<std::size_t>(b)])});
  return t;
}

double label_gap(PreferenceLabel label, double first, double second) {
  return label == PreferenceLabel::FirstPreferred ? first - second : second - first;
}

}  // namespace

// ---------------------------------------------------------------- correlation

Report correlation_report(const std::vector<NamedPredictions>& sources, const std::vector<double>& ground_truth) {
  std::vector<NamedPredictions> all;
  all.push_back({"ground_truth", ground_truth});
  for (const auto& s : sources) {
    if (s.values.size() != ground_truth.size()) throw ShapeError("source " + s.name + " has the wrong length");
    all.push_back(s);
  }
  Report r;
  r.kind = Report::Kind::Correlation;
  Table matrix{"matrix", {"source"}, {}};
  for (const auto& s : all) matrix.columns.push_back(s.name);
  nlohmann::json m = nlohmann::json::object();
  for (const auto& a : all) {
    std::vector<std::string> row{a.name};
    for (const auto& b : all) {
      // The diagonal is exactly 1 unless the source has zero variance.
      std::optional<double> c = pearson(a.values, b.values);
      if (&a == &b && c) c = 1.0;
      row.push_back(format_optional(c));
      m[a.name][b.name] = optional_json(c);
    }
    matrix.add_row(std::move(row));
  }
  Table vs{"vs_ground_truth", {"source", "pearson_r"}, {}};
  nlohmann::json gt = nlohmann::json::object();
  for (std::size_t i = 1; i < all.size(); ++i) {
    const auto c = pearson(all[i].values, ground_truth);
    vs.add_row({all[i].name, format_optional(c)});
    gt[all[i].name] = optional_json(c);
  }
  r.tables = {std::move(matrix), std::move(vs)};
  r.summary = {{"n_segments", ground_truth.size()}, {"vs_ground_truth", gt}, {"matrix", m}};
  return r;
}

Report correlation_report(const std::vector<std::pair<std::string, const RewardEnsemble*>>& models,
                          const RolloutBuffer& validation, double gamma) {
  std::vector<NamedPredictions> sources;
  for (const auto& [name, model] : models) sources.push_back({name, predicted_sums(*model, validation)});
  return correlation_report(sources, validation.returns(gamma));
}

// ---------------------------------------------------------------- noise sweep

NoiseSweepResult noise_sweep(const NoiseSweepConfig& config) {
  if (config.betas.empty() || config.types.empty() || config.seeds.empty())
    throw ConfigError("noise sweep needs non-empty beta, type and seed grids");
  for (double b : config.betas)
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("noise levels must be finite and non-negative");

  struct SeedData {
    ExperimentSetup setup;
    std::map<FeedbackType, FeedbackDataset> feedback;
    std::string error;
  };
  std::vector<SeedData> per_seed(config.seeds.size());
  auto prepare = [&](std::size_t i) {
    const std::uint64_t seed = config.seeds[i];
    try {
      per_seed[i].setup = build_setup(config.spec, config.setup, seed);
      GeneratorConfig g = config.generator;
      per_seed[i].feedback = generate_feedback(config.types, per_seed[i].setup.buffer,
                                               per_seed[i].setup.experts.experts, g, seed, "",
                                               buffer_hash(per_seed[i].setup.buffer));
    } catch (const std::exception& ex) {
      per_seed[i].error = ex.what();
    }
  };

  NoiseSweepResult out;
  for (FeedbackType t : config.types)
    for (double b : config.betas)
      for (std::uint64_t s : config.seeds) out.cells.push_back({t, b, s, std::nullopt, ""});

  auto run_cell = [&](std::size_t c) {
    SweepCell& cell = out.cells[c];
    const std::size_t si = static_cast<std::size_t>(
        std::find(config.seeds.begin(), config.seeds.end(), cell.seed) - config.seeds.begin());
    const SeedData& data = per_seed[si];
    if (!data.error.empty()) {
      cell.error = data.error;
      return;
    }
    try {
      NoiseConfig nc;
      nc.beta = cell.beta;
      nc.seed = derive_seed(cell.seed, "noise");
      nc.variant = config.variant;
      const FeedbackDataset noisy = perturb(data.feedback.at(cell.type), config.spec, nc);
      TrainConfig tc = config.train;
      tc.seed = cell.seed;
      tc.threads = 1;
      const TrainResult res = train_reward_model(noisy, config.spec, tc);
      cell.correlation = reward_correlation(res.ensemble, data.setup.holdout, config.spec.gamma);
      if (!cell.correlation) cell.error = "undefined correlation";
    } catch (const std::exception& ex) {
      cell.error = ex.what();
    }
  };

  auto fan_out = [&](std::size_t n, auto&& fn) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(config.threads, 1)));
    if (workers <= 1) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      });
    for (auto& th : pool) th.join();
  };
  fan_out(per_seed.size(), prepare);
  fan_out(out.cells.size(), run_cell);

  Report& r = out.report;
  r.kind = Report::Kind::NoiseSweep;
  Table cells{"cells", {"feedback_type", "beta", "seed", "correlation", "error"}, {}};
  for (const auto& c : out.cells) {
    std::string err = c.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    cells.add_row({std::string(to_string(c.type)), format_number(c.beta), std::to_string(c.seed),
                   format_optional(c.correlation), err});
  }
  Table agg{"summary", {"feedback_type", "beta", "mean", "min", "max", "n_ok", "n_failed"}, {}};
  nlohmann::json js = nlohmann::json::array();
  for (FeedbackType t : config.types)
    for (double b : config.betas) {
      std::vector<double> vals;
      int failed = 0;
      for (const auto& c : out.cells)
        if (c.type == t && c.beta == b) {
          if (c.correlation && c.error.empty()) vals.push_back(*c.correlation);
          else ++failed;
        }
      const Summary s = summarize(vals);
      const bool any = s.n > 0;
      agg.add_row({std::string(to_string(t)), format_number(b), any ? format_number(s.mean) : kUndefinedMarker,
                   any ? format_number(s.min) : kUndefinedMarker, any ? format_number(s.max) : kUndefinedMarker,
                   std::to_string(s.n), std::to_string(failed)});
      js.push_back({{"feedback_type", to_string(t)},
                    {"beta", b},
                    {"mean", any ? nlohmann::json(s.mean) : nlohmann::json()},
                    {"min", any ? nlohmann::json(s.min) : nlohmann::json()},
                    {"max", any ? nlohmann::json(s.max) : nlohmann::json()},
                    {"n_ok", s.n},
                    {"n_failed", failed}});
    }
  r.tables = {std::move(cells), std::move(agg)};
  r.summary = {{"variant", to_string(config.variant)}, {"cells", js}};
  return out;
}

// ---------------------------------------------------------------- sequence trace

Report sequence_trace(const std::vector<std::pair<std::string, const RewardEnsemble*>>& models, const EnvSpec& spec,
                      const Policy& policy, int n_steps, std::uint64_t seed) {
  if (n_steps < 1) throw ConfigError("sequence trace needs at least one step");
  policy.check_compatible(spec);
  Rng rng(derive_seed(seed, "sequence-trace"));
  Env env(spec);
  Observation obs = env.reset(rng);
  std::vector<double> truth;
  std::vector<int> episode;
  std::vector<std::vector<double>> pred(models.size());
  int ep = 0;
  for (int i = 0; i < n_steps; ++i) {
    const Transition t = env.step(policy.act(spec, obs, rng, false));
    truth.push_back(t.reward);
    episode.push_back(ep);
    const auto f = encode(spec, t);
    for (std::size_t m = 0; m < models.size(); ++m) pred[m].push_back(models[m].second->predict_step(f));
    if (t.terminated) {
      obs = env.reset(rng);
      ++ep;
    } else {
      obs = t.next_obs;
    }
  }
  auto zscore = [](const std::vector<double>& xs) {
    RunningStats s;
    for (double x : xs) s.update(x);
    std::vector<double> out;
    for (double x : xs) out.push_back(standardize(s, x));
    return out;
  };

  Report r;
  r.kind = Report::Kind::SequenceTrace;
  Table t{"trace", {"step", "episode", "ground_truth", "ground_truth_std"}, {}};
  std::vector<std::vector<double>> zs;
  for (std::size_t m = 0; m < models.size(); ++m) {
    t.columns.push_back(models[m].first + "_raw");
    t.columns.push_back(models[m].first);
    zs.push_back(zscore(pred[m]));
  }
  const auto zt = zscore(truth);
  for (int i = 0; i < n_steps; ++i) {
    std::vector<std::string> row{std::to_string(i), std::to_string(episode[static_cast<std::size_t>(i)]),
                                 format_number(truth[static_cast<std::size_t>(i)]),
                                 format_number(zt[static_cast<std::size_t>(i)])};
    for (std::size_t m = 0; m < models.size(); ++m) {
      row.push_back(format_number(pred[m][static_cast<std::size_t>(i)]));
      row.push_back(format_number(zs[m][static_cast<std::size_t>(i)]));
    }
    t.add_row(std::move(row));
  }
  nlohmann::json corr = nlohmann::json::object();
  for (std::size_t m = 0; m < models.size(); ++m) corr[models[m].first] = optional_json(pearson(pred[m], truth));
  r.tables = {std::move(t)};
  r.summary = {{"n_steps", n_steps}, {"episodes", ep + 1}, {"step_correlation", corr}};
  return r;
}

// ---------------------------------------------------------------- dataset stats

Report dataset_stats(const FeedbackDataset& dataset, int n_bins) {
  if (n_bins < 1) throw ConfigError("histograms need at least one bin");
  Report r;
  r.kind = Report::Kind::DatasetStats;
  r.summary = {{"feedback_type", to_string(dataset.type)},
               {"instances", dataset.size()},
               {"beta", dataset.provenance.beta}};
  std::vector<double> returns;
  std::vector<double> gaps;

  std::visit(
      [&](const auto& items) {
        using T = typename std::decay_t<decltype(items)>::value_type;
        if constexpr (std::is_same_v<T, RatingInstance>) {
          int top = 1;
          for (const auto& x : items) top = std::max(top, x.rating);
          std::vector<long> counts(static_cast<std::size_t>(top) + 1, 0);
          for (const auto& x : items) {
            returns.push_back(x.underlying_return);
            counts[static_cast<std::size_t>(x.rating)]++;
          }
          Table t{"ratings", {"rating", "count"}, {}};
          for (int k = 1; k <= top; ++k) t.add_row({std::to_string(k), std::to_string(counts[static_cast<std::size_t>(k)])});
          r.tables.push_back(std::move(t));
        } else if constexpr (std::is_same_v<T, SegmentPreference>) {
          for (const auto& x : items) {
            returns.push_back(x.first_return);
            returns.push_back(x.second_return);
            gaps.push_back(label_gap(x.label, x.first_return, x.second_return));
          }
        } else if constexpr (std::is_same_v<T, CorrectionInstance>) {
          std::vector<double> orig, better;
          for (const auto& x : items) {
            returns.push_back(x.original_return);
            returns.push_back(x.improved_return);
            gaps.push_back(label_gap(x.label, x.original_return, x.improved_return));
            orig.push_back(x.original_return);
            better.push_back(x.improved_return);
          }
          r.summary["learner_mean_return"] = summarize(orig).mean;
          r.summary["improved_mean_return"] = summarize(better).mean;
        } else if constexpr (std::is_same_v<T, DemoInstance>) {
          std::vector<double> demo, learner;
          Table t{"demo_vs_learner", {"index", "demo_return", "learner_return"}, {}};
          for (std::size_t i = 0; i < items.size(); ++i) {
            demo.push_back(items[i].expert_return);
            learner.push_back(items[i].original_return);
            returns.push_back(items[i].expert_return);
            t.add_row({std::to_string(i), format_number(items[i].expert_return),
                       format_number(items[i].original_return)});
          }
          r.tables.push_back(std::move(t));
          r.summary["demo_mean_return"] = summarize(demo).mean;
          r.summary["learner_mean_return"] = summarize(learner).mean;
        } else if constexpr (std::is_same_v<T, ClusterDescription>) {
          long members = 0;
          for (const auto& x : items) {
            returns.push_back(x.mean_reward);
            members += x.member_count;
          }
          r.summary["total_members"] = members;
        } else {
          for (const auto& x : items) {
            returns.push_back(x.first.mean_reward);
            returns.push_back(x.second.mean_reward);
            gaps.push_back(label_gap(x.label, x.first.mean_reward, x.second.mean_reward));
          }
        }
      },
      dataset.instances);

  r.tables.insert(r.tables.begin(), histogram("returns", returns, n_bins));
  if (!gaps.empty()) {
    r.tables.push_back(histogram("gaps", gaps, n_bins));
    const auto positive = std::count_if(gaps.begin(), gaps.end(), [](double g) { return g > 0.0; });
    r.summary["fraction_positive_gap"] = static_cast<double>(positive) / static_cast<double>(gaps.size());
  }
  const Summary s = summarize(returns);
  r.summary["return_mean"] = s.mean;
  r.summary["return_min"] = s.min;
  r.summary["return_max"] = s.max;
  return r;
}

// ---------------------------------------------------------------- rl comparison

Report rl_comparison(const std::vector<RlEntry>& entries, double expert_return) {
  Report r;
  r.kind = Report::Kind::RLComparison;
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> finals;
  Table runs{"runs", {"source", "seed", "final_return"}, {}};
  Table curves{"curves", {"source", "seed", "step", "eval_return_mean", "eval_return_min", "eval_return_max"}, {}};
  for (const auto& e : entries) {
    if (!finals.count(e.source)) order.push_back(e.source);
    finals[e.source].push_back(e.final_return);
    runs.add_row({e.source, std::to_string(e.seed), format_number(e.final_return)});
    for (const auto& c : e.curve)
      curves.add_row({e.source, std::to_string(e.seed), std::to_string(c.step), format_number(c.mean),
                      format_number(c.min), format_number(c.max)});
  }
  std::optional<double> gt;
  if (finals.count("ground_truth")) gt = summarize(finals["ground_truth"]).mean;
  Table agg{"summary", {"source", "mean_final_return", "min", "max", "fraction_of_ground_truth", "fraction_of_expert"}, {}};
  nlohmann::json js = nlohmann::json::object();
  for (const auto& name : order) {
    const Summary s = summarize(finals[name]);
    std::optional<double> fg, fe;
    if (gt && *gt != 0.0) fg = s.mean / *gt;
    if (expert_return != 0.0) fe = s.mean / expert_return;
    agg.add_row({name, format_number(s.mean), format_number(s.min), format_number(s.max), format_optional(fg),
                 format_optional(fe)});
    js[name] = {{"mean_final_return", s.mean},
                {"fraction_of_ground_truth", optional_json(fg)},
                {"fraction_of_expert", optional_json(fe)}};
  }
  r.tables = {std::move(agg), std::move(runs), std::move(curves)};
  r.summary = {{"expert_return", expert_return}, {"sources", js}};
  return r;
}

}  // namespace fblab
