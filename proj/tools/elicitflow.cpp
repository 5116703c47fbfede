// elicitflow: oracle simulation, prior training and evaluation for the
// bundled M1-M4 studies.
//
//   elicitflow expert      --preset M1 [--seed 0]
//   elicitflow train       --preset M1 --seeds 1..30 [--reduced] [--threads 4]
//   elicitflow evaluate    --preset M1
//   elicitflow sensitivity --preset M1
//   elicitflow config      --preset M4 > m4.toml
//
// Runs land in <out>/<study>/<seed>/. Exit codes: 0 ok, 1 usage, config or
// data errors, 2 training divergence.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "elicit/diagnostics.hpp"
#include "elicit/errors.hpp"
#include "elicit/log.hpp"
#include "elicit/run_io.hpp"
#include "elicit/study.hpp"

#ifndef ELICIT_VERSION
#define ELICIT_VERSION "0.0.0"
#endif

namespace {

using elicit::StudyConfig;
using json = nlohmann::ordered_json;

struct GlobalOptions {
  std::string config;
  std::string preset;
  bool reduced = false;
  std::optional<std::uint64_t> seed;
  std::string seeds;
  std::string out;
  std::string expert;
  std::size_t threads = 1;
  std::optional<std::size_t> epochs;
};

StudyConfig resolve(const GlobalOptions& g) {
  StudyConfig cfg = g.config.empty() ? StudyConfig::preset(g.preset.empty() ? "M1" : g.preset)
                                     : StudyConfig::load(g.config);
  if (!g.config.empty() && !g.preset.empty() && g.preset != cfg.study) {
    throw elicit::ConfigError("--preset " + g.preset + " conflicts with study " + cfg.study +
                              " in " + g.config);
  }
  if (g.reduced) cfg = cfg.reduced();
  if (!g.seeds.empty()) cfg.seeds = elicit::parse_seed_list(g.seeds);
  else if (g.seed) cfg.seeds = {*g.seed};
  if (!g.out.empty()) cfg.output = g.out;
  if (g.epochs) cfg.train.epochs = *g.epochs;
  cfg.validate();
  return cfg;
}

json manifest(const GlobalOptions& g, const StudyConfig& cfg, std::string_view command) {
  json m;
  m["command"] = command;
  m["version"] = ELICIT_VERSION;
  m["study"] = cfg.study;
  m["config_hash"] = elicit::config_hash(cfg);
  m["config_file"] = g.config;
  m["preset"] = g.config.empty() ? (g.preset.empty() ? "M1" : g.preset) : "";
  m["reduced"] = g.reduced;
  m["seeds"] = cfg.seeds;
  m["config"] = cfg.to_json();
  return m;
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

std::filesystem::path study_dir(const StudyConfig& cfg) { return cfg.output / cfg.study; }

int cmd_expert(const GlobalOptions& g) {
  StudyConfig cfg = resolve(g);
  const std::uint64_t seed = g.seed.value_or(0);
  elicit::Rng rng(seed, elicit::Stream::oracle);
  elicit::ExpertData expert =
      elicit::simulate_expert(cfg.prior, cfg.model, cfg.plan, cfg.expert_samples, rng);
  expert.provenance["seed"] = seed;
  expert.provenance["config_hash"] = elicit::config_hash(cfg);
  const auto path = g.expert.empty() ? study_dir(cfg) / "expert.json" : std::filesystem::path(g.expert);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  elicit::save_expert(expert, path);
  json m = manifest(g, cfg, "expert");
  m["seed"] = seed;
  write_json(m, study_dir(cfg) / "expert_manifest.json");
  std::cout << path.string() << '\n';
  return 0;
}

int cmd_train(const GlobalOptions& g) {
  StudyConfig cfg = resolve(g);
  const auto expert_path =
      g.expert.empty() ? study_dir(cfg) / "expert.json" : std::filesystem::path(g.expert);
  if (!std::filesystem::exists(expert_path)) {
    throw elicit::ConfigError("expert file " + expert_path.string() +
                              " not found; run `elicitflow expert` first");
  }
  const elicit::ExpertData expert = elicit::load_expert(expert_path);
  elicit::check_expert_matches_plan(expert.statistics, cfg.plan);
  if (std::filesystem::absolute(expert_path) !=
      std::filesystem::absolute(study_dir(cfg) / "expert.json")) {
    elicit::save_expert(expert, study_dir(cfg) / "expert.json");
  }

  const auto problem = cfg.problem(expert);
  auto batch = elicit::run_replications(problem, cfg.seeds, cfg.train, g.threads);
  for (const auto& w : batch.warnings) elicit::warn(w);

  const json base = manifest(g, cfg, "train");
  for (auto& r : batch.results) {
    json m = base;
    m["seed"] = r.seed;
    const auto dir = study_dir(cfg) / std::to_string(r.seed);
    elicit::save_run(r, dir, m);
    std::cout << "seed " << r.seed << ": final loss " << r.final_loss << " -> " << dir.string() << '\n';
  }
  json fm = base;
  fm["failures"] = json::array();
  bool diverged = false;
  for (const auto& f : batch.failures) {
    fm["failures"].push_back({{"seed", f.seed}, {"message", f.message}, {"diverged", f.diverged}});
    diverged = diverged || f.diverged;
  }
  write_json(fm, study_dir(cfg) / "train_manifest.json");
  if (diverged) return 2;
  return batch.failures.empty() ? 0 : 1;
}

int cmd_evaluate(const GlobalOptions& g, const std::string& runs_arg, std::size_t samples) {
  StudyConfig cfg = resolve(g);
  const std::filesystem::path runs = runs_arg.empty() ? study_dir(cfg) : std::filesystem::path(runs_arg);
  std::vector<elicit::ReplicationResult> results;
  json warnings = json::array();
  for (const auto& dir : elicit::list_run_dirs(runs)) {
    try {
      results.push_back(elicit::load_run(dir));
    } catch (const std::exception& e) {
      elicit::warn(std::string("skipping ") + e.what());
      warnings.push_back({{"run", dir.filename().string()}, {"error", e.what()}});
    }
  }
  if (results.empty()) {
    std::cerr << "no completed runs under " << runs.string() << '\n';
    return 1;
  }

  std::vector<std::uint64_t> seeds;
  std::vector<double> losses;
  for (const auto& r : results) {
    seeds.push_back(r.seed);
    losses.push_back(r.final_loss);
  }

  std::size_t window = cfg.slope_window;
  for (const auto& r : results) window = std::min(window, r.trajectory.epochs.size());
  if (window < cfg.slope_window) {
    warnings.push_back({{"slope_window", window}, {"requested", cfg.slope_window}});
    elicit::warn("slope window shortened to " + std::to_string(window) + " epochs");
  }
  if (window >= 2) elicit::write_slopes_csv(elicit::slope_report(results, window), runs / "slopes.csv");

  const auto weights = elicit::averaging_weights(losses, cfg.averaging_gamma);
  elicit::write_weights_csv(seeds, weights, runs / "weights.csv");

  if (std::filesystem::exists(runs / "expert.json")) {
    const auto expert = elicit::load_expert(runs / "expert.json");
    elicit::write_comparison_csv(elicit::comparison_table(results, expert.statistics),
                                 runs / "comparison.csv");
  } else {
    warnings.push_back({{"comparison", "expert.json missing"}});
    elicit::warn("no expert.json next to the runs; comparison.csv not written");
  }

  elicit::Rng rng(0, elicit::Stream::mixture);
  const auto theta = elicit::average_prior_sample(results, weights, samples, rng);
  elicit::write_samples_csv(theta, cfg.model.parameter_names, runs / "averaged_prior.csv");

  json m = manifest(g, cfg, "evaluate");
  m["runs"] = seeds;
  m["warnings"] = warnings;
  write_json(m, runs / "evaluate_manifest.json");
  std::cout << "evaluated " << results.size() << " runs in " << runs.string() << '\n';
  return 0;
}

int cmd_sensitivity(const GlobalOptions& g, std::size_t points) {
  StudyConfig cfg = resolve(g);
  const auto grid = elicit::default_sensitivity_grid(cfg.prior, cfg.model.parameter_names, points);
  const auto rows = elicit::sensitivity_analysis(cfg.prior, cfg.model, cfg.plan, grid,
                                                 cfg.expert_samples, g.seed.value_or(0));
  const auto path = study_dir(cfg) / "sensitivity.csv";
  elicit::write_sensitivity_csv(rows, path);
  json m = manifest(g, cfg, "sensitivity");
  m["seed"] = g.seed.value_or(0);
  m["points"] = points;
  write_json(m, study_dir(cfg) / "sensitivity_manifest.json");
  std::cout << path.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Normalizing-flow prior elicitation from simulated expert statistics"};
  app.set_version_flag("--version", ELICIT_VERSION);
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  app.add_option("--config", g.config, "Study config (.toml or .json)");
  app.add_option("--preset,--study", g.preset, "Built-in study")->check(CLI::IsMember({"M1", "M2", "M3", "M4"}));
  app.add_flag("--reduced", g.reduced, "Desk-scale overrides (2x64 flow, B=32, S=100)");
  app.add_option("--seed", g.seed, "Single seed (oracle seed for `expert`)");
  app.add_option("--seeds", g.seeds, "Seed list: 1..30 or 1,2,5");
  app.add_option("--out", g.out, "Output root (default from config)");
  app.add_option("--epochs", g.epochs, "Override the number of epochs");

  auto* expert = app.add_subcommand("expert", "Simulate expert statistics from the oracle prior");
  expert->add_option("--expert-file", g.expert, "Output path (default <out>/<study>/expert.json)");

  auto* train = app.add_subcommand("train", "Train one flow per seed");
  train->add_option("--expert-file", g.expert, "Expert statistics (default <out>/<study>/expert.json)");
  train->add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string runs;
  std::size_t samples = 10000;
  auto* evaluate = app.add_subcommand("evaluate", "Slopes, averaging weights, comparison table");
  evaluate->add_option("--runs", runs, "Study run directory (default <out>/<study>)");
  evaluate->add_option("--samples", samples, "Draws from the averaged prior")->check(CLI::PositiveNumber);

  std::size_t points = 9;
  auto* sensitivity = app.add_subcommand("sensitivity", "One-at-a-time hyperparameter sweeps");
  sensitivity->add_option("--points", points, "Grid points per hyperparameter")->check(CLI::PositiveNumber);

  auto* config = app.add_subcommand("config", "Print the effective study config as TOML");
  bool as_json = false;
  config->add_flag("--json", as_json, "Print JSON instead");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*expert) return cmd_expert(g);
    if (*train) return cmd_train(g);
    if (*evaluate) return cmd_evaluate(g, runs, samples);
    if (*sensitivity) return cmd_sensitivity(g, points);
    if (*config) {
      const StudyConfig cfg = resolve(g);
      std::cout << (as_json ? cfg.to_json().dump(2) + "\n" : cfg.to_toml());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
