// pucl: command-line front end for expert generation, training and evaluation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "pucl/errors.hpp"
#include "pucl/io.hpp"
#include "pucl/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pucl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
  std::string config;
  std::string demos;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  bool no_cmr = false;
  bool no_filter = false;
  bool final_only = false;
  std::string constraint;
  std::string policy;
  std::optional<std::size_t> episodes;
  int resolution = 200;
  std::vector<double> bounds;
  std::string preset;
};

ExperimentConfig load_config(const Options& o) {
  ExperimentConfig cfg = load_experiment(o.config);
  if (o.iterations) cfg.run.iterations = *o.iterations;
  if (o.no_cmr) cfg.run.cmr_enabled = false;
  if (o.no_filter) cfg.run.filter_enabled = false;
  if (o.final_only) cfg.snapshots = SnapshotPolicy::final_only;
  cfg.validate();
  return cfg;
}

std::uint64_t first_seed(const ExperimentConfig& cfg, const Options& o) {
  return o.seed ? *o.seed : cfg.seeds.front();
}

int cmd_gen_expert(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const std::uint64_t seed = first_seed(cfg, o);
  nn::Rng rng = derived_rng(seed, 0);
  const ExpertResult res = generate_expert(cfg.run, rng);
  const fs::path out = o.out.empty() ? fs::path(cfg.output_dir) / "demos.csv" : fs::path(o.out);
  write_demo_file(out, res.demos, cfg.run.env.kind);
  std::printf("wrote %zu demonstrations to %s (return mean %.4f, std %.4f, rejected %zu, expert updates %zu)\n",
              res.demos.trajectories.size(), out.string().c_str(), res.demos.return_mean,
              res.demos.return_std, res.rejected, res.training.size());
  return kExitOk;
}

void train_one(const ExperimentConfig& cfg, const DemoSet& demos, std::uint64_t seed,
               const fs::path& run_dir) {
  fs::create_directories(run_dir);
  write_json_file(run_dir / "config.json", to_json(cfg));
  CsvAppender metrics(run_dir / "metrics.csv", kMetricsHeader);
  CsvAppender ppo(run_dir / "ppo_stats.csv", kPpoStatsHeader);

  IcrlHooks hooks;
  hooks.on_ppo_update = [&](const PpoStats& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g", s.iteration,
                  s.mean_raw_return, s.mean_penalized_return, s.entropy, s.value_loss,
                  s.policy_loss);
    ppo.append(buf);
  };
  hooks.on_iteration = [&](const IterationReport& r, const ConstraintModel& c,
                           const PolicyModel& p, const MemoryBuffer&) {
    metrics.append(format_metrics_row(r));
    const bool last = r.iteration == cfg.run.iterations;
    if (cfg.snapshots == SnapshotPolicy::every_iteration || last) {
      const fs::path dir = run_dir / std::to_string(r.iteration);
      save_constraint(dir / "constraint.model", c);
      save_policy(dir / "policy.model", p);
    }
    std::printf("seed %llu iter %zu/%zu iou %.3f violation %.3f return %.2f filtered %zu memory %zu%s\n",
                static_cast<unsigned long long>(seed), r.iteration, cfg.run.iterations, r.iou,
                r.violation_rate, r.mean_return, r.n_filtered_trajectories, r.memory_size,
                r.constraint_updated ? "" : " (constraint not updated)");
    std::fflush(stdout);
  };
  run_icrl(cfg.run, demos, seed, hooks);
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const DemoFile demos = read_demo_file(fs::path(o.demos));
  if (demos.kind != cfg.run.env.kind) {
    throw ConfigError("demo file is for env '" + to_string(demos.kind) + "' but the config uses '" +
                      to_string(cfg.run.env.kind) + "'");
  }
  const fs::path out = o.out.empty() ? fs::path(cfg.output_dir) : fs::path(o.out);
  if (o.seed) {
    train_one(cfg, demos.demos, *o.seed, out);
  } else {
    for (std::uint64_t s : cfg.seeds) train_one(cfg, demos.demos, s, out / ("seed-" + std::to_string(s)));
  }
  return kExitOk;
}

void check_matches_env(const ConstraintModel& model, const EnvSpec& env) {
  if (model.oracle && model.oracle->kind != env.kind) {
    throw ConfigError("constraint snapshot is an oracle for env '" + to_string(model.oracle->kind) +
                      "' but the config uses '" + to_string(env.kind) + "'");
  }
  if (!model.oracle && model.net.layer_sizes.front() != model.input_dim()) {
    throw ConfigError("constraint snapshot expects " + std::to_string(model.net.layer_sizes.front()) +
                      " inputs, its input mode provides " + std::to_string(model.input_dim()));
  }
}

int cmd_evaluate(const Options& o) {
  const ExperimentConfig cfg = load_config(o);
  const ConstraintModel model = load_constraint(o.constraint);
  check_matches_env(model, cfg.run.env);
  nlohmann::json report;
  report["iou"] = metric_iou(model, cfg.run.env, cfg.run.iou_resolution, cfg.run.iou_include_known);
  report["iou_resolution"] = cfg.run.iou_resolution;
  if (!o.policy.empty()) {
    const PolicyModel policy = load_policy(o.policy);
    const std::size_t episodes = o.episodes ? *o.episodes : cfg.run.eval_episodes;
    nn::Rng rng = derived_rng(first_seed(cfg, o), 1u << 20);
    const ViolationReport v = metric_violation(policy, cfg.run.env, episodes, rng);
    report["violation_rate"] = v.violation_rate;
    report["mean_return"] = v.mean_return;
    report["episodes"] = episodes;
  } else {
    report["violation_rate"] = nullptr;
    report["mean_return"] = nullptr;
    report["episodes"] = 0;
  }
  const std::string text = report.dump(2);
  std::cout << text << '\n';
  if (!o.out.empty()) write_json_file(o.out, report);
  return kExitOk;
}

int cmd_export_grid(const Options& o) {
  if (o.resolution <= 0) throw UsageError("--resolution must be positive");
  Box box;
  if (!o.bounds.empty()) {
    if (o.bounds.size() != 4 || !(o.bounds[0] < o.bounds[1]) || !(o.bounds[2] < o.bounds[3])) {
      throw UsageError("--bounds takes x_min x_max y_min y_max with min < max");
    }
    box = {o.bounds[0], o.bounds[1], o.bounds[2], o.bounds[3]};
  }
  const ConstraintModel model = load_constraint(o.constraint);
  const auto grid = evaluate_grid(model, box, static_cast<std::size_t>(o.resolution));
  if (o.out.empty() || o.out == "-") {
    write_grid(std::cout, grid);
  } else {
    const fs::path out(o.out);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out.string());
    write_grid(f, grid);
  }
  return kExitOk;
}

int cmd_preset(const Options& o) {
  const ExperimentConfig cfg = preset_experiment(env_kind_from_string(o.preset));
  if (o.out.empty()) std::cout << to_json(cfg).dump(2) << '\n';
  else write_json_file(o.out, to_json(cfg));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constraint inference from demonstrations via positive-unlabeled learning"};
  app.require_subcommand(1);
  Options o;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", o.seed, "Seed (default: first config seed)"); };

  auto* gen = app.add_subcommand("gen-expert", "Train an expert on the true constraint and dump demonstrations");
  gen->add_option("--config", o.config, "Experiment config")->required();
  gen->add_option("--out", o.out, "Demo file (default: <output_dir>/demos.csv)");
  add_seed(gen);

  auto* train = app.add_subcommand("train", "Run constraint inference from a demo file");
  train->add_option("--config", o.config, "Experiment config")->required();
  train->add_option("--demos", o.demos, "Demo file from gen-expert")->required();
  train->add_option("--out", o.out, "Run directory (default: config output_dir)");
  train->add_option("--iterations", o.iterations, "Override the iteration budget");
  train->add_flag("--no-cmr", o.no_cmr, "Disable constraint memory replay");
  train->add_flag("--no-filter", o.no_filter, "Disable the policy filter");
  train->add_flag("--final-only", o.final_only, "Only snapshot the final iteration");
  train->add_option("--seed", o.seed, "Run a single seed into --out (default: every config seed)");

  auto* eval = app.add_subcommand("evaluate", "Compute IoU and violation rate for snapshots");
  eval->add_option("--config", o.config, "Experiment config")->required();
  eval->add_option("--constraint", o.constraint, "Constraint snapshot")->required();
  eval->add_option("--policy", o.policy, "Policy snapshot for the violation rate");
  eval->add_option("--episodes", o.episodes, "Evaluation episodes (default: config eval_episodes)");
  eval->add_option("--out", o.out, "Also write the report here");
  add_seed(eval);

  auto* grid = app.add_subcommand("export-grid", "Write the zeta lattice of a constraint snapshot");
  grid->add_option("--constraint", o.constraint, "Constraint snapshot")->required();
  grid->add_option("--resolution", o.resolution, "Points per axis");
  grid->add_option("--bounds", o.bounds, "x_min x_max y_min y_max")->expected(4);
  grid->add_option("--out", o.out, "Grid file (default: stdout)");

  auto* preset = app.add_subcommand("preset", "Print a shipped experiment preset");
  preset->add_option("env", o.preset, "circle or obstacle")->required();
  preset->add_option("--out", o.out, "Write to this file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_expert(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_evaluate(o);
    if (*grid) return cmd_export_grid(o);
    if (*preset) return cmd_preset(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
