// Command-line front end: gen-demos, train, rollout, eval, sweep-demos.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpd/env/dataset.hpp"
#include "mpd/harness/run.hpp"
#include "mpd/metrics/metrics.hpp"
#include "mpd/policy/policy.hpp"

namespace fs = std::filesystem;
using namespace mpd;
using denoiser::Checkpoint;
using harness::RunConfig;

namespace {

struct Globals {
  std::string config;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 0;
};

// The first line of a message, so every diagnostic stays on one line.
std::string one_line(std::string s) {
  const auto nl = s.find('\n');
  if (nl != std::string::npos) s.resize(nl);
  return s;
}

RunConfig resolve(const Globals& g) {
  std::optional<Json> overrides;
  if (!g.config.empty()) overrides = harness::read_json_file(g.config);
  RunConfig c = harness::resolve_config(g.preset, overrides);
  if (g.jobs > 0) c.jobs = g.jobs;
  return c;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw UsageError("--out is required");
  fs::create_directories(g.out);
  return g.out;
}

void save_config(const fs::path& dir, const RunConfig& c) { harness::write_json_file(dir / "config.json", harness::to_json(c)); }

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw UsageError("bad seed '" + item + "' in --seeds");
    }
  if (out.empty()) throw UsageError("--seeds must list at least one seed");
  return out;
}

// The dataset decides the task.
env::Dataset load_data(const std::string& dir, RunConfig& c) {
  if (dir.empty()) throw UsageError("--data is required");
  env::Dataset ds = env::read_dataset(dir);
  if (std::abs(ds.dt - c.model.policy.dt_low) > 1e-12) throw ConfigError("dataset dt differs from policy.dt_low");
  c.task = ds.task;
  return ds;
}

int cmd_gen_demos(const Globals& g, std::optional<std::string> task, std::optional<int> count) {
  RunConfig c = resolve(g);
  if (task) c.task = *task;
  if (count) {
    if (*count < 1) throw UsageError("--count must be >= 1");
    c.demo_count = *count;
  }
  if (g.seed) c.demo_seed = *g.seed;
  c.validate();
  const fs::path out = require_out(g);
  const auto demos = harness::generate_demonstrations(c);
  env::write_dataset(out, env::make_dataset(c.task, demos, c.demos.dt_low));
  save_config(out, c);
  std::cout << "wrote " << demos.size() << " " << c.task << " demonstrations to " << out.string() << '\n';
  return 0;
}

void write_train_summary(const fs::path& file, const std::vector<harness::SeedRun>& runs) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "seed,best_epoch,best_success,final_loss\n";
  for (const auto& r : runs)
    out << r.seed << ',' << r.result.best_epoch << ',' << env::format_number(r.result.best_success) << ','
        << env::format_number(r.result.log.empty() ? 0.0 : r.result.log.back().loss) << '\n';
}

int cmd_train(const Globals& g, const std::string& data, std::optional<std::string> variant, const std::string& seeds,
              std::optional<int> epochs, bool resume) {
  RunConfig c = resolve(g);
  const env::Dataset ds = load_data(data, c);
  if (variant) c.model.arch.variant = variant_from_string(*variant);
  if (!seeds.empty()) c.seeds = parse_seeds(seeds);
  else if (g.seed) c.seeds = {*g.seed};
  if (epochs) c.train.epochs = *epochs;
  c.validate();
  const fs::path out = require_out(g);
  save_config(out, c);
  const auto runs = harness::train_seeds(ds, c, out, resume);
  write_train_summary(out / "summary.csv", runs);
  for (const auto& r : runs)
    std::cout << "seed " << r.seed << ": best success " << r.result.best_success << " at epoch " << r.result.best_epoch
              << '\n';
  return 0;
}

int cmd_rollout(const Globals& g, const std::string& checkpoint, int count) {
  RunConfig c = resolve(g);
  if (checkpoint.empty()) throw UsageError("--checkpoint is required");
  if (count < 1) throw UsageError("--count must be >= 1");
  const Checkpoint ck = denoiser::load_checkpoint(checkpoint);
  c.task = ck.task;
  c.eval.n_rollouts = count;
  if (g.seed) c.eval.seed = *g.seed;
  c.validate();
  const fs::path out = require_out(g);
  save_config(out, c);
  const harness::PolicyEval e = harness::evaluate_checkpoint(ck, c, to_string(ck.params.arch.variant));
  std::ofstream summary(out / "rollouts.csv");
  summary << "rollout,success,steps,final_error\n";
  for (size_t i = 0; i < e.result.traces.size(); ++i) {
    const auto& t = e.result.traces[i];
    char name[32];
    std::snprintf(name, sizeof name, "trace_%03zu.csv", i);
    policy::write_trace_csv(out / name, t);
    summary << i << ',' << (t.steps_within(c.eval.success_threshold) > 0 ? 1 : 0) << ',' << t.steps << ','
            << env::format_number(t.errors.empty() ? 0.0 : t.errors.back()) << '\n';
  }
  std::cout << "success " << e.result.primary_success << " over " << count << " rollouts\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& data, const std::vector<std::string>& checkpoints) {
  RunConfig c = resolve(g);
  const env::Dataset ds = load_data(data, c);
  if (g.seed) c.eval.seed = *g.seed;
  c.validate();
  const fs::path out = require_out(g);
  save_config(out, c);

  const auto demo_reports = harness::demonstration_metrics(harness::replay_demonstrator(ds, c.demos));
  const metrics::MetricsReport reference = metrics::aggregate(demo_reports).mean;
  metrics::write_metrics_csv(out / "metrics_demonstrator.csv",
                             metrics::metrics_table(demo_reports, reference, "episode_"));

  std::vector<harness::PolicyEval> evals;
  for (size_t i = 0; i < checkpoints.size(); ++i) {
    const Checkpoint ck = denoiser::load_checkpoint(checkpoints[i]);
    if (ck.task != ds.task) throw ConfigError("checkpoint " + checkpoints[i] + " is for task '" + ck.task + "'");
    const std::string label = to_string(ck.params.arch.variant) + "_" + std::to_string(i);
    evals.push_back(harness::evaluate_checkpoint(ck, c, label));
    metrics::write_metrics_csv(out / ("metrics_" + label + ".csv"), metrics::metrics_table(evals.back().reports, reference));
  }
  harness::write_success_curve_csv(out / "success_curve.csv", evals);

  harness::write_comparison_csv(out / "comparison.csv", evals, reference);
  for (const auto& e : evals) {
    std::cout << e.label << ": success " << e.result.primary_success << '\n';
  }
  return 0;
}

int cmd_sweep(const Globals& g, const std::string& data, const std::string& seeds) {
  RunConfig c = resolve(g);
  const env::Dataset ds = load_data(data, c);
  if (!seeds.empty()) c.seeds = parse_seeds(seeds);
  else if (g.seed) c.seeds = {*g.seed};
  c.validate();
  const fs::path out = require_out(g);
  save_config(out, c);
  const auto rows = harness::sweep_demos(ds, c, out);
  harness::write_sweep_csv(out / "sweep.csv", rows);
  for (const auto& r : rows) std::cout << to_string(r.variant) << " " << r.count << ": " << r.success.mean << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"diffusion policies over movement primitives"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON file overriding the preset")->option_text("<json>");
  app.add_option("--preset", g.preset, "default, desk or smoke");
  app.add_option("--seed", g.seed, "seed for the command");
  app.add_option("--out", g.out, "output directory");
  app.add_option("--jobs", g.jobs, "worker threads for per-seed work");

  std::optional<std::string> task;
  std::optional<int> count;
  auto* gen = app.add_subcommand("gen-demos", "generate scripted demonstrations");
  gen->add_option("--task", task, "lattice or obstacle");
  gen->add_option("--count", count, "number of episodes");

  std::string data, seeds;
  std::optional<std::string> variant;
  std::optional<int> epochs;
  bool resume = false;
  auto* tr = app.add_subcommand("train", "train one variant for every seed");
  tr->add_option("--data", data, "dataset directory");
  tr->add_option("--variant", variant, "mpd, baseline or regression");
  tr->add_option("--seeds", seeds, "comma-separated seed list");
  tr->add_option("--epochs", epochs, "training epochs");
  tr->add_flag("--resume", resume, "continue from each seed's snapshot");

  std::string checkpoint;
  int rollouts = 1;
  auto* ro = app.add_subcommand("rollout", "run a checkpoint and write traces");
  ro->add_option("--checkpoint", checkpoint, "checkpoint file");
  ro->add_option("--count", rollouts, "number of rollouts");

  std::vector<std::string> checkpoints;
  auto* ev = app.add_subcommand("eval", "success curves and metrics against the demonstrations");
  ev->add_option("--data", data, "dataset directory (demonstrator reference)");
  ev->add_option("--checkpoint", checkpoints, "checkpoint files to compare");

  auto* sw = app.add_subcommand("sweep-demos", "success over the number of demonstrations");
  sw->add_option("--data", data, "dataset directory");
  sw->add_option("--seeds", seeds, "comma-separated seed list");

  // Global flags are accepted after the subcommand as well.
  for (auto* sub : {gen, tr, ro, ev, sw}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mpd: usage error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (*gen) return cmd_gen_demos(g, task, count);
    if (*tr) return cmd_train(g, data, variant, seeds, epochs, resume);
    if (*ro) return cmd_rollout(g, checkpoint, rollouts);
    if (*ev) return cmd_eval(g, data, checkpoints);
    if (*sw) return cmd_sweep(g, data, seeds);
  } catch (const UsageError& e) {
    std::cerr << "mpd: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mpd: error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}
