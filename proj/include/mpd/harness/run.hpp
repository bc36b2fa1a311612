#pragma once

#include <algorithm>
#include <cmath>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mpd/config_json.hpp"
#include "mpd/denoiser/checkpoint.hpp"
#include "mpd/env/dataset.hpp"
#include "mpd/env/demos.hpp"
#include "mpd/error.hpp"
#include "mpd/harness/training.hpp"
#include "mpd/metrics/metrics.hpp"
#include "mpd/policy/policy.hpp"
#include "mpd/random.hpp"

namespace mpd::harness {

struct EvalSettings {
  int n_rollouts = 100;
  int max_steps = 60;
  std::vector<double> thresholds{0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10};
  double success_threshold = 0.05;
  std::uint64_t seed = 7;
};

struct SweepSettings {
  std::vector<int> counts{30, 60, 90, 120, 150};
  std::uint64_t shuffle_seed = 0;
  std::vector<Variant> variants{Variant::kMpd, Variant::kBaseline};
};

// Everything one experiment needs. model.arch.variant selects the trained variant.
struct RunConfig {
  std::string task = "lattice";
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int demo_count = 150;
  std::uint64_t demo_seed = 0;
  env::DemoConfig demos;
  EvalSettings eval;
  SweepSettings sweep;
  int jobs = 1;  // worker threads for per-seed training

  void validate() const {
    env::task_defaults(task);
    if (seeds.empty()) throw ConfigError("seed list must not be empty");
    if (demo_count < 1) throw ConfigError("demo count must be >= 1");
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (eval.n_rollouts < 0) throw ConfigError("eval n_rollouts must be >= 0");
    if (sweep.counts.empty()) throw ConfigError("sweep counts must not be empty");
    for (int c : sweep.counts)
      if (c < 1) throw ConfigError("sweep counts must be >= 1");
    train.validate();
    model.policy.validate();
    model.noise.validate();
    if (std::abs(demos.dt_low - model.policy.dt_low) > 1e-12) throw ConfigError("demos.dt_low must equal policy.dt_low");
  }
};

// ---------------------------------------------------------------------------
// JSON

using mpd::overlay_json;
using mpd::to_json;

inline Json to_json(const policy::PolicyConfig& c) {
  return {{"horizon", c.horizon}, {"history", c.history}, {"dt_low", c.dt_low}, {"dt_high", c.dt_high},
          {"execute_steps", c.execute_steps}, {"n_sample_steps", c.n_sample_steps}};
}

inline void overlay_json(const Json& j, policy::PolicyConfig& c) {
  detail::reject_unknown(j, {"horizon", "history", "dt_low", "dt_high", "execute_steps", "n_sample_steps"}, "policy");
  detail::overlay(j, "horizon", c.horizon);
  detail::overlay(j, "history", c.history);
  detail::overlay(j, "dt_low", c.dt_low);
  detail::overlay(j, "dt_high", c.dt_high);
  detail::overlay(j, "execute_steps", c.execute_steps);
  detail::overlay(j, "n_sample_steps", c.n_sample_steps);
}

inline Json to_json(const env::DemoConfig& c) {
  return {{"dt_low", c.dt_low},           {"success_threshold", c.success_threshold},
          {"max_steps", c.max_steps},     {"max_attempts", c.max_attempts},
          {"waypoint_noise", c.waypoint_noise}, {"lattice_bow", c.lattice_bow},
          {"obstacle_bow", c.obstacle_bow}, {"bow_jitter", c.bow_jitter}};
}

inline void overlay_json(const Json& j, env::DemoConfig& c) {
  detail::reject_unknown(j, {"count", "seed", "dt_low", "success_threshold", "max_steps", "max_attempts",
                             "waypoint_noise", "lattice_bow", "obstacle_bow", "bow_jitter"},
                         "demos");
  detail::overlay(j, "dt_low", c.dt_low);
  detail::overlay(j, "success_threshold", c.success_threshold);
  detail::overlay(j, "max_steps", c.max_steps);
  detail::overlay(j, "max_attempts", c.max_attempts);
  detail::overlay(j, "waypoint_noise", c.waypoint_noise);
  detail::overlay(j, "lattice_bow", c.lattice_bow);
  detail::overlay(j, "obstacle_bow", c.obstacle_bow);
  detail::overlay(j, "bow_jitter", c.bow_jitter);
}

inline Json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"eval_every", c.eval_every},
          {"eval_rollouts", c.eval_rollouts},
          {"max_steps", c.max_steps},
          {"success_threshold", c.success_threshold},
          {"checkpoint_every", c.checkpoint_every},
          {"ema_decay", c.ema_decay},
          {"optimizer", to_json(c.optimizer)}};
}

inline void overlay_json(const Json& j, TrainConfig& c) {
  detail::reject_unknown(j, {"epochs", "batch_size", "eval_every", "eval_rollouts", "max_steps", "success_threshold",
                             "checkpoint_every", "ema_decay", "optimizer"},
                         "train");
  detail::overlay(j, "epochs", c.epochs);
  detail::overlay(j, "batch_size", c.batch_size);
  detail::overlay(j, "eval_every", c.eval_every);
  detail::overlay(j, "eval_rollouts", c.eval_rollouts);
  detail::overlay(j, "max_steps", c.max_steps);
  detail::overlay(j, "success_threshold", c.success_threshold);
  detail::overlay(j, "checkpoint_every", c.checkpoint_every);
  detail::overlay(j, "ema_decay", c.ema_decay);
  if (j.contains("optimizer")) overlay_json(j.at("optimizer"), c.optimizer);
}

inline Json to_json(const RunConfig& c) {
  Json variants = Json::array();
  for (Variant v : c.sweep.variants) variants.push_back(to_string(v));
  Json demos = to_json(c.demos);
  demos["count"] = c.demo_count;
  demos["seed"] = c.demo_seed;
  return {{"task", c.task},
          {"variant", to_string(c.model.arch.variant)},
          {"seeds", c.seeds},
          {"jobs", c.jobs},
          {"demos", demos},
          {"hidden", c.model.arch.hidden},
          {"prodmp", {{"n_basis", c.model.prodmp.n_basis},
                      {"alpha", c.model.prodmp.alpha},
                      {"duration", c.model.prodmp.duration},
                      {"alpha_phase", c.model.prodmp.alpha_phase},
                      {"grid_dt", c.model.prodmp.grid_dt},
                      {"basis_width", c.model.prodmp.basis_width}}},
          {"noise", to_json(c.model.noise)},
          {"policy", to_json(c.model.policy)},
          {"train", to_json(c.train)},
          {"eval", {{"n_rollouts", c.eval.n_rollouts},
                    {"max_steps", c.eval.max_steps},
                    {"thresholds", c.eval.thresholds},
                    {"success_threshold", c.eval.success_threshold},
                    {"seed", c.eval.seed}}},
          {"sweep", {{"counts", c.sweep.counts}, {"shuffle_seed", c.sweep.shuffle_seed}, {"variants", variants}}}};
}

inline void overlay_json(const Json& j, RunConfig& c) {
  detail::reject_unknown(j, {"preset", "task", "variant", "seeds", "jobs", "demos", "hidden", "prodmp", "noise",
                             "policy", "train", "eval", "sweep"},
                         "run config");
  detail::overlay(j, "task", c.task);
  if (j.contains("variant")) c.model.arch.variant = variant_from_string(j.at("variant").get<std::string>());
  detail::overlay(j, "seeds", c.seeds);
  detail::overlay(j, "jobs", c.jobs);
  if (j.contains("demos")) {
    const Json& d = j.at("demos");
    overlay_json(d, c.demos);
    detail::overlay(d, "count", c.demo_count);
    detail::overlay(d, "seed", c.demo_seed);
  }
  detail::overlay(j, "hidden", c.model.arch.hidden);
  if (j.contains("prodmp")) {
    // Dimensions follow the task; only the shape parameters are configurable.
    Json p = j.at("prodmp");
    if (p.contains("dof")) throw ConfigError("prodmp.dof follows the task and cannot be set");
    overlay_json(p, c.model.prodmp);
  }
  if (j.contains("noise")) overlay_json(j.at("noise"), c.model.noise);
  if (j.contains("policy")) overlay_json(j.at("policy"), c.model.policy);
  if (j.contains("train")) overlay_json(j.at("train"), c.train);
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    detail::reject_unknown(e, {"n_rollouts", "max_steps", "thresholds", "success_threshold", "seed"}, "eval");
    detail::overlay(e, "n_rollouts", c.eval.n_rollouts);
    detail::overlay(e, "max_steps", c.eval.max_steps);
    detail::overlay(e, "thresholds", c.eval.thresholds);
    detail::overlay(e, "success_threshold", c.eval.success_threshold);
    detail::overlay(e, "seed", c.eval.seed);
  }
  if (j.contains("sweep")) {
    const Json& s = j.at("sweep");
    detail::reject_unknown(s, {"counts", "shuffle_seed", "variants"}, "sweep");
    detail::overlay(s, "counts", c.sweep.counts);
    detail::overlay(s, "shuffle_seed", c.sweep.shuffle_seed);
    if (s.contains("variants")) {
      c.sweep.variants.clear();
      for (const auto& v : s.at("variants")) c.sweep.variants.push_back(variant_from_string(v.get<std::string>()));
    }
  }
}

// ---------------------------------------------------------------------------
// Presets

// "default" keeps the documented defaults. "desk" is the tuned desk-scale
// recipe used by the acceptance experiments. "smoke" is a seconds-long version
// of the full pipeline.
inline RunConfig preset(const std::string& name) {
  RunConfig c;
  if (name == "default") return c;
  if (name != "desk" && name != "smoke") throw ConfigError("unknown preset '" + name + "' (default, desk, smoke)");
  c.model.noise.weighting = diffusion::LossWeighting::kBalanced;
  c.model.arch.hidden = {128, 128, 128};
  c.train.optimizer.learning_rate = 3e-4;
  c.train.ema_decay = 0.999;
  c.train.epochs = 1000;
  c.train.eval_every = 250;
  c.train.eval_rollouts = 30;
  if (name == "smoke") {
    c.seeds = {0, 1};
    c.demo_count = 12;
    c.model.arch.hidden = {32, 32};
    c.train.optimizer.learning_rate = 1e-3;
    c.train.epochs = 200;
    c.train.eval_every = 100;
    c.train.eval_rollouts = 10;
    c.eval.n_rollouts = 10;
    c.sweep.counts = {4, 8, 12};
  }
  return c;
}

inline RunConfig resolve_config(const std::string& preset_name, const std::optional<Json>& overrides) {
  std::string name = preset_name;
  if (overrides && overrides->contains("preset") && name.empty()) name = overrides->at("preset").get<std::string>();
  RunConfig c = preset(name.empty() ? "default" : name);
  if (overrides) overlay_json(*overrides, c);
  c.validate();
  return c;
}

inline Json read_json_file(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config " + file.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& file, const Json& j) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Orchestration

// Runs f(0..n-1) on up to `jobs` threads. Results must be written by index;
// the first failure by index is rethrown.
template <typename F>
void parallel_for(int n, int jobs, F&& f) {
  std::vector<std::exception_ptr> errors(static_cast<size_t>(std::max(n, 0)));
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[static_cast<size_t>(i)] = std::current_exception();
      }
    }
  };
  const int workers = std::clamp(jobs, 1, std::max(n, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline std::vector<env::DemoResult> generate_demonstrations(const RunConfig& c) {
  return env::generate_demos(c.task, c.demo_count, c.demo_seed, c.demos);
}

// Re-runs the demonstrator for every stored episode (seed and mode are in the
// manifest) to recover its high-rate commands.
inline std::vector<env::DemoResult> replay_demonstrator(const env::Dataset& ds, const env::DemoConfig& cfg) {
  std::vector<env::DemoResult> out;
  for (const auto& e : ds.episodes) {
    env::DemoResult d = env::scripted_demo(ds.task, e.mode, e.seed, cfg);
    if (d.episode.actions != e.actions)
      throw DatasetError("episode with seed " + std::to_string(e.seed) + " does not match the demonstrator");
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<metrics::MetricsReport> demonstration_metrics(const std::vector<env::DemoResult>& demos) {
  std::vector<metrics::MetricsReport> r;
  for (const auto& d : demos) r.push_back(metrics::motion_metrics(d.episode, d.trace));
  return r;
}

struct SeedRun {
  std::uint64_t seed = 0;
  TrainResult result;
};

inline std::filesystem::path seed_dir(const std::filesystem::path& root, std::uint64_t seed) {
  return root / ("seed_" + std::to_string(seed));
}

inline void write_train_log(const std::filesystem::path& file, const std::vector<EpochLog>& log) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "epoch,loss,success\n";
  for (const auto& l : log) {
    out << l.epoch << ',' << env::format_number(l.loss) << ',';
    if (l.success) out << env::format_number(*l.success);
    out << '\n';
  }
}

inline std::vector<EpochLog> read_train_log(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read " + file.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochLog> log;
  while (std::getline(in, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw Error("malformed training log " + file.string());
    EpochLog l{std::stoi(line.substr(0, a)), std::strtod(line.substr(a + 1, b - a - 1).c_str(), nullptr), std::nullopt};
    if (b + 1 < line.size()) l.success = std::strtod(line.substr(b + 1).c_str(), nullptr);
    log.push_back(l);
  }
  return log;
}

// Trains every configured seed. With `root`, each seed writes best.ckpt,
// last.ckpt, a resumable snapshot.ckpt and train_log.csv under seed_<s>/; with
// `resume`, a seed whose snapshot exists continues from it.
inline std::vector<SeedRun> train_seeds(const env::Dataset& ds, const RunConfig& c,
                                        const std::optional<std::filesystem::path>& root = std::nullopt,
                                        bool resume = false) {
  std::vector<SeedRun> runs(c.seeds.size());
  parallel_for(static_cast<int>(c.seeds.size()), c.jobs, [&](int i) {
    const std::uint64_t seed = c.seeds[static_cast<size_t>(i)];
    std::optional<Checkpoint> start;
    std::vector<EpochLog> earlier;
    TrainHooks hooks;
    std::filesystem::path dir;
    if (root) {
      dir = seed_dir(*root, seed);
      std::filesystem::create_directories(dir);
      if (resume && std::filesystem::exists(dir / "snapshot.ckpt")) {
        start = denoiser::load_checkpoint(dir / "snapshot.ckpt");
        for (const auto& l : read_train_log(dir / "train_log.csv"))
          if (l.epoch <= start->epoch) earlier.push_back(l);
      }
      hooks.on_snapshot = [dir](const Checkpoint& ck) { denoiser::save_checkpoint(dir / "snapshot.ckpt", ck); };
    }
    TrainResult r = train(ds, c.model, c.train, seed, start, hooks);
    r.log.insert(r.log.begin(), earlier.begin(), earlier.end());
    if (root) {
      denoiser::save_checkpoint(dir / "best.ckpt", r.best);
      Checkpoint last = r.last;
      last.optimizer.reset();
      last.training_parameters.reset();
      denoiser::save_checkpoint(dir / "last.ckpt", last);
      write_train_log(dir / "train_log.csv", r.log);
    }
    runs[static_cast<size_t>(i)] = {seed, std::move(r)};
  });
  return runs;
}

struct PolicyEval {
  std::string label;
  Variant variant = Variant::kMpd;
  policy::EvalResult result;
  std::vector<metrics::MetricsReport> reports;  // per rollout at the primary threshold
};

inline policy::EvalConfig eval_config(const EvalSettings& s) {
  policy::EvalConfig ec;
  ec.n_rollouts = s.n_rollouts;
  ec.max_steps = s.max_steps;
  ec.thresholds = s.thresholds;
  ec.success_threshold = s.success_threshold;
  ec.seed = s.seed;
  return ec;
}

inline PolicyEval evaluate_planner(const std::string& task, policy::Planner& planner, Variant v, const std::string& label,
                                   const policy::PolicyConfig& pc, const EvalSettings& s) {
  PolicyEval out{label, v, policy::evaluate(task, planner, pc, eval_config(s)), {}};
  for (const auto& t : out.result.traces)
    out.reports.push_back(metrics::motion_metrics(t, pc.dt_low, s.max_steps, s.success_threshold));
  return out;
}

inline PolicyEval evaluate_checkpoint(const Checkpoint& ck, const RunConfig& c, const std::string& label) {
  policy::ModelPlanner planner(ck, c.model.policy);
  return evaluate_planner(ck.task, planner, ck.params.arch.variant, label, c.model.policy, c.eval);
}

// Side on which an obstacle rollout passes the disk: mode A above the line
// through its centre (left when travelling +x), B below. Empty when the
// tracked point never crosses the centre's x coordinate.
inline std::optional<env::DemoMode> obstacle_side(const policy::RolloutTrace& t, double center_x = 0.0,
                                                  double center_y = 0.0) {
  const Eigen::MatrixXd& p = t.exec.tracked;
  if (p.cols() < 2) throw DimensionError("obstacle traces track one 2-d point");
  for (Eigen::Index h = 1; h < p.rows(); ++h)
    if (p(h - 1, 0) < center_x && p(h, 0) >= center_x) return p(h, 1) > center_y ? env::DemoMode::kA : env::DemoMode::kB;
  return std::nullopt;
}

// Summary over seeds of the best-checkpoint success on the evaluation settings.
struct SuccessSummary {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> per_seed;
};

inline SuccessSummary summarize(const std::vector<double>& v) {
  SuccessSummary s;
  s.per_seed = v;
  if (v.empty()) return s;
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  return s;
}

struct SweepRow {
  Variant variant;
  int count = 0;
  SuccessSummary success;
};

// The dataset is shuffled once; every count trains on a prefix of that order,
// so smaller sets are nested in larger ones.
inline env::Dataset shuffled_once(const env::Dataset& ds, std::uint64_t shuffle_seed) {
  env::Dataset out = ds;
  Rng rng = make_stream(shuffle_seed, {0x5eeb});
  std::shuffle(out.episodes.begin(), out.episodes.end(), rng);
  return out;
}

inline std::vector<SweepRow> sweep_demos(const env::Dataset& ds, const RunConfig& c,
                                         const std::optional<std::filesystem::path>& root = std::nullopt) {
  const env::Dataset order = shuffled_once(ds, c.sweep.shuffle_seed);
  for (int n : c.sweep.counts)
    if (n > order.size())
      throw ConfigError("sweep count " + std::to_string(n) + " exceeds the " + std::to_string(order.size()) +
                        " available demonstrations");
  std::vector<SweepRow> rows;
  for (Variant v : c.sweep.variants) {
    for (int n : c.sweep.counts) {
      RunConfig rc = c;
      rc.model.arch.variant = v;
      std::optional<std::filesystem::path> dir;
      if (root) dir = *root / (to_string(v) + "_" + std::to_string(n));
      const auto runs = train_seeds(order.prefix(n), rc, dir);
      std::vector<double> success(runs.size());
      parallel_for(static_cast<int>(runs.size()), c.jobs, [&](int i) {
        success[static_cast<size_t>(i)] = evaluate_checkpoint(runs[static_cast<size_t>(i)].result.best, rc, "").result.primary_success;
      });
      rows.push_back({v, n, summarize(success)});
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV exports

inline void write_sweep_csv(const std::filesystem::path& file, const std::vector<SweepRow>& rows) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "variant,count,success_mean,success_min,success_max\n";
  for (const auto& r : rows)
    out << to_string(r.variant) << ',' << r.count << ',' << env::format_number(r.success.mean) << ','
        << env::format_number(r.success.min) << ',' << env::format_number(r.success.max) << '\n';
}

// label,variant,threshold,success_rate: one curve per evaluated policy.
inline void write_success_curve_csv(const std::filesystem::path& file, const std::vector<PolicyEval>& evals) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "label,variant,threshold,success_rate\n";
  for (const auto& e : evals)
    for (size_t k = 0; k < e.result.thresholds.size(); ++k)
      out << e.label << ',' << to_string(e.variant) << ',' << env::format_number(e.result.thresholds[k]) << ','
          << env::format_number(e.result.success_rate[k]) << '\n';
}

// A demonstrator row, then one row per policy: primary success and mean
// metrics, raw and normalized by the demonstrator reference.
inline void write_comparison_csv(const std::filesystem::path& file, const std::vector<PolicyEval>& evals,
                                 const metrics::MetricsReport& reference) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "label,variant,success";
  for (const char* n : metrics::MetricsReport::kNames) out << ',' << n;
  for (const char* n : metrics::MetricsReport::kNames) out << ",normalized_" << n;
  out << '\n';
  auto row = [&](const std::string& label, const std::string& variant, double success, const metrics::MetricsReport& m) {
    out << label << ',' << variant << ',' << env::format_number(success);
    for (double v : m.values()) out << ',' << env::format_number(v);
    for (double v : metrics::normalize_report(m, reference).ratio.values()) out << ',' << env::format_number(v);
    out << '\n';
  };
  row("demonstrator", "demonstrator", 1.0, reference);
  for (const auto& e : evals)
    row(e.label, to_string(e.variant), e.result.primary_success,
        e.reports.empty() ? metrics::MetricsReport{} : metrics::aggregate(e.reports).mean);
}

}  // namespace mpd::harness
