#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/config_json.hpp"
#include "mpd/denoiser/adamw.hpp"
#include "mpd/denoiser/checkpoint.hpp"
#include "mpd/denoiser/params.hpp"
#include "mpd/diffusion/model.hpp"
#include "mpd/env/dataset.hpp"
#include "mpd/env/tasks.hpp"
#include "mpd/error.hpp"
#include "mpd/policy/policy.hpp"
#include "mpd/random.hpp"

namespace mpd::harness {

using denoiser::Checkpoint;
using diffusion::TrainingSample;

// Model-facing training set in normalized units.
struct TrainingSet {
  std::vector<TrainingSample> samples;
  std::vector<Eigen::VectorXd> weight_targets;  // regression variant only
  denoiser::NormStats action_norm;
  denoiser::NormStats obs_norm;
};

// One sample per recorded step i of every episode:
//   actions      a_i .. a_{i+n-1} (padded with the final action),
//   observations o_{i-m+1} .. o_i (padded with the first observation),
//   boundary     position a_i, velocity by central difference of the actions
//                (zero at the first step, backward difference at the last).
inline TrainingSet make_training_set(const env::Dataset& ds, const denoiser::Architecture& arch,
                                     const diffusion::ModelContext& ctx, double ridge = 1e-6) {
  ds.validate();
  if (ds.episodes.empty()) throw DatasetError("cannot train on an empty dataset");
  if (ds.dof != arch.dof || ds.obs_dim != arch.obs_dim) throw DimensionError("dataset dims do not match architecture");
  TrainingSet set;
  set.action_norm = denoiser::NormStats::from_samples(ds.stacked_actions());
  set.obs_norm = denoiser::NormStats::from_samples(ds.stacked_observations());
  const double dt = ds.dt;
  for (const auto& e : ds.episodes) {
    const Eigen::MatrixXd act = set.action_norm.normalize_rows(e.actions);
    const Eigen::MatrixXd obs = set.obs_norm.normalize_rows(e.observations);
    const Eigen::Index n_steps = act.rows();
    for (Eigen::Index i = 0; i < n_steps; ++i) {
      TrainingSample s;
      s.actions.resize(arch.horizon, arch.dof);
      for (int j = 0; j < arch.horizon; ++j) s.actions.row(j) = act.row(std::min<Eigen::Index>(i + j, n_steps - 1));
      s.observations.resize(arch.history, arch.obs_dim);
      for (int r = 0; r < arch.history; ++r)
        s.observations.row(r) = obs.row(std::max<Eigen::Index>(0, i - arch.history + 1 + r));
      Eigen::VectorXd vel = Eigen::VectorXd::Zero(arch.dof);
      if (i > 0 && i + 1 < n_steps) vel = (act.row(i + 1) - act.row(i - 1)).transpose() / (2.0 * dt);
      else if (i > 0) vel = (act.row(i) - act.row(i - 1)).transpose() / dt;
      s.boundary = {act.row(i).transpose(), vel, 0.0};
      if (arch.variant == Variant::kRegression) {
        const prodmp::ActionSequence seq{dt, 0.0, s.actions};
        set.weight_targets.push_back(prodmp::encode_least_squares(ctx.basis, seq, s.boundary, ridge).values());
      }
      set.samples.push_back(std::move(s));
    }
  }
  return set;
}

struct TrainConfig {
  int epochs = 3000;
  int batch_size = 64;
  denoiser::AdamWConfig optimizer;
  int eval_every = 100;
  int eval_rollouts = 100;
  int max_steps = 60;
  double success_threshold = 0.05;
  int checkpoint_every = 100;  // epochs between resumable snapshots (0: only at evaluations)
  double ema_decay = 0.0;      // > 0 evaluates and stores a moving average of the weights

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_every < 1 || epochs < eval_every) throw ConfigError("need 1 <= eval_every <= epochs");
    if (eval_rollouts < 0) throw ConfigError("eval_rollouts must be >= 0");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must be in [0, 1)");
  }
};

// Model-side settings shared by training and policy construction.
struct ModelConfig {
  denoiser::Architecture arch;
  prodmp::ProDMPConfig prodmp;
  diffusion::NoiseConfig noise;
  policy::PolicyConfig policy;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> success;  // present on evaluation epochs
};

struct TrainResult {
  Checkpoint best;
  Checkpoint last;
  double best_success = -1.0;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

inline Checkpoint checkpoint_from(const std::string& task, const ModelConfig& mc, const denoiser::DenoiserParams& params,
                                  int epoch, std::uint64_t seed) {
  Checkpoint ck;
  ck.task = task;
  ck.params = params;
  ck.prodmp = mc.prodmp;
  ck.noise = mc.noise;
  ck.dt_low = mc.policy.dt_low;
  ck.dt_high = mc.policy.dt_high;
  ck.epoch = epoch;
  ck.seed = seed;
  return ck;
}

// Success rate of `ck` on evaluation rollouts drawn from `eval_seed`.
inline double quick_success(const Checkpoint& ck, const ModelConfig& mc, int rollouts, int max_steps,
                            double threshold, std::uint64_t eval_seed) {
  policy::ModelPlanner planner(ck, mc.policy);
  policy::EvalConfig ec;
  ec.n_rollouts = rollouts;
  ec.max_steps = max_steps;
  ec.thresholds = {threshold};
  ec.success_threshold = threshold;
  ec.seed = eval_seed;
  return policy::evaluate(ck.task, planner, mc.policy, ec).primary_success;
}

struct TrainHooks {
  // Called after every epoch; return false to stop early (used to simulate interruption).
  std::function<bool(const EpochLog&)> on_epoch;
  // Called whenever a resumable snapshot is taken.
  std::function<void(const Checkpoint&)> on_snapshot;
};

// Trains one seed. Epoch e shuffles with stream (seed, e) and draws noise from
// it, so a run resumed from a snapshot replays the same loss stream.
inline TrainResult train(const env::Dataset& ds, const ModelConfig& mc_in, const TrainConfig& tc, std::uint64_t seed,
                         const std::optional<Checkpoint>& resume = std::nullopt, const TrainHooks& hooks = {}) {
  tc.validate();
  ModelConfig mc = mc_in;
  mc.arch.dof = ds.dof;
  mc.arch.obs_dim = ds.obs_dim;
  mc.prodmp.dof = ds.dof;
  mc.arch.n_basis = mc.prodmp.n_basis;
  mc.arch.horizon = mc.policy.horizon;
  mc.arch.history = mc.policy.history;
  mc.arch.validate();
  mc.prodmp.validate();
  mc.policy.validate();
  const diffusion::ModelContext ctx = diffusion::ModelContext::make(mc.arch, mc.prodmp, mc.noise, mc.policy.dt_low);
  const TrainingSet set = make_training_set(ds, mc.arch, ctx);
  const std::uint64_t eval_seed = mix_seed(seed ^ 0x5eed0fe7a1ULL);

  TrainResult res;
  denoiser::DenoiserParams params;
  denoiser::OptimizerState opt;
  Eigen::VectorXd ema;
  int start_epoch = 1;
  if (resume) {
    denoiser::require_dimensions(*resume, ds.dof, ds.obs_dim);
    if (!resume->optimizer) throw CheckpointError("resume checkpoint has no optimizer state");
    params = resume->params;
    if (tc.ema_decay > 0.0) {
      if (!resume->training_parameters) throw CheckpointError("resume checkpoint has no raw training parameters");
      ema = resume->params.net.parameters();
      params.net.parameters() = *resume->training_parameters;
    }
    opt = *resume->optimizer;
    start_epoch = resume->epoch + 1;
    res.best_success = resume->extra.value("best_success", -1.0);
    res.best_epoch = resume->extra.value("best_epoch", 0);
    res.best = *resume;
  } else {
    Rng init = make_stream(seed, {0x1417});
    params = denoiser::init_params(init, mc.arch);
    params.action_norm = set.action_norm;
    params.obs_norm = set.obs_norm;
    opt = denoiser::OptimizerState(tc.optimizer, params.net.parameter_count());
    if (tc.ema_decay > 0.0) ema = params.net.parameters();
  }

  const size_t n = set.samples.size();
  std::vector<size_t> order(n);
  std::vector<TrainingSample> batch;
  std::vector<Eigen::VectorXd> targets;
  // The policy view of the current state: the moving average when enabled.
  auto current = [&](int epoch) {
    Checkpoint ck = checkpoint_from(ds.task, mc, params, epoch, seed);
    if (tc.ema_decay > 0.0) {
      ck.training_parameters = params.net.parameters();
      ck.params.net.parameters() = ema;
    }
    return ck;
  };
  auto snapshot = [&](int epoch) {
    Checkpoint ck = current(epoch);
    ck.optimizer = opt;
    ck.extra = {{"best_success", res.best_success}, {"best_epoch", res.best_epoch}};
    return ck;
  };

  for (int epoch = start_epoch; epoch <= tc.epochs; ++epoch) {
    Rng rng = make_stream(seed, {static_cast<std::uint64_t>(epoch)});
    std::iota(order.begin(), order.end(), size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < n; start += static_cast<size_t>(tc.batch_size)) {
      const size_t stop = std::min(n, start + static_cast<size_t>(tc.batch_size));
      batch.clear();
      targets.clear();
      for (size_t i = start; i < stop; ++i) {
        batch.push_back(set.samples[order[i]]);
        if (mc.arch.variant == Variant::kRegression) targets.push_back(set.weight_targets[order[i]]);
      }
      const diffusion::LossResult lr = mc.arch.variant == Variant::kRegression
                                           ? diffusion::regression_loss(params, batch, targets)
                                           : diffusion::dsm_loss(params, ctx, batch, rng);
      denoiser::adamw_step(opt, params.net.parameters(), lr.grad);
      if (tc.ema_decay > 0.0) denoiser::ema_update(ema, params.net.parameters(), tc.ema_decay, opt.step);
      loss_sum += lr.loss;
      ++batches;
    }
    EpochLog log{epoch, loss_sum / batches, std::nullopt};
    const bool eval_now = epoch % tc.eval_every == 0 || epoch == tc.epochs;
    if (eval_now) {
      Checkpoint ck = current(epoch);
      ck.training_parameters.reset();
      const double sr = tc.eval_rollouts > 0
                            ? quick_success(ck, mc, tc.eval_rollouts, tc.max_steps, tc.success_threshold, eval_seed)
                            : 0.0;
      log.success = sr;
      if (sr > res.best_success) {
        res.best_success = sr;
        res.best_epoch = epoch;
        res.best = ck;
      }
    }
    res.log.push_back(log);
    const bool snap = eval_now || (tc.checkpoint_every > 0 && epoch % tc.checkpoint_every == 0);
    if (snap && hooks.on_snapshot) hooks.on_snapshot(snapshot(epoch));
    if (hooks.on_epoch && !hooks.on_epoch(log)) {
      res.last = snapshot(epoch);
      return res;
    }
  }
  res.last = snapshot(tc.epochs);
  res.best.extra = {{"best_success", res.best_success}, {"best_epoch", res.best_epoch}};
  return res;
}

}  // namespace mpd::harness
