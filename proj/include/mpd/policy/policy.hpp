#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/denoiser/checkpoint.hpp"
#include "mpd/diffusion/model.hpp"
#include "mpd/env/dataset.hpp"
#include "mpd/env/environment.hpp"
#include "mpd/error.hpp"
#include "mpd/prodmp/trajectory.hpp"
#include "mpd/random.hpp"

namespace mpd::policy {

using prodmp::BoundaryState;

struct PolicyConfig {
  int horizon = 12;        // n
  int history = 3;         // m
  double dt_low = 0.1;
  double dt_high = 0.005;
  int execute_steps = 12;  // low-rate steps executed per plan
  int n_sample_steps = 10;

  int substeps() const { return static_cast<int>(std::lround(dt_low / dt_high)); }

  void validate() const {
    if (horizon < 1 || history < 1) throw ConfigError("horizon and history must be >= 1");
    if (execute_steps < 1 || execute_steps > horizon) throw ConfigError("need 1 <= execute_steps <= horizon");
    if (!(dt_low > 0.0) || !(dt_high > 0.0)) throw ConfigError("time steps must be > 0");
    const double ratio = dt_low / dt_high;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::round(ratio) < 1.0)
      throw ConfigError("dt_high must divide dt_low");
    if (n_sample_steps < 1) throw ConfigError("n_sample_steps must be >= 1");
  }
};

// High-rate commands for the executed span of one plan. Row h is the command
// at h * dt_high after the plan start.
struct Plan {
  Eigen::MatrixXd commands;       // execute_steps * substeps x k
  Eigen::VectorXd start_velocity;  // commanded velocity at the first sample
  BoundaryState terminal;          // position and velocity at the end of the executed span
  Eigen::MatrixXd low_rate;        // predicted n x k sequence (raw units)
  std::optional<Eigen::VectorXd> weights;
};

class Planner {
 public:
  virtual ~Planner() = default;
  virtual int dof() const = 0;
  virtual int obs_dim() const = 0;
  // obs_window: m x obs_dim raw observations, oldest first. boundary in raw units at t = 0.
  virtual Plan plan(const Eigen::MatrixXd& obs_window, const BoundaryState& boundary, int step, Rng& rng) = 0;
};

// Linear interpolation of low-rate samples (spaced `sub` high-rate steps apart)
// onto `count` high-rate points. Points past the last sample continue the final
// segment; with a single sample the value is held.
inline Eigen::MatrixXd upsample_linear(const Eigen::MatrixXd& low, int sub, Eigen::Index count) {
  const Eigen::Index n = low.rows();
  Eigen::MatrixXd out(count, low.cols());
  for (Eigen::Index h = 0; h < count; ++h) {
    const Eigen::Index node = h / sub, rem = h % sub;
    if (n == 1) {
      out.row(h) = low.row(0);
    } else if (rem == 0 && node < n) {
      out.row(h) = low.row(node);
    } else {
      const Eigen::Index j = std::min<Eigen::Index>(node, n - 2);
      const double frac = static_cast<double>(h - j * sub) / sub;
      out.row(h) = low.row(j) + frac * (low.row(j + 1) - low.row(j));
    }
  }
  return out;
}

// Diffusion (MPD or direct-sequence baseline) and weight-regression policies.
class ModelPlanner final : public Planner {
 public:
  ModelPlanner(const denoiser::Checkpoint& ck, const PolicyConfig& cfg) : params_(ck.params), cfg_(cfg) {
    cfg_.validate();
    params_.validate();
    const auto& a = params_.arch;
    if (a.horizon != cfg.horizon || a.history != cfg.history)
      throw DimensionError("checkpoint horizon/history do not match the policy configuration");
    if (std::abs(ck.dt_low - cfg.dt_low) > 1e-12) throw DimensionError("checkpoint dt_low does not match the policy");
    diffusion::NoiseConfig noise = ck.noise;
    noise.n_sample_steps = cfg.n_sample_steps;
    ctx_ = diffusion::ModelContext::make(a, ck.prodmp, noise, cfg.dt_low);
    schedule_ = diffusion::make_schedule(noise);
    const Eigen::Index count = static_cast<Eigen::Index>(cfg.execute_steps) * cfg.substeps();
    if (emits_weights(a.variant)) {
      const std::vector<double> times = prodmp::uniform_times(0.0, cfg.dt_high, count + 1);
      high_ = prodmp::DecodeOperator(ctx_.basis, 0.0, times);
    }
  }

  int dof() const override { return params_.arch.dof; }
  int obs_dim() const override { return params_.arch.obs_dim; }
  Variant variant() const { return params_.arch.variant; }
  const diffusion::ModelContext& context() const { return ctx_; }

  Plan plan(const Eigen::MatrixXd& obs_window, const BoundaryState& boundary, int, Rng& rng) override {
    const auto& a = params_.arch;
    if (obs_window.rows() != a.history || obs_window.cols() != a.obs_dim)
      throw DimensionError("observation window shape does not match the checkpoint");
    if (boundary.dof() != a.dof) throw DimensionError("boundary dof does not match the checkpoint");
    const Eigen::MatrixXd obs = params_.obs_norm.normalize_rows(obs_window);
    const BoundaryState s0{params_.action_norm.normalize(boundary.position),
                           params_.action_norm.normalize_rate(boundary.velocity), 0.0};
    Plan p;
    if (a.variant == Variant::kBaseline) {
      const diffusion::SampleResult r = diffusion::sample(params_, ctx_, obs, s0, schedule_, rng);
      p.low_rate = params_.action_norm.denormalize_rows(r.sequence);
      baseline_commands(p);
      return p;
    }
    Eigen::VectorXd w;
    if (a.variant == Variant::kMpd) {
      const diffusion::SampleResult r = diffusion::sample(params_, ctx_, obs, s0, schedule_, rng);
      if (!r.weights) throw SamplingError("MPD sampler did not return weights");
      w = *r.weights;
      p.low_rate = params_.action_norm.denormalize_rows(r.sequence);
    } else {
      w = diffusion::predict_weights(params_, obs);
      const prodmp::WeightVector wv(a.dof, a.n_basis, w);
      p.low_rate = params_.action_norm.denormalize_rows(ctx_.decoder.positions(wv, s0));
    }
    const prodmp::WeightVector wv(a.dof, a.n_basis, w);
    const Eigen::MatrixXd wk = prodmp::DecodeOperator::weights_by_dof(wv);
    const Eigen::MatrixXd b = prodmp::DecodeOperator::boundary_matrix(s0);
    const Eigen::MatrixXd pos = params_.action_norm.denormalize_rows(high_.positions(wk, b));
    const Eigen::MatrixXd vel = high_.velocities(wk, b);
    const Eigen::Index count = pos.rows() - 1;
    p.commands = pos.topRows(count);
    p.start_velocity = params_.action_norm.denormalize_rate(vel.row(0).transpose());
    p.terminal = {pos.row(count).transpose(),
                  params_.action_norm.denormalize_rate(vel.row(count).transpose()), 0.0};
    p.weights = w;
    return p;
  }

 private:
  void baseline_commands(Plan& p) const {
    const Eigen::Index count = static_cast<Eigen::Index>(cfg_.execute_steps) * cfg_.substeps();
    const Eigen::MatrixXd up = upsample_linear(p.low_rate, cfg_.substeps(), count + 1);
    p.commands = up.topRows(count);
    p.start_velocity = count >= 1 ? Eigen::VectorXd((up.row(1) - up.row(0)).transpose() / cfg_.dt_high)
                                  : Eigen::VectorXd::Zero(up.cols());
    p.terminal = {up.row(count).transpose(), (up.row(count) - up.row(count - 1)).transpose() / cfg_.dt_high, 0.0};
  }

  denoiser::DenoiserParams params_;
  PolicyConfig cfg_;
  diffusion::ModelContext ctx_;
  diffusion::Schedule schedule_;
  prodmp::DecodeOperator high_;
};

// Oracle that replays a recorded episode: waypoint a_i is commanded at the
// start of low step i and reached linearly by the start of step i + 1; the last
// waypoint is held.
class ReplayPlanner final : public Planner {
 public:
  ReplayPlanner(env::Episode episode, const PolicyConfig& cfg) : episode_(std::move(episode)), cfg_(cfg) {
    cfg_.validate();
    episode_.validate();
  }

  int dof() const override { return static_cast<int>(episode_.actions.cols()); }
  int obs_dim() const override { return static_cast<int>(episode_.observations.cols()); }

  Plan plan(const Eigen::MatrixXd&, const BoundaryState&, int step, Rng&) override {
    const int sub = cfg_.substeps();
    const Eigen::Index last = episode_.steps() - 1;
    auto waypoint = [&](Eigen::Index i) { return Eigen::RowVectorXd(episode_.actions.row(std::min(i, last))); };
    Plan p;
    p.commands.resize(static_cast<Eigen::Index>(cfg_.execute_steps) * sub, dof());
    for (int s = 0; s < cfg_.execute_steps; ++s)
      for (int j = 0; j < sub; ++j) {
        const double frac = static_cast<double>(j) / sub;
        const Eigen::RowVectorXd a = waypoint(step + s), b = waypoint(step + s + 1);
        p.commands.row(s * sub + j) = a + frac * (b - a);
      }
    p.start_velocity = (waypoint(step + 1) - waypoint(step)).transpose() / cfg_.dt_low;
    const Eigen::RowVectorXd end = waypoint(step + cfg_.execute_steps);
    p.terminal = {end.transpose(), Eigen::VectorXd::Zero(dof()), 0.0};
    p.low_rate.resize(cfg_.horizon, dof());
    for (int j = 0; j < cfg_.horizon; ++j) p.low_rate.row(j) = waypoint(step + j);
    return p;
  }

 private:
  env::Episode episode_;
  PolicyConfig cfg_;
};

// One plan within a rollout, for seam analysis.
struct PlanRecord {
  int start_step = 0;          // low-rate index at which the plan began
  BoundaryState boundary;      // boundary the plan was conditioned on
  Eigen::VectorXd first_position;
  Eigen::VectorXd first_velocity;
  BoundaryState terminal;
  std::optional<Eigen::VectorXd> weights;
};

struct RolloutTrace {
  env::ExecutionTrace exec;            // per high-rate step: command, tracked points
  Eigen::MatrixXd observations;        // per executed low step (observation at its start)
  std::vector<double> errors;          // task error after each low step
  std::vector<PlanRecord> plans;
  bool success = false;
  int steps_to_success = -1;           // low steps executed until success
  int steps = 0;

  // First low step count after which the task error is within `threshold`, or -1.
  int steps_within(double threshold) const {
    for (size_t i = 0; i < errors.size(); ++i)
      if (errors[i] <= threshold) return static_cast<int>(i) + 1;
    return -1;
  }
};

// Receding-horizon execution until success at `stop_threshold` or `max_steps`.
// The environment must already be reset to the task instance.
inline RolloutTrace rollout(env::Environment& environment, Planner& planner, const PolicyConfig& cfg, Rng& rng,
                            int max_steps, double stop_threshold) {
  cfg.validate();
  if (planner.dof() != environment.action_dim() || planner.obs_dim() != environment.obs_dim())
    throw DimensionError("policy dimensions do not match the " + environment.task_id() + " task");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  const int sub = cfg.substeps();
  if (std::abs(environment.sim_dt() - cfg.dt_high) > 1e-12) throw ConfigError("dt_high must equal the simulator step");

  RolloutTrace trace;
  env::TraceRecorder rec(cfg.dt_high, environment.action_dim(), environment.tracked_dim());
  std::vector<Eigen::VectorXd> observations;
  BoundaryState boundary = BoundaryState::at_rest(environment.command_pose());
  int step = 0;
  bool done = false;
  while (step < max_steps && !done) {
    observations.push_back(environment.observe());
    Eigen::MatrixXd window(cfg.history, environment.obs_dim());
    for (int r = 0; r < cfg.history; ++r) {
      const int idx = std::max(0, step - cfg.history + 1 + r);
      window.row(r) = observations[static_cast<size_t>(idx)].transpose();
    }
    Plan p = planner.plan(window, boundary, step, rng);
    if (!p.commands.allFinite()) throw SamplingError("plan produced non-finite commands");
    trace.plans.push_back({step, boundary, p.commands.row(0).transpose(), p.start_velocity, p.terminal, p.weights});
    for (int s = 0; s < cfg.execute_steps && step < max_steps; ++s) {
      if (s > 0) observations.push_back(environment.observe());
      for (int j = 0; j < sub; ++j) {
        const Eigen::VectorXd cmd = p.commands.row(s * sub + j).transpose();
        rec.push(cmd, environment.tracked_points());
        environment.step(cmd);
      }
      ++step;
      const double err = environment.task_error();
      trace.errors.push_back(err);
      if (err <= stop_threshold) {
        trace.success = true;
        trace.steps_to_success = step;
        done = true;
        break;
      }
    }
    boundary = p.terminal;
  }
  trace.steps = step;
  trace.exec = rec.finish();
  trace.observations.resize(static_cast<Eigen::Index>(observations.size()), environment.obs_dim());
  for (size_t i = 0; i < observations.size(); ++i)
    trace.observations.row(static_cast<Eigen::Index>(i)) = observations[i].transpose();
  return trace;
}

struct EvalConfig {
  int n_rollouts = 100;
  int max_steps = 60;
  std::vector<double> thresholds{0.05};
  double success_threshold = 0.05;  // primary threshold
  std::uint64_t seed = 0;
};

struct EvalResult {
  std::vector<double> thresholds;
  std::vector<double> success_rate;  // per threshold
  std::vector<RolloutTrace> traces;
  double primary_success = 0.0;
};

// Rollout r uses env stream (seed, r, 1) and sampler stream (seed, r, 2).
inline EvalResult evaluate(const std::string& task, Planner& planner, const PolicyConfig& cfg, const EvalConfig& ec) {
  if (ec.n_rollouts < 0) throw ConfigError("n_rollouts must be >= 0");
  EvalResult out;
  out.thresholds = ec.thresholds;
  std::sort(out.thresholds.begin(), out.thresholds.end());
  out.success_rate.assign(out.thresholds.size(), 0.0);
  if (ec.n_rollouts == 0) {
    out.thresholds.clear();
    out.success_rate.clear();
    return out;
  }
  // Rollouts run until the tightest threshold is met. A rollout's prefix does
  // not depend on when it is stopped, so looser thresholds (including the
  // primary one) are judged on the recorded per-step errors.
  double stop = ec.success_threshold;
  for (double t : out.thresholds) stop = std::min(stop, t);
  int primary = 0;
  for (int r = 0; r < ec.n_rollouts; ++r) {
    auto environment = env::make_environment(task);
    Rng env_rng = make_stream(ec.seed, {static_cast<std::uint64_t>(r), 1});
    environment->reset(env_rng);
    Rng rng = make_stream(ec.seed, {static_cast<std::uint64_t>(r), 2});
    RolloutTrace t = rollout(*environment, planner, cfg, rng, ec.max_steps, stop);
    if (t.steps_within(ec.success_threshold) > 0) ++primary;
    for (size_t k = 0; k < out.thresholds.size(); ++k)
      if (t.steps_within(out.thresholds[k]) > 0) out.success_rate[k] += 1.0;
    out.traces.push_back(std::move(t));
  }
  for (auto& s : out.success_rate) s /= ec.n_rollouts;
  out.primary_success = static_cast<double>(primary) / ec.n_rollouts;
  return out;
}

// time,cmd_0..cmd_{k-1},trk_0..trk_{t-1} at the high rate.
inline void write_trace_csv(const std::filesystem::path& file, const RolloutTrace& t) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write trace " + file.string());
  out << "time";
  for (Eigen::Index j = 0; j < t.exec.commands.cols(); ++j) out << ",cmd_" << j;
  for (Eigen::Index j = 0; j < t.exec.tracked.cols(); ++j) out << ",marker_" << j;
  out << '\n';
  for (Eigen::Index h = 0; h < t.exec.size(); ++h) {
    out << env::format_number(static_cast<double>(h) * t.exec.dt);
    for (Eigen::Index j = 0; j < t.exec.commands.cols(); ++j) out << ',' << env::format_number(t.exec.commands(h, j));
    for (Eigen::Index j = 0; j < t.exec.tracked.cols(); ++j) out << ',' << env::format_number(t.exec.tracked(h, j));
    out << '\n';
  }
}

}  // namespace mpd::policy
