#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/env/dataset.hpp"
#include "mpd/env/lattice.hpp"
#include "mpd/env/obstacle.hpp"
#include "mpd/env/tasks.hpp"
#include "mpd/error.hpp"
#include "mpd/random.hpp"

namespace mpd::env {

struct DemoConfig {
  double dt_low = 0.1;
  double success_threshold = 0.05;
  int max_steps = 80;
  int max_attempts = 20;
  double waypoint_noise = 0.03;  // mid-path offset per coordinate (<= 5% of the 2-unit workspace)
  double lattice_bow = 0.08;
  double obstacle_bow = 0.42;
  double bow_jitter = 0.03;
};

struct DemoResult {
  Episode episode;
  ExecutionTrace trace;
};

// Continuous desired-position path for one demonstration, t in seconds.
using DemoPath = std::function<Eigen::VectorXd(double)>;

namespace detail {

// q(t) = lerp(start, goal, s) + bump * sin(pi s), s = min_jerk(t / T).
inline DemoPath bowed_path(Eigen::VectorXd start, Eigen::VectorXd goal, Eigen::VectorXd bump, double duration) {
  return [=](double t) -> Eigen::VectorXd {
    const double s = min_jerk(t / duration);
    return start + s * (goal - start) + std::sin(std::numbers::pi * s) * bump;
  };
}

}  // namespace detail

// Drives `env` along `path` at the simulation rate and records low-rate samples.
// The episode ends after the first low step that starts with the path finished
// (so the last action is the final pose) and ends with the success check holding.
inline DemoResult execute_path(Environment& env, const DemoPath& path, double duration, const DemoConfig& cfg) {
  const double dt_h = env.sim_dt();
  const int sub = static_cast<int>(std::lround(cfg.dt_low / dt_h));
  TraceRecorder rec(dt_h, env.action_dim(), env.tracked_dim());
  std::vector<Eigen::VectorXd> obs, act;
  for (int i = 0; i < cfg.max_steps; ++i) {
    const double t0 = i * cfg.dt_low;
    obs.push_back(env.observe());
    act.push_back(path(t0));
    for (int j = 0; j < sub; ++j) {
      const Eigen::VectorXd cmd = path(t0 + j * dt_h);
      rec.push(cmd, env.tracked_points());
      env.step(cmd);
    }
    if (t0 >= duration && env.success(cfg.success_threshold)) {
      DemoResult r;
      r.episode.task = env.task_id();
      r.episode.dt = cfg.dt_low;
      r.episode.observations.resize(static_cast<Eigen::Index>(obs.size()), env.obs_dim());
      r.episode.actions.resize(static_cast<Eigen::Index>(act.size()), env.action_dim());
      for (size_t k = 0; k < obs.size(); ++k) {
        r.episode.observations.row(static_cast<Eigen::Index>(k)) = obs[k].transpose();
        r.episode.actions.row(static_cast<Eigen::Index>(k)) = act[k].transpose();
      }
      r.episode.success = true;
      r.trace = rec.finish();
      return r;
    }
  }
  throw GenerationError("scripted " + env.task_id() + " demonstration did not succeed");
}

// Mode A bows the attachments outward (stretching the sheet), mode B inward.
inline DemoResult lattice_demo(LatticeEnv& env, DemoMode mode, Rng& rng, const DemoConfig& cfg) {
  const Eigen::VectorXd start = env.command_pose();
  const Eigen::VectorXd goal = env.goal_attachments();
  const double sign = mode == DemoMode::kA ? 1.0 : -1.0;
  const double bow = cfg.lattice_bow + uniform(rng, -cfg.bow_jitter, cfg.bow_jitter);
  Eigen::VectorXd bump(4);
  bump << -sign * bow, 0.0, sign * bow, 0.0;
  for (int i = 0; i < 4; ++i) bump(i) += uniform(rng, -cfg.waypoint_noise, cfg.waypoint_noise);
  const double duration = uniform(rng, 2.0, 2.6);
  return execute_path(env, detail::bowed_path(start, goal, bump, duration), duration, cfg);
}

// Mode A passes on the left of the start-goal direction, mode B on the right.
inline DemoResult obstacle_demo(ObstacleEnv& env, DemoMode mode, Rng& rng, const DemoConfig& cfg) {
  const Eigen::Vector2d start = env.state().pos;
  const Eigen::Vector2d goal = env.state().goal;
  const Eigen::Vector2d dir = (goal - start).normalized();
  const Eigen::Vector2d left(-dir.y(), dir.x());
  const double side = mode == DemoMode::kA ? 1.0 : -1.0;
  const double bow = cfg.obstacle_bow + uniform(rng, -cfg.bow_jitter, cfg.bow_jitter);
  Eigen::Vector2d bump = side * bow * left;
  for (int i = 0; i < 2; ++i) bump(i) += uniform(rng, -cfg.waypoint_noise, cfg.waypoint_noise);
  const double duration = uniform(rng, 1.8, 2.2);
  return execute_path(env, detail::bowed_path(start, goal, bump, duration), duration, cfg);
}

// Samples a task instance from `seed` and demonstrates it in `mode`.
inline DemoResult scripted_demo(const std::string& task, DemoMode mode, std::uint64_t seed,
                                const DemoConfig& cfg = {}) {
  Rng rng = make_stream(seed, {0xde70});
  auto env = make_environment(task);
  env->reset(rng);
  DemoResult r = [&] {
    if (auto* lat = dynamic_cast<LatticeEnv*>(env.get())) return lattice_demo(*lat, mode, rng, cfg);
    return obstacle_demo(dynamic_cast<ObstacleEnv&>(*env), mode, rng, cfg);
  }();
  r.episode.seed = seed;
  r.episode.mode = mode;
  return r;
}

// `count` successful demonstrations with alternating modes (A, B, A, ...).
// A plan that fails its success check is regenerated with a new seed.
inline std::vector<DemoResult> generate_demos(const std::string& task, int count, std::uint64_t seed,
                                              const DemoConfig& cfg = {}) {
  if (count < 0) throw ConfigError("demonstration count must be >= 0");
  std::vector<DemoResult> out;
  out.reserve(static_cast<size_t>(count));
  for (int e = 0; e < count; ++e) {
    const DemoMode mode = e % 2 == 0 ? DemoMode::kA : DemoMode::kB;
    for (int attempt = 0;; ++attempt) {
      if (attempt >= cfg.max_attempts)
        throw GenerationError("episode " + std::to_string(e) + " failed after " + std::to_string(attempt) + " attempts");
      const std::uint64_t s = mix_seed(seed ^ mix_seed(static_cast<std::uint64_t>(e) * 1000003ULL + attempt));
      try {
        out.push_back(scripted_demo(task, mode, s, cfg));
        break;
      } catch (const GenerationError&) {
      }
    }
  }
  return out;
}

inline Dataset make_dataset(const std::string& task, const std::vector<DemoResult>& demos, double dt) {
  auto env = make_environment(task);
  Dataset ds;
  ds.task = task;
  ds.dt = dt;
  ds.dof = env->action_dim();
  ds.obs_dim = env->obs_dim();
  for (const auto& d : demos) ds.episodes.push_back(d.episode);
  ds.validate();
  return ds;
}

}  // namespace mpd::env
