#pragma once

#include <limits>
#include <memory>
#include <string>

#include <Eigen/Dense>

#include "mpd/env/environment.hpp"
#include "mpd/error.hpp"

namespace mpd::env {

struct ObstacleParams {
  Eigen::Vector2d center = Eigen::Vector2d::Zero();
  double radius = 0.2;
  double dt_sim = 0.005;
  double servo_omega = 25.0;
  double max_speed = 2.0;
  Eigen::Vector2d start = Eigen::Vector2d(-0.7, 0.0);
  Eigen::Vector2d goal = Eigen::Vector2d(0.7, 0.0);
  double jitter = 0.03;  // per-coordinate start/goal jitter
};

struct ObstacleState {
  Eigen::Vector2d pos = Eigen::Vector2d::Zero();
  Eigen::Vector2d vel = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal = Eigen::Vector2d::Zero();
  bool collided = false;
};

// Servoed point mass; entering the disk projects it back onto the boundary,
// removes the inward velocity component and records the collision.
inline ObstacleState obstacle_step(const ObstacleParams& p, const ObstacleState& state,
                                   const Eigen::Vector2d& control, double dt) {
  ObstacleState next = state;
  servo_point(next.pos, next.vel, control, p.servo_omega, p.max_speed, dt);
  const Eigen::Vector2d rel = next.pos - p.center;
  const double dist = rel.norm();
  if (dist < p.radius) {
    const Eigen::Vector2d normal = dist > 1e-12 ? Eigen::Vector2d(rel / dist) : Eigen::Vector2d(state.pos - p.center).normalized();
    next.pos = p.center + p.radius * normal;
    const double inward = next.vel.dot(normal);
    if (inward < 0.0) next.vel -= inward * normal;
    next.collided = true;
  }
  return next;
}

class ObstacleEnv final : public Environment {
 public:
  explicit ObstacleEnv(ObstacleParams p = {}) : params_(p) {
    state_.pos = p.start;
    state_.goal = p.goal;
  }

  std::string task_id() const override { return "obstacle"; }
  int action_dim() const override { return 2; }
  int obs_dim() const override { return 4; }
  int tracked_dim() const override { return 2; }
  double sim_dt() const override { return params_.dt_sim; }

  void reset(Rng& rng) override {
    state_ = ObstacleState{};
    const double j = params_.jitter;
    state_.pos = params_.start + Eigen::Vector2d(uniform(rng, -j, j), uniform(rng, -j, j));
    state_.goal = params_.goal + Eigen::Vector2d(uniform(rng, -j, j), uniform(rng, -j, j));
  }

  void step(const Eigen::VectorXd& control) override {
    if (control.size() != 2) throw DimensionError("obstacle control must have 2 entries");
    if (!control.allFinite()) throw SimulationError("obstacle control is not finite");
    state_ = obstacle_step(params_, state_, control, params_.dt_sim);
  }

  Eigen::VectorXd observe() const override {
    Eigen::VectorXd o(4);
    o << state_.pos, state_.goal;
    return o;
  }

  double task_error() const override {
    return state_.collided ? std::numeric_limits<double>::infinity() : (state_.pos - state_.goal).norm();
  }

  Eigen::VectorXd command_pose() const override { return state_.pos; }
  Eigen::VectorXd tracked_points() const override { return state_.pos; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<ObstacleEnv>(*this); }

  const ObstacleParams& params() const { return params_; }
  const ObstacleState& state() const { return state_; }
  ObstacleState& mutable_state() { return state_; }

 private:
  ObstacleParams params_;
  ObstacleState state_;
};

}  // namespace mpd::env
