#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/random.hpp"

namespace mpd::env {

// A desk-scale task driven at the high (simulation) rate by desired positions
// of its controlled points. Observations are taken at the low rate by the caller.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string task_id() const = 0;
  virtual int action_dim() const = 0;       // k
  virtual int obs_dim() const = 0;
  virtual int tracked_dim() const = 0;      // flattened object points used for object acceleration
  virtual double sim_dt() const = 0;

  // Samples a new task instance (start configuration and targets).
  virtual void reset(Rng& rng) = 0;
  // Advances one simulation step toward the desired positions `control` (size k).
  virtual void step(const Eigen::VectorXd& control) = 0;

  virtual Eigen::VectorXd observe() const = 0;
  // Distance that the success check compares against a threshold; +inf marks
  // an unrecoverable failure such as a collision.
  virtual double task_error() const = 0;
  bool success(double threshold) const { return task_error() <= threshold; }
  // Current pose of the controlled points (attachments / point mass), size k.
  virtual Eigen::VectorXd command_pose() const = 0;
  virtual Eigen::VectorXd tracked_points() const = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;
};

// High-rate record of one execution. Row h holds the command applied during
// simulation step h and the tracked object points at the start of that step.
struct ExecutionTrace {
  double dt = 0.0;
  Eigen::MatrixXd commands;
  Eigen::MatrixXd tracked;

  Eigen::Index size() const { return commands.rows(); }
};

// Appends rows to a trace whose final size is not known in advance.
class TraceRecorder {
 public:
  TraceRecorder(double dt, int k, int t) : dt_(dt), k_(k), t_(t) {}

  void push(const Eigen::VectorXd& command, const Eigen::VectorXd& tracked) {
    cmd_.insert(cmd_.end(), command.data(), command.data() + k_);
    trk_.insert(trk_.end(), tracked.data(), tracked.data() + t_);
  }

  ExecutionTrace finish() const {
    ExecutionTrace out;
    out.dt = dt_;
    const Eigen::Index rows = static_cast<Eigen::Index>(cmd_.size()) / k_;
    using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    out.commands = Eigen::Map<const RowMajor>(cmd_.data(), rows, k_);
    out.tracked = Eigen::Map<const RowMajor>(trk_.data(), rows, t_);
    return out;
  }

 private:
  double dt_;
  int k_, t_;
  std::vector<double> cmd_, trk_;
};

// Quintic minimum-jerk time scaling on [0, 1].
inline double min_jerk(double s) {
  if (s <= 0.0) return 0.0;
  if (s >= 1.0) return 1.0;
  return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
}

// Critically damped servo of a kinematic point toward `target` with a
// per-step displacement clamp of max_speed * dt.
inline void servo_point(Eigen::Ref<Eigen::Vector2d> pos, Eigen::Ref<Eigen::Vector2d> vel,
                        const Eigen::Vector2d& target, double omega, double max_speed, double dt) {
  const Eigen::Vector2d acc = omega * omega * (target - pos) - 2.0 * omega * vel;
  Eigen::Vector2d v = vel + dt * acc;
  Eigen::Vector2d disp = dt * v;
  const double limit = max_speed * dt;
  const double norm = disp.norm();
  if (norm > limit) {
    disp *= limit / norm;
    v = disp / dt;
  }
  pos += disp;
  vel = v;
}

}  // namespace mpd::env
