#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/env/environment.hpp"
#include "mpd/error.hpp"

namespace mpd::env {

struct Spring {
  int a = 0;
  int b = 0;
  double rest = 0.0;
};

struct LatticeParams {
  int rows = 5;
  int cols = 5;
  double spacing = 0.15;
  double stiffness = 40.0;
  double damping = 1.5;     // absolute, per node
  double node_mass = 0.25;
  double dt_sim = 0.005;
  double servo_omega = 25.0;
  double max_speed = 2.0;   // attachment displacement clamp, units/s
};

// Planar mass-spring sheet lying on a table. Rows run top to bottom; the two
// attachments are the top corners and the markers sit on the bottom row.
struct LatticeState {
  LatticeParams params;
  Eigen::MatrixX2d pos;
  Eigen::MatrixX2d vel;
  std::vector<Spring> springs;
  std::array<int, 2> attach{0, 0};
  std::array<int, 2> marker{0, 0};
  std::array<Eigen::Vector2d, 2> target{Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero()};

  int node_count() const { return static_cast<int>(pos.rows()); }
  bool is_attachment(int i) const { return i == attach[0] || i == attach[1]; }

  void validate() const {
    const int n = node_count();
    if (vel.rows() != n) throw ContractError("lattice velocity rows do not match positions");
    const std::array<int, 4> idx{attach[0], attach[1], marker[0], marker[1]};
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= n) throw ContractError("lattice index out of range");
      for (size_t j = i + 1; j < idx.size(); ++j)
        if (idx[i] == idx[j]) throw ContractError("attachment and marker indices must be distinct");
    }
    if (!(params.stiffness > 0.0) || !(params.damping > 0.0) || !(params.node_mass > 0.0))
      throw ContractError("lattice stiffness, damping and mass must be positive");
    if (!pos.allFinite() || !vel.allFinite()) throw SimulationError("lattice state is not finite");
  }
};

inline int lattice_node(const LatticeParams& p, int r, int c) { return r * p.cols + c; }

// Rest-shape sheet with its top-left node at `origin`. Structural and shear springs.
inline LatticeState make_lattice(const LatticeParams& p, const Eigen::Vector2d& origin) {
  if (p.rows < 2 || p.cols < 3) throw ConfigError("lattice needs at least 2 rows and 3 columns");
  LatticeState s;
  s.params = p;
  const int n = p.rows * p.cols;
  s.pos.resize(n, 2);
  s.vel = Eigen::MatrixX2d::Zero(n, 2);
  for (int r = 0; r < p.rows; ++r)
    for (int c = 0; c < p.cols; ++c)
      s.pos.row(lattice_node(p, r, c)) = origin.transpose() + Eigen::RowVector2d(c * p.spacing, -r * p.spacing);
  auto link = [&](int a, int b) { s.springs.push_back({a, b, (s.pos.row(a) - s.pos.row(b)).norm()}); };
  for (int r = 0; r < p.rows; ++r)
    for (int c = 0; c < p.cols; ++c) {
      const int i = lattice_node(p, r, c);
      if (c + 1 < p.cols) link(i, lattice_node(p, r, c + 1));
      if (r + 1 < p.rows) link(i, lattice_node(p, r + 1, c));
      if (r + 1 < p.rows && c + 1 < p.cols) link(i, lattice_node(p, r + 1, c + 1));
      if (r + 1 < p.rows && c > 0) link(i, lattice_node(p, r + 1, c - 1));
    }
  s.attach = {lattice_node(p, 0, 0), lattice_node(p, 0, p.cols - 1)};
  const int inset = p.cols >= 4 ? 1 : 0;
  s.marker = {lattice_node(p, p.rows - 1, inset), lattice_node(p, p.rows - 1, p.cols - 1 - inset)};
  for (int m = 0; m < 2; ++m) s.target[m] = s.pos.row(s.marker[m]).transpose();
  return s;
}

inline Eigen::MatrixX2d spring_forces(const LatticeState& s) {
  Eigen::MatrixX2d f = Eigen::MatrixX2d::Zero(s.node_count(), 2);
  for (const auto& sp : s.springs) {
    const Eigen::RowVector2d d = s.pos.row(sp.b) - s.pos.row(sp.a);
    const double len = d.norm();
    if (len <= 1e-12) continue;
    const Eigen::RowVector2d force = s.params.stiffness * (len - sp.rest) / len * d;
    f.row(sp.a) += force;
    f.row(sp.b) -= force;
  }
  return f;
}

// Kinetic energy of the free nodes plus spring potential.
inline double lattice_energy(const LatticeState& s) {
  double e = 0.0;
  for (int i = 0; i < s.node_count(); ++i)
    if (!s.is_attachment(i)) e += 0.5 * s.params.node_mass * s.vel.row(i).squaredNorm();
  for (const auto& sp : s.springs) {
    const double stretch = (s.pos.row(sp.b) - s.pos.row(sp.a)).norm() - sp.rest;
    e += 0.5 * s.params.stiffness * stretch * stretch;
  }
  return e;
}

// control = [attach_l(2), attach_r(2)] desired positions.
inline LatticeState lattice_step(const LatticeState& state, const Eigen::Vector4d& control, double dt) {
  if (std::abs(dt - state.params.dt_sim) > 1e-12 * state.params.dt_sim)
    throw ContractError("lattice_step expects dt equal to the simulation step");
  if (!control.allFinite()) throw ContractError("lattice control is not finite");
  LatticeState next = state;
  const double m = state.params.node_mass;
  const double c = state.params.damping;
  const Eigen::MatrixX2d f = spring_forces(state);
  for (int i = 0; i < state.node_count(); ++i) {
    if (next.is_attachment(i)) continue;
    next.vel.row(i) += dt / m * (f.row(i) - c * state.vel.row(i));
    next.pos.row(i) += dt * next.vel.row(i);
  }
  for (int a = 0; a < 2; ++a) {
    Eigen::Vector2d p = state.pos.row(state.attach[a]).transpose();
    Eigen::Vector2d v = state.vel.row(state.attach[a]).transpose();
    servo_point(p, v, control.segment<2>(2 * a), state.params.servo_omega, state.params.max_speed, dt);
    next.pos.row(state.attach[a]) = p.transpose();
    next.vel.row(state.attach[a]) = v.transpose();
  }
  if (!next.pos.allFinite() || !next.vel.allFinite()) throw SimulationError("lattice state became non-finite");
  return next;
}

struct LatticeTaskParams {
  LatticeParams lattice;
  double start_jitter = 0.05;         // uniform translation of the start sheet
  double goal_shift_x = 0.3;
  double goal_shift_y_lo = -0.3;
  double goal_shift_y_hi = 0.2;
  double separation_lo = 0.45;
  double separation_hi = 0.72;
  double max_tilt = 0.3;              // rad
  int relax_steps = 4000;
};

// Equilibrium of the sheet with its attachments pinned at `goal`. The sheet is
// first placed rigidly (tilt about the attachment midpoint), then relaxed.
inline LatticeState relax_to(const LatticeState& start, const Eigen::Vector4d& goal, int steps) {
  LatticeState s = start;
  const Eigen::Vector2d mid0 = 0.5 * (s.pos.row(s.attach[0]) + s.pos.row(s.attach[1])).transpose();
  const Eigen::Vector2d gl = goal.head<2>(), gr = goal.tail<2>();
  const Eigen::Vector2d mid1 = 0.5 * (gl + gr);
  const double tilt = std::atan2(gr.y() - gl.y(), gr.x() - gl.x());
  const Eigen::Rotation2Dd rot(tilt);
  for (int i = 0; i < s.node_count(); ++i)
    s.pos.row(i) = (mid1 + rot * (s.pos.row(i).transpose() - mid0)).transpose();
  s.pos.row(s.attach[0]) = gl.transpose();
  s.pos.row(s.attach[1]) = gr.transpose();
  s.vel.setZero();
  for (int k = 0; k < steps; ++k) s = lattice_step(s, goal, s.params.dt_sim);
  return s;
}

class LatticeEnv final : public Environment {
 public:
  explicit LatticeEnv(LatticeTaskParams p = {}) : task_(p), state_(make_lattice(p.lattice, {-0.3, 0.3})) {}

  std::string task_id() const override { return "lattice"; }
  int action_dim() const override { return 4; }
  int obs_dim() const override { return 12; }
  int tracked_dim() const override { return 4; }
  double sim_dt() const override { return task_.lattice.dt_sim; }

  void reset(Rng& rng) override {
    const auto& lp = task_.lattice;
    const double width = (lp.cols - 1) * lp.spacing;
    const Eigen::Vector2d origin(-0.5 * width + uniform(rng, -task_.start_jitter, task_.start_jitter),
                                 0.3 + uniform(rng, -task_.start_jitter, task_.start_jitter));
    LatticeState s = make_lattice(lp, origin);
    const Eigen::Vector2d top_mid = origin + Eigen::Vector2d(0.5 * width, 0.0);
    const Eigen::Vector2d mid = top_mid + Eigen::Vector2d(uniform(rng, -task_.goal_shift_x, task_.goal_shift_x),
                                                          uniform(rng, task_.goal_shift_y_lo, task_.goal_shift_y_hi));
    const double sep = uniform(rng, task_.separation_lo, task_.separation_hi);
    const double tilt = uniform(rng, -task_.max_tilt, task_.max_tilt);
    const Eigen::Vector2d half = Eigen::Rotation2Dd(tilt) * Eigen::Vector2d(0.5 * sep, 0.0);
    goal_ << mid - half, mid + half;
    const LatticeState eq = relax_to(s, goal_, task_.relax_steps);
    for (int m = 0; m < 2; ++m) s.target[m] = eq.pos.row(eq.marker[m]).transpose();
    state_ = std::move(s);
  }

  void step(const Eigen::VectorXd& control) override {
    if (control.size() != 4) throw DimensionError("lattice control must have 4 entries");
    state_ = lattice_step(state_, Eigen::Vector4d(control), task_.lattice.dt_sim);
  }

  Eigen::VectorXd observe() const override {
    Eigen::VectorXd o(12);
    o << state_.pos.row(state_.attach[0]).transpose(), state_.pos.row(state_.attach[1]).transpose(),
        state_.pos.row(state_.marker[0]).transpose(), state_.pos.row(state_.marker[1]).transpose(),
        state_.target[0], state_.target[1];
    return o;
  }

  double task_error() const override {
    return std::max((state_.pos.row(state_.marker[0]).transpose() - state_.target[0]).norm(),
                    (state_.pos.row(state_.marker[1]).transpose() - state_.target[1]).norm());
  }

  Eigen::VectorXd command_pose() const override {
    Eigen::VectorXd q(4);
    q << state_.pos.row(state_.attach[0]).transpose(), state_.pos.row(state_.attach[1]).transpose();
    return q;
  }

  Eigen::VectorXd tracked_points() const override {
    Eigen::VectorXd q(4);
    q << state_.pos.row(state_.marker[0]).transpose(), state_.pos.row(state_.marker[1]).transpose();
    return q;
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<LatticeEnv>(*this); }

  const LatticeState& state() const { return state_; }
  LatticeState& mutable_state() { return state_; }
  // Attachment placement whose equilibrium defines the current targets.
  const Eigen::Vector4d& goal_attachments() const { return goal_; }
  const LatticeTaskParams& task_params() const { return task_; }

 private:
  LatticeTaskParams task_;
  LatticeState state_;
  Eigen::Vector4d goal_ = Eigen::Vector4d::Zero();
};

}  // namespace mpd::env
