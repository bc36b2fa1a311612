#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "mpd/error.hpp"
#include "mpd/prodmp/types.hpp"

namespace mpd::prodmp {

// Exponentially decaying phase and normalized RBF forcing of the attractor system.
//
// The system for one basis column j, with time constant T = duration:
//   y'' = K (u_j(t) - y) - D y',   K = alpha^2 / (4 T^2),   D = alpha / T
// which has the repeated root -alpha / (2T). The goal column uses u = 1; RBF
// column i uses u = x(t) * psi_i(x(t)) / sum_j psi_j(x(t)). Scaling the forcing
// by K keeps every weight in position units.
class PhaseForcing {
 public:
  explicit PhaseForcing(const ProDMPConfig& cfg)
      : n_basis_(cfg.n_basis), alpha_phase_(cfg.alpha_phase), duration_(cfg.duration) {
    centers_.resize(n_basis_);
    const double x_end = phase(cfg.duration);
    if (n_basis_ == 1) {
      centers_[0] = 0.5 * (x_end + 1.0);
    } else {
      for (int i = 0; i < n_basis_; ++i)
        centers_[i] = x_end + (1.0 - x_end) * static_cast<double>(i) / (n_basis_ - 1);
    }
    if (cfg.basis_width > 0.0) {
      width_ = cfg.basis_width;
    } else if (n_basis_ > 1) {
      // Adjacent RBFs cross at 0.55 of their peak.
      const double spacing = centers_[1] - centers_[0];
      width_ = -4.0 * std::log(0.55) / (spacing * spacing);
    } else {
      width_ = 1.0;
    }
  }

  double phase(double t) const { return std::exp(-alpha_phase_ * t / duration_); }
  double width() const { return width_; }
  const std::vector<double>& centers() const { return centers_; }

  // Forcing inputs for all n_basis + 1 columns at time t (goal column last).
  void evaluate(double t, Eigen::Ref<Eigen::VectorXd> out) const {
    const double x = phase(t);
    double total = 0.0;
    for (int i = 0; i < n_basis_; ++i) {
      const double d = x - centers_[i];
      out(i) = std::exp(-width_ * d * d);
      total += out(i);
    }
    for (int i = 0; i < n_basis_; ++i) out(i) = x * out(i) / total;
    out(n_basis_) = 1.0;
  }

 private:
  int n_basis_;
  double alpha_phase_;
  double duration_;
  double width_ = 1.0;
  std::vector<double> centers_;
};

// Dense samples of the complementary functions and the forced-response basis
// on [0, duration]. Immutable after construction.
struct BasisTable {
  ProDMPConfig config;
  double step = 0.0;        // actual grid spacing (duration / (G - 1))
  Eigen::VectorXd times;    // G
  Eigen::VectorXd y1, y2, y1_dot, y2_dot;
  Eigen::MatrixXd phi;      // G x (N + 1)
  Eigen::MatrixXd phi_dot;  // G x (N + 1)

  Eigen::Index grid_size() const { return times.size(); }
  int columns() const { return config.n_basis + 1; }
  double duration() const { return config.duration; }
  double decay_rate() const { return config.decay_rate(); }

  // Grid cell and interpolation fraction for t; throws if t leaves the grid.
  struct Cell {
    Eigen::Index index;
    double frac;
  };
  Cell locate(double t) const {
    constexpr double kSlack = 1e-9;
    if (!(t >= -kSlack) || !(t <= config.duration + kSlack))
      throw RangeError("time " + std::to_string(t) + " outside basis grid [0, " +
                       std::to_string(config.duration) + "]");
    const Eigen::Index last = grid_size() - 1;
    const double s = std::clamp(t / step, 0.0, static_cast<double>(last));
    auto i = static_cast<Eigen::Index>(std::floor(s));
    if (i >= last) i = last - 1;
    return {i, s - static_cast<double>(i)};
  }

  template <typename Vec>
  static double lerp(const Vec& v, const Cell& c) {
    return v(c.index) + c.frac * (v(c.index + 1) - v(c.index));
  }

  // Complementary functions and basis rows at an arbitrary time (linear interpolation).
  Eigen::Matrix2d homogeneous(double t) const {
    const Cell c = locate(t);
    Eigen::Matrix2d m;
    m << lerp(y1, c), lerp(y2, c), lerp(y1_dot, c), lerp(y2_dot, c);
    return m;
  }
  Eigen::RowVectorXd phi_row(double t) const {
    const Cell c = locate(t);
    return phi.row(c.index) + c.frac * (phi.row(c.index + 1) - phi.row(c.index));
  }
  Eigen::RowVectorXd phi_dot_row(double t) const {
    const Cell c = locate(t);
    return phi_dot.row(c.index) + c.frac * (phi_dot.row(c.index + 1) - phi_dot.row(c.index));
  }
};

inline BasisTable precompute_basis(const ProDMPConfig& cfg) {
  cfg.validate();
  BasisTable table;
  table.config = cfg;

  const auto intervals = static_cast<Eigen::Index>(std::llround(cfg.duration / cfg.grid_dt));
  const Eigen::Index grid = std::max<Eigen::Index>(intervals, 100) + 1;
  const double h = cfg.duration / static_cast<double>(grid - 1);
  table.step = h;
  table.times.resize(grid);
  for (Eigen::Index i = 0; i < grid; ++i) table.times(i) = static_cast<double>(i) * h;
  table.times(grid - 1) = cfg.duration;

  const double lambda = cfg.decay_rate();
  table.y1.resize(grid);
  table.y2.resize(grid);
  table.y1_dot.resize(grid);
  table.y2_dot.resize(grid);
  for (Eigen::Index i = 0; i < grid; ++i) {
    const double t = table.times(i);
    const double e = std::exp(-lambda * t);
    table.y1(i) = e;
    table.y2(i) = t * e;
    table.y1_dot(i) = -lambda * e;
    table.y2_dot(i) = (1.0 - lambda * t) * e;
  }

  // RK4 on the grid, all columns at once, from rest.
  const int cols = cfg.n_basis + 1;
  const double stiffness = cfg.alpha * cfg.alpha / (4.0 * cfg.duration * cfg.duration);
  const double damping = cfg.alpha / cfg.duration;
  const PhaseForcing forcing(cfg);

  table.phi = Eigen::MatrixXd::Zero(grid, cols);
  table.phi_dot = Eigen::MatrixXd::Zero(grid, cols);
  Eigen::ArrayXd pos = Eigen::ArrayXd::Zero(cols);
  Eigen::ArrayXd vel = Eigen::ArrayXd::Zero(cols);
  Eigen::VectorXd u0(cols), um(cols), u1(cols);

  auto accel = [&](const Eigen::ArrayXd& p, const Eigen::ArrayXd& v, const Eigen::VectorXd& u) {
    return (stiffness * (u.array() - p) - damping * v).eval();
  };

  for (Eigen::Index i = 0; i + 1 < grid; ++i) {
    const double t = table.times(i);
    forcing.evaluate(t, u0);
    forcing.evaluate(t + 0.5 * h, um);
    forcing.evaluate(t + h, u1);

    const Eigen::ArrayXd k1p = vel;
    const Eigen::ArrayXd k1v = accel(pos, vel, u0);
    const Eigen::ArrayXd k2p = vel + 0.5 * h * k1v;
    const Eigen::ArrayXd k2v = accel(pos + 0.5 * h * k1p, k2p, um);
    const Eigen::ArrayXd k3p = vel + 0.5 * h * k2v;
    const Eigen::ArrayXd k3v = accel(pos + 0.5 * h * k2p, k3p, um);
    const Eigen::ArrayXd k4p = vel + h * k3v;
    const Eigen::ArrayXd k4v = accel(pos + h * k3p, k4p, u1);

    pos += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
    vel += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
    table.phi.row(i + 1) = pos.matrix().transpose();
    table.phi_dot.row(i + 1) = vel.matrix().transpose();
  }

  if (!table.phi.allFinite() || !table.phi_dot.allFinite())
    throw NumericalError("basis integration produced non-finite values");
  return table;
}

}  // namespace mpd::prodmp
