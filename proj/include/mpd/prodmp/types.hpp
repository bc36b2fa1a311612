#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "mpd/error.hpp"

namespace mpd::prodmp {

// Parameters of the second-order attractor system used to build the basis.
struct ProDMPConfig {
  int dof = 1;
  int n_basis = 3;
  double alpha = 25.0;        // spring gain; damping follows for critical damping
  double duration = 1.2;      // time constant of the system, seconds
  double alpha_phase = 3.0;   // x(t) = exp(-alpha_phase * t / duration)
  double grid_dt = 1e-3;      // precompute grid step, seconds
  double basis_width = 0.0;   // RBF precision h in exp(-h (x - c)^2); <= 0 selects the overlap rule

  // Repeated root of the homogeneous system (1/s).
  double decay_rate() const { return alpha / (2.0 * duration); }
  int weights_per_dof() const { return n_basis + 1; }
  int weight_count() const { return dof * weights_per_dof(); }

  void validate() const {
    if (dof < 1) throw ConfigError("dof must be >= 1");
    if (n_basis < 1) throw ConfigError("n_basis must be >= 1");
    if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha must be > 0");
    if (!(alpha_phase > 0.0) || !std::isfinite(alpha_phase))
      throw ConfigError("alpha_phase must be > 0");
    if (!(duration > 0.0) || !std::isfinite(duration)) throw ConfigError("duration must be > 0");
    if (!(grid_dt > 0.0)) throw ConfigError("grid_dt must be > 0");
    if (grid_dt > duration / 100.0 * (1.0 + 1e-12))
      throw ConfigError("grid_dt must be <= duration / 100");
    if (!std::isfinite(basis_width)) throw ConfigError("basis_width must be finite");
  }
};

// Composite weights, DoF-major: for each DoF, n_basis RBF weights then the goal.
class WeightVector {
 public:
  WeightVector() = default;
  WeightVector(int dof, int n_basis)
      : dof_(dof), n_basis_(n_basis), values_(Eigen::VectorXd::Zero(dof * (n_basis + 1))) {}
  WeightVector(int dof, int n_basis, Eigen::VectorXd values)
      : dof_(dof), n_basis_(n_basis), values_(std::move(values)) {
    if (values_.size() != dof_ * (n_basis_ + 1))
      throw ContractError("weight vector length " + std::to_string(values_.size()) +
                          " does not match dof*(n_basis+1) = " +
                          std::to_string(dof_ * (n_basis_ + 1)));
    if (!values_.allFinite()) throw ContractError("weight vector has non-finite entries");
  }

  int dof() const { return dof_; }
  int n_basis() const { return n_basis_; }
  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& values() { return values_; }

  auto dof_block(int d) const { return values_.segment(d * (n_basis_ + 1), n_basis_ + 1); }
  auto dof_block(int d) { return values_.segment(d * (n_basis_ + 1), n_basis_ + 1); }
  double goal(int d) const { return values_(d * (n_basis_ + 1) + n_basis_); }

 private:
  int dof_ = 0;
  int n_basis_ = 0;
  Eigen::VectorXd values_;
};

// Position/velocity the decoded trajectory must pass through at `time`.
struct BoundaryState {
  Eigen::VectorXd position;
  Eigen::VectorXd velocity;
  double time = 0.0;

  static BoundaryState at_rest(const Eigen::VectorXd& position, double time = 0.0) {
    return {position, Eigen::VectorXd::Zero(position.size()), time};
  }
  static BoundaryState zero(int dof) {
    return {Eigen::VectorXd::Zero(dof), Eigen::VectorXd::Zero(dof), 0.0};
  }
  int dof() const { return static_cast<int>(position.size()); }
};

// Uniformly timestamped desired positions; row i is the sample at start_time + i*dt.
struct ActionSequence {
  double dt = 0.1;
  double start_time = 0.0;
  Eigen::MatrixXd values;  // L x k

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index dof() const { return values.cols(); }
  double time(Eigen::Index i) const { return start_time + static_cast<double>(i) * dt; }

  void validate() const {
    if (!(dt > 0.0)) throw ContractError("action sequence dt must be > 0");
    if (values.rows() < 1) throw ContractError("action sequence must have at least one sample");
    if (!values.allFinite()) throw ContractError("action sequence has non-finite entries");
  }
};

}  // namespace mpd::prodmp
