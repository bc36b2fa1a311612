#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/error.hpp"
#include "mpd/prodmp/basis.hpp"
#include "mpd/prodmp/types.hpp"

namespace mpd::prodmp {

namespace detail {

inline void check_shapes(const BasisTable& table, const WeightVector& w, const BoundaryState& s0) {
  const int dof = table.config.dof;
  if (w.dof() != dof || w.n_basis() != table.config.n_basis)
    throw ContractError("weight vector shape does not match basis table");
  if (s0.position.size() != dof || s0.velocity.size() != dof)
    throw ContractError("boundary state dimension does not match dof");
  if (!s0.position.allFinite() || !s0.velocity.allFinite() || !std::isfinite(s0.time))
    throw ContractError("boundary state has non-finite entries");
  if (s0.time < 0.0 || s0.time >= table.duration())
    throw RangeError("boundary time " + std::to_string(s0.time) + " outside [0, duration)");
}

inline Eigen::Matrix2d inverse_homogeneous(const BasisTable& table, double t_b) {
  const Eigen::Matrix2d m = table.homogeneous(t_b);
  const double det = m.determinant();
  if (!(std::abs(det) > 1e-12))
    throw NumericalError("singular boundary system at t_b = " + std::to_string(t_b));
  return m.inverse();
}

inline void check_times(std::span<const double> times, double t_b) {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < t_b - 1e-9)
      throw RangeError("query time " + std::to_string(times[i]) + " precedes boundary time");
    if (i > 0 && !(times[i] > times[i - 1]))
      throw RangeError("query times must be strictly increasing");
  }
}

}  // namespace detail

// Per-DoF (c1, c2) so that the trajectory matches s0 at s0.time. Row d holds DoF d.
inline Eigen::MatrixX2d solve_boundary_coefficients(const BasisTable& table, const WeightVector& w,
                                                    const BoundaryState& s0) {
  detail::check_shapes(table, w, s0);
  const Eigen::Matrix2d inv = detail::inverse_homogeneous(table, s0.time);
  const Eigen::RowVectorXd phi_b = table.phi_row(s0.time);
  const Eigen::RowVectorXd phi_dot_b = table.phi_dot_row(s0.time);
  Eigen::MatrixX2d coeffs(table.config.dof, 2);
  for (int d = 0; d < table.config.dof; ++d) {
    const Eigen::Vector2d rhs(s0.position(d) - phi_b.dot(w.dof_block(d)),
                              s0.velocity(d) - phi_dot_b.dot(w.dof_block(d)));
    coeffs.row(d) = (inv * rhs).transpose();
  }
  return coeffs;
}

struct DecodedTrajectory {
  std::vector<double> times;
  Eigen::MatrixXd position;  // L x k
  Eigen::MatrixXd velocity;  // L x k
};

// Closed-form evaluation y(t) = c1 y1 + c2 y2 + phi(t)^T w at each query time.
inline DecodedTrajectory decode(const BasisTable& table, const WeightVector& w,
                                const BoundaryState& s0, std::span<const double> query_times) {
  const Eigen::MatrixX2d c = solve_boundary_coefficients(table, w, s0);
  detail::check_times(query_times, s0.time);
  const int dof = table.config.dof;
  const auto count = static_cast<Eigen::Index>(query_times.size());
  DecodedTrajectory out;
  out.times.assign(query_times.begin(), query_times.end());
  out.position.resize(count, dof);
  out.velocity.resize(count, dof);
  for (Eigen::Index j = 0; j < count; ++j) {
    const double t = query_times[j];
    const BasisTable::Cell cell = table.locate(t);
    const double y1 = BasisTable::lerp(table.y1, cell);
    const double y2 = BasisTable::lerp(table.y2, cell);
    const double y1d = BasisTable::lerp(table.y1_dot, cell);
    const double y2d = BasisTable::lerp(table.y2_dot, cell);
    const auto i = cell.index;
    const Eigen::RowVectorXd phi = table.phi.row(i) + cell.frac * (table.phi.row(i + 1) - table.phi.row(i));
    const Eigen::RowVectorXd phi_dot =
        table.phi_dot.row(i) + cell.frac * (table.phi_dot.row(i + 1) - table.phi_dot.row(i));
    for (int d = 0; d < dof; ++d) {
      out.position(j, d) = c(d, 0) * y1 + c(d, 1) * y2 + phi.dot(w.dof_block(d));
      out.velocity(j, d) = c(d, 0) * y1d + c(d, 1) * y2d + phi_dot.dot(w.dof_block(d));
    }
  }
  return out;
}

inline std::vector<double> uniform_times(double start, double dt, Eigen::Index count) {
  std::vector<double> t(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) t[static_cast<std::size_t>(i)] = start + static_cast<double>(i) * dt;
  return t;
}

// Decode on a uniform grid start + i*dt, i < count.
inline ActionSequence decode_uniform(const BasisTable& table, const WeightVector& w,
                                     const BoundaryState& s0, double start, double dt,
                                     Eigen::Index count, Eigen::MatrixXd* velocity = nullptr) {
  const std::vector<double> times = uniform_times(start, dt, count);
  DecodedTrajectory d = decode(table, w, s0, times);
  if (velocity != nullptr) *velocity = std::move(d.velocity);
  return ActionSequence{dt, start, std::move(d.position)};
}

// The decode written as an affine map for fixed boundary time and query times:
//   position(:, d) = design * w_d + homogeneous * [pos_d; vel_d]
// and likewise for velocity. The transpose of `design` is the adjoint that
// carries trajectory-space sensitivities back to weight space.
class DecodeOperator {
 public:
  DecodeOperator() = default;
  DecodeOperator(const BasisTable& table, double boundary_time, std::span<const double> query_times)
      : dof_(table.config.dof), n_basis_(table.config.n_basis), boundary_time_(boundary_time),
        times_(query_times.begin(), query_times.end()) {
    if (boundary_time < 0.0 || boundary_time >= table.duration())
      throw RangeError("boundary time outside [0, duration)");
    detail::check_times(query_times, boundary_time);
    const Eigen::Matrix2d inv = detail::inverse_homogeneous(table, boundary_time);
    Eigen::MatrixXd boundary_basis(2, table.columns());
    boundary_basis.row(0) = table.phi_row(boundary_time);
    boundary_basis.row(1) = table.phi_dot_row(boundary_time);

    const auto count = static_cast<Eigen::Index>(times_.size());
    design_.resize(count, table.columns());
    design_dot_.resize(count, table.columns());
    homogeneous_.resize(count, 2);
    homogeneous_dot_.resize(count, 2);
    for (Eigen::Index j = 0; j < count; ++j) {
      const Eigen::Matrix2d y = table.homogeneous(times_[static_cast<std::size_t>(j)]);
      const Eigen::RowVector2d pos_map = y.row(0) * inv;
      const Eigen::RowVector2d vel_map = y.row(1) * inv;
      homogeneous_.row(j) = pos_map;
      homogeneous_dot_.row(j) = vel_map;
      design_.row(j) = table.phi_row(times_[static_cast<std::size_t>(j)]) - pos_map * boundary_basis;
      design_dot_.row(j) =
          table.phi_dot_row(times_[static_cast<std::size_t>(j)]) - vel_map * boundary_basis;
    }
  }

  int dof() const { return dof_; }
  int n_basis() const { return n_basis_; }
  double boundary_time() const { return boundary_time_; }
  const std::vector<double>& times() const { return times_; }
  Eigen::Index length() const { return design_.rows(); }
  const Eigen::MatrixXd& design() const { return design_; }
  const Eigen::MatrixXd& design_dot() const { return design_dot_; }
  const Eigen::MatrixX2d& homogeneous() const { return homogeneous_; }
  const Eigen::MatrixX2d& homogeneous_dot() const { return homogeneous_dot_; }

  // Weights given as a (N+1) x k matrix (column d = DoF d's block).
  Eigen::MatrixXd positions(const Eigen::Ref<const Eigen::MatrixXd>& weights_by_dof,
                            const Eigen::Ref<const Eigen::MatrixXd>& boundary /* 2 x k */) const {
    return design_ * weights_by_dof + homogeneous_ * boundary;
  }
  Eigen::MatrixXd velocities(const Eigen::Ref<const Eigen::MatrixXd>& weights_by_dof,
                             const Eigen::Ref<const Eigen::MatrixXd>& boundary) const {
    return design_dot_ * weights_by_dof + homogeneous_dot_ * boundary;
  }

  // d loss / d weights (N+1 x k) from d loss / d positions (L x k).
  Eigen::MatrixXd adjoint(const Eigen::Ref<const Eigen::MatrixXd>& grad_positions) const {
    return design_.transpose() * grad_positions;
  }

  Eigen::MatrixXd positions(const WeightVector& w, const BoundaryState& s0) const {
    return positions(weights_by_dof(w), boundary_matrix(s0));
  }

  static Eigen::MatrixXd weights_by_dof(const WeightVector& w) {
    return Eigen::Map<const Eigen::MatrixXd>(w.values().data(), w.n_basis() + 1, w.dof());
  }
  static Eigen::MatrixXd boundary_matrix(const BoundaryState& s0) {
    Eigen::MatrixXd b(2, s0.dof());
    b.row(0) = s0.position.transpose();
    b.row(1) = s0.velocity.transpose();
    return b;
  }

 private:
  int dof_ = 0;
  int n_basis_ = 0;
  double boundary_time_ = 0.0;
  std::vector<double> times_;
  Eigen::MatrixXd design_, design_dot_;
  Eigen::MatrixX2d homogeneous_, homogeneous_dot_;
};

// Ridge-regularized least-squares fit of weights to a sampled trajectory that
// starts from s0. The boundary coefficients are affine in w, so the fit is a
// plain linear regression on the DecodeOperator's design matrix.
inline WeightVector encode_least_squares(const BasisTable& table, const ActionSequence& traj,
                                         const BoundaryState& s0, double ridge) {
  traj.validate();
  const int dof = table.config.dof;
  const int cols = table.columns();
  if (traj.dof() != dof) throw ContractError("trajectory dof does not match basis table");
  if (traj.length() < cols)
    throw ContractError("trajectory needs at least n_basis + 1 samples per DoF");
  if (!(ridge >= 0.0)) throw ContractError("ridge must be >= 0");
  detail::check_shapes(table, WeightVector(dof, table.config.n_basis), s0);

  const std::vector<double> times = uniform_times(traj.start_time, traj.dt, traj.length());
  const DecodeOperator op(table, s0.time, times);
  const Eigen::MatrixXd residual = traj.values - op.homogeneous() * DecodeOperator::boundary_matrix(s0);

  const Eigen::MatrixXd& a = op.design();
  Eigen::MatrixXd normal = a.transpose() * a;
  if (ridge == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-10);
    if (qr.rank() < cols)
      throw NumericalError("rank-deficient design matrix; use ridge > 0");
  }
  normal.diagonal().array() += ridge;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  if (ldlt.info() != Eigen::Success) throw NumericalError("normal equations could not be factorized");
  const Eigen::MatrixXd w = ldlt.solve(a.transpose() * residual);  // (N+1) x k
  return WeightVector(dof, table.config.n_basis,
                      Eigen::Map<const Eigen::VectorXd>(w.data(), w.size()));
}

}  // namespace mpd::prodmp
