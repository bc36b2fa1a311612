#pragma once

#include <Eigen/Dense>

#include "mpd/error.hpp"

namespace mpd::denoiser {

// Per-dimension affine map of the training range [min, max] onto [-1, 1].
struct NormStats {
  Eigen::VectorXd offset;
  Eigen::VectorXd scale;

  Eigen::Index size() const { return offset.size(); }

  static NormStats identity(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
  }

  // Rows of `samples` are observations of the dimensions in its columns.
  static NormStats from_samples(const Eigen::Ref<const Eigen::MatrixXd>& samples) {
    if (samples.rows() == 0) throw ContractError("cannot compute normalization of an empty set");
    const Eigen::VectorXd lo = samples.colwise().minCoeff().transpose();
    const Eigen::VectorXd hi = samples.colwise().maxCoeff().transpose();
    NormStats s;
    s.offset = 0.5 * (hi + lo);
    s.scale = 0.5 * (hi - lo);
    for (Eigen::Index i = 0; i < s.scale.size(); ++i)
      if (!(s.scale(i) > 1e-12)) s.scale(i) = 1.0;  // constant dimension
    return s;
  }

  void validate() const {
    if (offset.size() != scale.size()) throw ContractError("normalization offset/scale sizes differ");
    if (!offset.allFinite() || !scale.allFinite() || (scale.array() <= 0.0).any())
      throw ContractError("normalization scale entries must be finite and > 0");
  }

  // Matrix overloads treat each row as one sample.
  Eigen::VectorXd normalize(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return (x - offset).cwiseQuotient(scale);
  }
  Eigen::VectorXd denormalize(const Eigen::Ref<const Eigen::VectorXd>& x) const {
    return x.cwiseProduct(scale) + offset;
  }
  Eigen::MatrixXd normalize_rows(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
    return (x.rowwise() - offset.transpose()).array().rowwise() / scale.transpose().array();
  }
  Eigen::MatrixXd denormalize_rows(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
    return (x.array().rowwise() * scale.transpose().array()).matrix().rowwise() + offset.transpose();
  }
  // Rates (velocities) only scale.
  Eigen::VectorXd normalize_rate(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return v.cwiseQuotient(scale);
  }
  Eigen::VectorXd denormalize_rate(const Eigen::Ref<const Eigen::VectorXd>& v) const {
    return v.cwiseProduct(scale);
  }
};

}  // namespace mpd::denoiser
