#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/error.hpp"
#include "mpd/random.hpp"

namespace mpd::denoiser {

// Exact Gaussian-error linear unit and its derivative.
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }
inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Fully connected network with GELU hidden layers and a linear output layer.
// All weights live in one flat vector so optimizers and checkpoints can treat
// them uniformly; layer l's weight is an (out x in) column-major block
// followed by its bias.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw ConfigError("network needs at least input and output sizes");
    for (int d : dims_)
      if (d < 1) throw ConfigError("layer sizes must be >= 1");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      weight_offsets_.push_back(offset);
      offset += static_cast<std::size_t>(dims_[l]) * dims_[l + 1];
      bias_offsets_.push_back(offset);
      offset += static_cast<std::size_t>(dims_[l + 1]);
    }
    theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(offset));
  }

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t layer_count() const { return dims_.size() - 1; }
  Eigen::Index parameter_count() const { return theta_.size(); }

  Eigen::VectorXd& parameters() { return theta_; }
  const Eigen::VectorXd& parameters() const { return theta_; }

  using MatMap = Eigen::Map<Eigen::MatrixXd>;
  using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  MatMap weight(std::size_t l) { return weight_view(theta_, l); }
  ConstMatMap weight(std::size_t l) const { return weight_view(theta_, l); }
  VecMap bias(std::size_t l) { return bias_view(theta_, l); }
  ConstVecMap bias(std::size_t l) const { return bias_view(theta_, l); }

  // Views of a same-shaped flat vector (e.g. gradients) laid out like theta.
  MatMap weight_view(Eigen::VectorXd& flat, std::size_t l) const {
    return MatMap(flat.data() + weight_offsets_[l], dims_[l + 1], dims_[l]);
  }
  ConstMatMap weight_view(const Eigen::VectorXd& flat, std::size_t l) const {
    return ConstMatMap(flat.data() + weight_offsets_[l], dims_[l + 1], dims_[l]);
  }
  VecMap bias_view(Eigen::VectorXd& flat, std::size_t l) const {
    return VecMap(flat.data() + bias_offsets_[l], dims_[l + 1]);
  }
  ConstVecMap bias_view(const Eigen::VectorXd& flat, std::size_t l) const {
    return ConstVecMap(flat.data() + bias_offsets_[l], dims_[l + 1]);
  }

  // Fan-in scaled normal initialization; the output layer starts at zero.
  void initialize(Rng& rng) {
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const bool last = l + 1 == layer_count();
      const double std_dev = last ? 0.0 : std::sqrt(1.0 / dims_[l]);
      auto w = weight(l);
      std::normal_distribution<double> dist(0.0, 1.0);
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = last ? 0.0 : std_dev * dist(rng);
      bias(l).setZero();
    }
  }

  // Activations kept for the backward pass. Columns are batch items.
  struct Tape {
    std::vector<Eigen::MatrixXd> inputs;     // input to layer l
    std::vector<Eigen::MatrixXd> pre_activ;  // W x + b of hidden layers
  };

  Eigen::MatrixXd forward(const Eigen::Ref<const Eigen::MatrixXd>& x, Tape* tape = nullptr) const {
    if (x.rows() != input_dim())
      throw ContractError("network input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(input_dim()));
    Eigen::MatrixXd h = x;
    if (tape) {
      tape->inputs.clear();
      tape->pre_activ.clear();
    }
    for (std::size_t l = 0; l < layer_count(); ++l) {
      Eigen::MatrixXd z = weight(l) * h;
      z.colwise() += bias(l);
      if (tape) tape->inputs.push_back(std::move(h));
      if (l + 1 == layer_count()) return z;
      h = z.unaryExpr([](double v) { return gelu(v); });
      if (tape) tape->pre_activ.push_back(std::move(z));
    }
    return h;  // unreachable
  }

  // Accumulates d loss / d theta into `grad` and returns d loss / d input,
  // given d loss / d output for the batch recorded in `tape`.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::Ref<const Eigen::MatrixXd>& grad_out,
                           Eigen::VectorXd& grad) const {
    if (grad.size() != theta_.size()) throw ContractError("gradient buffer has wrong size");
    if (grad_out.rows() != output_dim()) throw ContractError("upstream gradient has wrong size");
    Eigen::MatrixXd g = grad_out;
    for (std::size_t l = layer_count(); l-- > 0;) {
      weight_view(grad, l).noalias() += g * tape.inputs[l].transpose();
      bias_view(grad, l) += g.rowwise().sum();
      Eigen::MatrixXd g_in = weight(l).transpose() * g;
      if (l > 0) {
        g_in.array() *= tape.pre_activ[l - 1].unaryExpr([](double v) { return gelu_grad(v); }).array();
      }
      g = std::move(g_in);
    }
    return g;
  }

 private:
  std::vector<int> dims_;
  std::vector<std::size_t> weight_offsets_;
  std::vector<std::size_t> bias_offsets_;
  Eigen::VectorXd theta_;
};

}  // namespace mpd::denoiser
