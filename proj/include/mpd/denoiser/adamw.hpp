#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "mpd/error.hpp"

namespace mpd::denoiser {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-6;
};

// Adam with decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
struct OptimizerState {
  AdamWConfig config;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  long step = 0;

  OptimizerState() = default;
  OptimizerState(AdamWConfig cfg, Eigen::Index parameter_count)
      : config(cfg), first_moment(Eigen::VectorXd::Zero(parameter_count)),
        second_moment(Eigen::VectorXd::Zero(parameter_count)) {}
};

inline void adamw_step(OptimizerState& opt, Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
  if (params.size() != grads.size() || opt.first_moment.size() != params.size() ||
      opt.second_moment.size() != params.size())
    throw ContractError("optimizer, parameter and gradient shapes differ");
  if (!grads.allFinite()) throw TrainingError("non-finite gradient at optimizer step " + std::to_string(opt.step + 1));
  const AdamWConfig& c = opt.config;
  ++opt.step;
  opt.first_moment = c.beta1 * opt.first_moment + (1.0 - c.beta1) * grads;
  opt.second_moment = c.beta2 * opt.second_moment + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double bias1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bias2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  const Eigen::ArrayXd m_hat = opt.first_moment.array() / bias1;
  const Eigen::ArrayXd v_hat = opt.second_moment.array() / bias2;
  params.array() -= c.learning_rate * (m_hat / (v_hat.sqrt() + c.epsilon) + c.weight_decay * params.array());
}

// Exponential moving average of the parameters with the usual warm-up: the
// effective decay is min(decay, (1 + step) / (10 + step)).
inline void ema_update(Eigen::VectorXd& average, const Eigen::VectorXd& params, double decay, long step) {
  if (average.size() != params.size()) throw ContractError("moving average and parameter shapes differ");
  const double d = std::min(decay, (1.0 + static_cast<double>(step)) / (10.0 + static_cast<double>(step)));
  average = d * average + (1.0 - d) * params;
}

}  // namespace mpd::denoiser
