#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/error.hpp"
#include "mpd/random.hpp"
#include "mpd/variant.hpp"

namespace mpd::diffusion {

using mpd::Variant;

enum class LossWeighting {
  kLiteral,  // ||(D - tau) / t^2||^2
  kEdm,      // ||D - tau||^2 (t^2 + sigma_d^2) / (t sigma_d)^2
  kBalanced,  // ||D - tau||^2 / c_out(t)^2: EDM's weighting for the baseline, 1 for MPD
};

struct NoiseConfig {
  double sigma_min = 0.001;
  double sigma_max = 80.0;
  double sigma_data = 0.5;
  double train_loc = std::log(0.5);  // logistic location in log-noise space
  double train_scale = 0.6;
  int n_sample_steps = 10;
  LossWeighting weighting = LossWeighting::kLiteral;

  void validate() const {
    if (!(sigma_min > 0.0) || !(sigma_max > sigma_min))
      throw ConfigError("need 0 < sigma_min < sigma_max");
    if (!(sigma_data > 0.0)) throw ConfigError("sigma_data must be > 0");
    if (!(train_scale > 0.0)) throw ConfigError("train_dist scale must be > 0");
    if (n_sample_steps < 1) throw ConfigError("n_sample_steps must be >= 1");
  }
};

// c_skip, c_out, c_in, c_noise as functions of the noise level t.
class Preconditioners {
 public:
  Preconditioners() = default;
  Preconditioners(Variant v, double sigma_data) : variant_(v), sigma_data_(sigma_data) {}

  Variant variant() const { return variant_; }

  double c_skip(double t) const {
    check(t);
    if (variant_ == Variant::kMpd) return 0.0;
    const double sd2 = sigma_data_ * sigma_data_;
    return sd2 / (t * t + sd2);
  }
  double c_out(double t) const {
    check(t);
    if (variant_ == Variant::kMpd) return 1.0;
    return t * sigma_data_ / std::sqrt(t * t + sigma_data_ * sigma_data_);
  }
  double c_in(double t) const {
    check(t);
    return 1.0 / std::sqrt(t * t + sigma_data_ * sigma_data_);
  }
  double c_noise(double t) const {
    check(t);
    return std::log(t) / 4.0;
  }

 private:
  static void check(double t) {
    if (!(t > 0.0) || !std::isfinite(t))
      throw RangeError("noise level must be > 0, got " + std::to_string(t));
  }

  Variant variant_ = Variant::kMpd;
  double sigma_data_ = 0.5;
};

inline Preconditioners preconditioners_for(Variant v, const NoiseConfig& cfg) {
  cfg.validate();
  if (!is_diffusion(v)) throw ConfigError("preconditioning is only defined for diffusion variants");
  return Preconditioners(v, cfg.sigma_data);
}

// Logistic draw in log-noise space, clamped to [sigma_min, sigma_max].
inline double noise_level_from_uniform(double u, const NoiseConfig& cfg) {
  if (u <= 0.0) return cfg.sigma_min;
  if (u >= 1.0) return cfg.sigma_max;
  const double x = cfg.train_loc + cfg.train_scale * std::log(u / (1.0 - u));
  return std::clamp(std::exp(x), cfg.sigma_min, cfg.sigma_max);
}

inline double sample_noise_level(Rng& rng, const NoiseConfig& cfg) {
  return noise_level_from_uniform(uniform(rng), cfg);
}

// Training-loss weight for one item at noise level t.
inline double loss_weight(double t, const NoiseConfig& cfg, const Preconditioners& precond) {
  if (cfg.weighting == LossWeighting::kLiteral) return 1.0 / (t * t * t * t);
  if (cfg.weighting == LossWeighting::kBalanced) {
    const double c = precond.c_out(t);
    return 1.0 / (c * c);
  }
  const double sd = cfg.sigma_data;
  return (t * t + sd * sd) / (t * sd * t * sd);
}

// Strictly decreasing noise levels, sigma_max first, exactly 0 last.
struct Schedule {
  std::vector<double> levels;
};

inline Schedule make_schedule(const NoiseConfig& cfg) {
  if (cfg.n_sample_steps < 1) throw ConfigError("n_sample_steps must be >= 1");
  cfg.validate();
  const int k = cfg.n_sample_steps;
  Schedule s;
  s.levels.reserve(k + 1);
  if (k == 1) {
    s.levels.push_back(cfg.sigma_max);
  } else {
    const double ratio = cfg.sigma_min / cfg.sigma_max;
    for (int j = 0; j < k; ++j) {
      // j = 0 is the largest level.
      s.levels.push_back(cfg.sigma_max * std::pow(ratio, static_cast<double>(j) / (k - 1)));
    }
    s.levels.front() = cfg.sigma_max;
    s.levels.back() = cfg.sigma_min;
  }
  s.levels.push_back(0.0);
  return s;
}

// What a denoiser call returns: the denoised sequence and, for weight-emitting
// models, the weights it was decoded from.
struct DenoiseResult {
  Eigen::MatrixXd value;
  std::optional<Eigen::VectorXd> weights;
};

struct SampleResult {
  Eigen::MatrixXd sequence;
  std::optional<Eigen::VectorXd> weights;  // from the final denoise call
};

// Euler integration of the probability-flow ODE d tau = (tau - D(tau, t)) / t dt
// from the prior sample `initial` (already scaled by the first level).
template <typename DenoiseFn>
SampleResult euler_integrate(DenoiseFn&& denoise, const Schedule& schedule, Eigen::MatrixXd initial) {
  if (schedule.levels.size() < 2 || schedule.levels.back() != 0.0)
    throw ConfigError("schedule must have at least two levels ending in 0");
  Eigen::MatrixXd x = std::move(initial);
  SampleResult result;
  for (std::size_t i = 0; i + 1 < schedule.levels.size(); ++i) {
    const double t_cur = schedule.levels[i];
    const double t_next = schedule.levels[i + 1];
    DenoiseResult d = denoise(static_cast<const Eigen::MatrixXd&>(x), t_cur);
    if (!d.value.allFinite())
      throw SamplingError("non-finite denoiser output at t = " + std::to_string(t_cur));
    if (t_next == 0.0) {
      x = std::move(d.value);
    } else {
      const Eigen::MatrixXd slope = (x - d.value) / t_cur;
      x += (t_next - t_cur) * slope;
    }
    if (!x.allFinite()) throw SamplingError("non-finite sample at t = " + std::to_string(t_next));
    result.weights = std::move(d.weights);
  }
  result.sequence = std::move(x);
  return result;
}

// Draws the prior tau ~ t_K N(0, I) with the given shape and integrates it.
template <typename DenoiseFn>
SampleResult euler_sample(DenoiseFn&& denoise, const Schedule& schedule, Eigen::Index rows,
                          Eigen::Index cols, Rng& rng) {
  Eigen::MatrixXd prior = normal_matrix(rng, rows, cols, schedule.levels.front());
  return euler_integrate(std::forward<DenoiseFn>(denoise), schedule, std::move(prior));
}

}  // namespace mpd::diffusion
