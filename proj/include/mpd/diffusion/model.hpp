#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mpd/denoiser/params.hpp"
#include "mpd/diffusion/sampling.hpp"
#include "mpd/error.hpp"
#include "mpd/prodmp/basis.hpp"
#include "mpd/prodmp/trajectory.hpp"
#include "mpd/random.hpp"

namespace mpd::diffusion {

using denoiser::DenoiserParams;
using prodmp::BoundaryState;

// Everything besides the trainable weights that the denoiser needs: the
// ProDMP basis, the decode map onto the n low-frequency timestamps, and the
// noise preconditioning.
struct ModelContext {
  prodmp::BasisTable basis;
  prodmp::DecodeOperator decoder;  // boundary at t = 0, samples at j * dt_low
  NoiseConfig noise;
  Preconditioners precond;
  double dt_low = 0.1;
  int horizon = 12;

  static ModelContext make(const denoiser::Architecture& arch, const prodmp::ProDMPConfig& prodmp_cfg,
                           const NoiseConfig& noise, double dt_low) {
    if (prodmp_cfg.dof != arch.dof || prodmp_cfg.n_basis != arch.n_basis)
      throw DimensionError("ProDMP configuration does not match architecture");
    ModelContext ctx;
    ctx.basis = prodmp::precompute_basis(prodmp_cfg);
    ctx.dt_low = dt_low;
    ctx.horizon = arch.horizon;
    ctx.decoder = prodmp::DecodeOperator(ctx.basis, 0.0, prodmp::uniform_times(0.0, dt_low, arch.horizon));
    noise.validate();
    ctx.noise = noise;
    if (is_diffusion(arch.variant)) ctx.precond = preconditioners_for(arch.variant, noise);
    return ctx;
  }
};

// Decode map for a boundary at `boundary_time`; borrows the cached one when possible.
class DecoderFor {
 public:
  DecoderFor(const ModelContext& ctx, double boundary_time) : ptr_(&ctx.decoder) {
    if (boundary_time != ctx.decoder.boundary_time()) {
      own_.emplace(ctx.basis, boundary_time,
                   prodmp::uniform_times(boundary_time, ctx.dt_low, ctx.horizon));
      ptr_ = &*own_;
    }
  }
  DecoderFor(const DecoderFor&) = delete;
  DecoderFor& operator=(const DecoderFor&) = delete;
  const prodmp::DecodeOperator& operator*() const { return *ptr_; }
  const prodmp::DecodeOperator* operator->() const { return ptr_; }

 private:
  std::optional<prodmp::DecodeOperator> own_;
  const prodmp::DecodeOperator* ptr_;
};

// One training example in normalized units.
struct TrainingSample {
  Eigen::MatrixXd actions;       // n x k clean sequence
  Eigen::MatrixXd observations;  // m x obs_dim window
  BoundaryState boundary;        // s0 at t = 0
};

namespace detail {

inline void append_row_major(const Eigen::MatrixXd& m, double scale, Eigen::Ref<Eigen::VectorXd> out,
                             Eigen::Index& pos) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out(pos++) = scale * m(r, c);
}

inline Eigen::MatrixXd from_row_major(const Eigen::Ref<const Eigen::VectorXd>& v, Eigen::Index rows,
                                      Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v(r * cols + c);
  return m;
}

inline void check_sample_shapes(const denoiser::Architecture& a, const Eigen::MatrixXd& seq,
                                const Eigen::MatrixXd& obs) {
  if (seq.rows() != a.horizon || seq.cols() != a.dof)
    throw ContractError("sequence is " + std::to_string(seq.rows()) + "x" + std::to_string(seq.cols()) +
                        ", expected " + std::to_string(a.horizon) + "x" + std::to_string(a.dof));
  if (obs.rows() != a.history || obs.cols() != a.obs_dim)
    throw ContractError("observation window is " + std::to_string(obs.rows()) + "x" +
                        std::to_string(obs.cols()) + ", expected " + std::to_string(a.history) + "x" +
                        std::to_string(a.obs_dim));
}

}  // namespace detail

// Network input column for one item: [c_in * tau (row-major); obs (row-major); c_noise].
inline Eigen::VectorXd network_input(const DenoiserParams& params, const ModelContext& ctx,
                                     const Eigen::MatrixXd& noisy, const Eigen::MatrixXd& obs, double t) {
  const auto& a = params.arch;
  Eigen::VectorXd in(a.input_dim());
  Eigen::Index pos = 0;
  if (is_diffusion(a.variant)) {
    detail::check_sample_shapes(a, noisy, obs);
    detail::append_row_major(noisy, ctx.precond.c_in(t), in, pos);
  } else if (obs.rows() != a.history || obs.cols() != a.obs_dim) {
    throw ContractError("observation window has wrong shape");
  }
  detail::append_row_major(obs, 1.0, in, pos);
  if (is_diffusion(a.variant)) in(pos++) = ctx.precond.c_noise(t);
  return in;
}

// Maps one raw network output column to the model output sequence.
inline DenoiseResult compose_output(const DenoiserParams& params, const ModelContext& ctx,
                                    const Eigen::Ref<const Eigen::VectorXd>& net_out,
                                    const Eigen::MatrixXd& noisy, double t, const BoundaryState& s0) {
  const auto& a = params.arch;
  if (emits_weights(a.variant)) {
    if (s0.position.size() != a.dof || s0.velocity.size() != a.dof)
      throw ContractError("boundary state dimension does not match dof");
    const DecoderFor op(ctx, s0.time);
    const Eigen::Map<const Eigen::MatrixXd> w(net_out.data(), a.n_basis + 1, a.dof);
    return {op->positions(w, prodmp::DecodeOperator::boundary_matrix(s0)), Eigen::VectorXd(net_out)};
  }
  const Eigen::MatrixXd f = detail::from_row_major(net_out, a.horizon, a.dof);
  return {ctx.precond.c_skip(t) * noisy + ctx.precond.c_out(t) * f, std::nullopt};
}

// D(tau, o, t) for a single item.
inline DenoiseResult denoise(const DenoiserParams& params, const ModelContext& ctx,
                             const Eigen::MatrixXd& noisy, const Eigen::MatrixXd& obs, double t,
                             const BoundaryState& s0) {
  if (!is_diffusion(params.arch.variant)) throw ConfigError("denoise requires a diffusion variant");
  if (!(t > 0.0)) throw RangeError("noise level must be > 0");
  const Eigen::VectorXd in = network_input(params, ctx, noisy, obs, t);
  const Eigen::VectorXd out = params.net.forward(in);
  return compose_output(params, ctx, out, noisy, t, s0);
}

// Runs the Euler sampler for one observation window and boundary.
inline SampleResult sample(const DenoiserParams& params, const ModelContext& ctx, const Eigen::MatrixXd& obs,
                           const BoundaryState& s0, const Schedule& schedule, Rng& rng) {
  auto fn = [&](const Eigen::MatrixXd& x, double t) { return denoise(params, ctx, x, obs, t, s0); };
  return euler_sample(fn, schedule, params.arch.horizon, params.arch.dof, rng);
}

struct NoiseDraw {
  double t = 1.0;
  Eigen::MatrixXd eta;  // n x k, ~ N(0, t^2 I)
};

inline std::vector<NoiseDraw> draw_noise(std::span<const TrainingSample> batch, Rng& rng,
                                         const NoiseConfig& cfg) {
  std::vector<NoiseDraw> draws;
  draws.reserve(batch.size());
  for (const auto& s : batch) {
    NoiseDraw d;
    d.t = sample_noise_level(rng, cfg);
    d.eta = normal_matrix(rng, s.actions.rows(), s.actions.cols(), d.t);
    draws.push_back(std::move(d));
  }
  return draws;
}

struct LossResult {
  double loss = 0.0;
  Eigen::VectorXd grad;  // d loss / d network parameters (empty if not requested)
};

// Denoising score-matching objective for fixed noise draws, averaged over
// the batch, with reverse-mode gradients through the network and (for the
// ProDMP variant) the decode and boundary solve.
inline LossResult dsm_loss_fixed(const DenoiserParams& params, const ModelContext& ctx,
                                 std::span<const TrainingSample> batch, std::span<const NoiseDraw> draws,
                                 bool want_grad = true) {
  const auto& a = params.arch;
  if (!is_diffusion(a.variant)) throw ConfigError("dsm_loss requires a diffusion variant");
  if (batch.empty()) throw ContractError("empty training batch");
  if (draws.size() != batch.size()) throw ContractError("one noise draw per batch item is required");
  const auto count = static_cast<Eigen::Index>(batch.size());

  std::vector<Eigen::MatrixXd> noisy(batch.size());
  Eigen::MatrixXd inputs(a.input_dim(), count);
  for (Eigen::Index b = 0; b < count; ++b) {
    const auto& s = batch[b];
    noisy[b] = s.actions + draws[b].eta;
    inputs.col(b) = network_input(params, ctx, noisy[b], s.observations, draws[b].t);
  }
  denoiser::Mlp::Tape tape;
  const Eigen::MatrixXd out = params.net.forward(inputs, want_grad ? &tape : nullptr);

  LossResult result;
  Eigen::MatrixXd grad_out(out.rows(), count);
  const double inv_batch = 1.0 / static_cast<double>(count);
  for (Eigen::Index b = 0; b < count; ++b) {
    const auto& s = batch[b];
    const double t = draws[b].t;
    const DenoiseResult d = compose_output(params, ctx, out.col(b), noisy[b], t, s.boundary);
    const Eigen::MatrixXd diff = d.value - s.actions;
    const double weight = loss_weight(t, ctx.noise, ctx.precond);
    const double item = weight * diff.squaredNorm();
    if (!std::isfinite(item)) throw TrainingError("non-finite loss at noise level t = " + std::to_string(t));
    result.loss += inv_batch * item;
    if (!want_grad) continue;
    const Eigen::MatrixXd g_seq = (2.0 * weight * inv_batch) * diff;  // n x k
    if (emits_weights(a.variant)) {
      const DecoderFor op(ctx, s.boundary.time);
      const Eigen::MatrixXd g_w = op->adjoint(g_seq);  // (N+1) x k, DoF-major when flattened
      grad_out.col(b) = Eigen::Map<const Eigen::VectorXd>(g_w.data(), g_w.size());
    } else {
      const Eigen::MatrixXd g_f = ctx.precond.c_out(t) * g_seq;
      Eigen::Index pos = 0;
      Eigen::VectorXd col(out.rows());
      detail::append_row_major(g_f, 1.0, col, pos);
      grad_out.col(b) = col;
    }
  }
  if (want_grad) {
    result.grad = Eigen::VectorXd::Zero(params.net.parameter_count());
    params.net.backward(tape, grad_out, result.grad);
  }
  return result;
}

inline LossResult dsm_loss(const DenoiserParams& params, const ModelContext& ctx,
                           std::span<const TrainingSample> batch, Rng& rng, bool want_grad = true) {
  const std::vector<NoiseDraw> draws = draw_noise(batch, rng, ctx.noise);
  return dsm_loss_fixed(params, ctx, batch, draws, want_grad);
}

// Per-item objective in its simplified form, ||(D - tau) / t^2||^2.
inline double dsm_objective(const Eigen::MatrixXd& denoised, const Eigen::MatrixXd& clean, double t) {
  return ((denoised - clean) / (t * t)).squaredNorm();
}

// Same objective written against the Gaussian kernel score,
// ||(D - tau~) / t^2 - grad log q(tau~ | tau)||^2 with grad log q = (tau - tau~) / t^2.
inline double dsm_objective_score_form(const Eigen::MatrixXd& denoised, const Eigen::MatrixXd& clean,
                                       const Eigen::MatrixXd& noisy, double t) {
  const double t2 = t * t;
  const Eigen::MatrixXd model_score = (denoised - noisy) / t2;
  const Eigen::MatrixXd kernel_score = (clean - noisy) / t2;
  return (model_score - kernel_score).squaredNorm();
}

// Mean-squared regression of the network output onto target weight vectors
// (single-Gaussian behavior cloning reference).
inline LossResult regression_loss(const DenoiserParams& params, std::span<const TrainingSample> batch,
                                  std::span<const Eigen::VectorXd> targets, bool want_grad = true) {
  const auto& a = params.arch;
  if (a.variant != Variant::kRegression) throw ConfigError("regression_loss requires the regression variant");
  if (batch.empty() || targets.size() != batch.size()) throw ContractError("batch/target size mismatch");
  const auto count = static_cast<Eigen::Index>(batch.size());
  Eigen::MatrixXd inputs(a.input_dim(), count);
  for (Eigen::Index b = 0; b < count; ++b) {
    Eigen::Index pos = 0;
    Eigen::VectorXd col(a.input_dim());
    detail::append_row_major(batch[b].observations, 1.0, col, pos);
    inputs.col(b) = col;
  }
  denoiser::Mlp::Tape tape;
  const Eigen::MatrixXd out = params.net.forward(inputs, want_grad ? &tape : nullptr);
  Eigen::MatrixXd target(out.rows(), count);
  for (Eigen::Index b = 0; b < count; ++b) target.col(b) = targets[b];
  const Eigen::MatrixXd diff = out - target;
  LossResult r;
  r.loss = diff.squaredNorm() / static_cast<double>(count);
  if (want_grad) {
    r.grad = Eigen::VectorXd::Zero(params.net.parameter_count());
    params.net.backward(tape, (2.0 / static_cast<double>(count)) * diff, r.grad);
  }
  return r;
}

// Regression model prediction: weights for one observation window.
inline Eigen::VectorXd predict_weights(const DenoiserParams& params, const Eigen::MatrixXd& obs) {
  if (params.arch.variant != Variant::kRegression) throw ConfigError("predict_weights requires the regression variant");
  if (obs.rows() != params.arch.history || obs.cols() != params.arch.obs_dim)
    throw ContractError("observation window has wrong shape");
  Eigen::VectorXd in(params.arch.input_dim());
  Eigen::Index pos = 0;
  detail::append_row_major(obs, 1.0, in, pos);
  return params.net.forward(in);
}

}  // namespace mpd::diffusion
