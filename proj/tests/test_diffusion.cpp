#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mpd/denoiser/params.hpp"
#include "mpd/diffusion/model.hpp"
#include "mpd/diffusion/sampling.hpp"

using namespace mpd;
using namespace mpd::diffusion;

namespace {

denoiser::Architecture small_arch(Variant v) {
  denoiser::Architecture a;
  a.variant = v;
  a.horizon = 12;
  a.dof = 2;
  a.history = 3;
  a.obs_dim = 4;
  a.hidden = {16, 16};
  return a;
}

ModelContext context_for(const denoiser::Architecture& a, NoiseConfig noise = {}) {
  prodmp::ProDMPConfig cfg;
  cfg.dof = a.dof;
  cfg.n_basis = a.n_basis;
  cfg.duration = a.horizon * 0.1;
  return ModelContext::make(a, cfg, noise, 0.1);
}

std::vector<TrainingSample> random_batch(int count, const denoiser::Architecture& a, Rng& rng) {
  std::vector<TrainingSample> batch;
  for (int i = 0; i < count; ++i) {
    TrainingSample s;
    s.actions = normal_matrix(rng, a.horizon, a.dof, 0.5);
    s.observations = normal_matrix(rng, a.history, a.obs_dim);
    s.boundary.position = normal_matrix(rng, a.dof, 1, 0.5);
    s.boundary.velocity = normal_matrix(rng, a.dof, 1, 0.5);
    s.boundary.time = 0.0;
    // The clean sequence starts on its boundary like real training data.
    s.actions.row(0) = s.boundary.position.transpose();
    batch.push_back(s);
  }
  return batch;
}

// Network with every parameter nonzero (the zero-initialized output layer
// would otherwise block gradients to the hidden layers).
denoiser::DenoiserParams randomized_params(const denoiser::Architecture& a, std::uint64_t seed) {
  Rng rng(seed);
  auto p = denoiser::init_params(rng, a);
  for (auto& v : p.net.parameters()) v += 0.2 * normal(rng);
  return p;
}

}  // namespace

TEST(Preconditioners, MpdAtUnitNoise) {
  const auto p = preconditioners_for(Variant::kMpd, NoiseConfig{});
  EXPECT_EQ(p.c_noise(1.0), 0.0);
  EXPECT_NEAR(p.c_in(1.0), 1.0 / std::sqrt(1.25), 1e-15);
  EXPECT_NEAR(p.c_in(1.0), 0.8944, 1e-4);
  EXPECT_EQ(p.c_skip(1.0), 0.0);
  EXPECT_EQ(p.c_out(1.0), 1.0);
}

TEST(Preconditioners, RejectsNonPositiveNoise) {
  const auto p = preconditioners_for(Variant::kMpd, NoiseConfig{});
  EXPECT_THROW(p.c_noise(0.0), RangeError);
  EXPECT_THROW(p.c_in(-1.0), RangeError);
}

TEST(Preconditioners, BaselineLimitAtSmallNoise) {
  const auto p = preconditioners_for(Variant::kBaseline, NoiseConfig{});
  EXPECT_NEAR(p.c_skip(1e-3), 1.0, 1e-5);
  EXPECT_NEAR(p.c_out(1e-3), 0.0, 1e-3);
  EXPECT_NEAR(p.c_skip(0.5), 0.5, 1e-15);
}

TEST(NoiseLevels, LogisticMedianAndClamp) {
  NoiseConfig cfg;
  EXPECT_NEAR(noise_level_from_uniform(0.5, cfg), std::exp(cfg.train_loc), 1e-15);
  EXPECT_EQ(noise_level_from_uniform(1e-300, cfg), cfg.sigma_min);
  EXPECT_EQ(noise_level_from_uniform(0.0, cfg), cfg.sigma_min);
  EXPECT_EQ(noise_level_from_uniform(1.0, cfg), cfg.sigma_max);
}

TEST(NoiseLevels, EmpiricalMedian) {
  NoiseConfig cfg;
  Rng rng(1);
  std::vector<double> draws(100000);
  for (auto& d : draws) d = sample_noise_level(rng, cfg);
  std::nth_element(draws.begin(), draws.begin() + draws.size() / 2, draws.end());
  EXPECT_NEAR(draws[draws.size() / 2], 0.5, 0.01);
}

TEST(Schedule, OneStep) {
  NoiseConfig cfg;
  cfg.n_sample_steps = 1;
  const auto s = make_schedule(cfg);
  ASSERT_EQ(s.levels.size(), 2u);
  EXPECT_EQ(s.levels[0], cfg.sigma_max);
  EXPECT_EQ(s.levels[1], 0.0);
}

TEST(Schedule, GeometricMidpoint) {
  NoiseConfig cfg;
  cfg.n_sample_steps = 3;
  const auto s = make_schedule(cfg);
  ASSERT_EQ(s.levels.size(), 4u);
  EXPECT_NEAR(s.levels[1], std::sqrt(80.0 * 0.001), 1e-12);
  EXPECT_NEAR(s.levels[1], 0.2828, 1e-4);
  EXPECT_EQ(s.levels[2], 0.001);
}

TEST(Schedule, EndpointsAndMonotone) {
  for (int k : {1, 2, 5, 10, 50}) {
    NoiseConfig cfg;
    cfg.n_sample_steps = k;
    const auto s = make_schedule(cfg);
    EXPECT_EQ(s.levels.front(), cfg.sigma_max);
    EXPECT_EQ(s.levels.back(), 0.0);
    for (std::size_t i = 1; i < s.levels.size(); ++i) EXPECT_LT(s.levels[i], s.levels[i - 1]);
  }
  NoiseConfig bad;
  bad.n_sample_steps = 0;
  EXPECT_THROW(make_schedule(bad), ConfigError);
}

TEST(EulerSampler, ConstantDenoiserOneStep) {
  NoiseConfig cfg;
  cfg.n_sample_steps = 1;
  const Eigen::MatrixXd x0 = (Eigen::MatrixXd(2, 2) << 0.1, 0.2, 0.3, 0.4).finished();
  auto d = [&](const Eigen::MatrixXd&, double) { return DenoiseResult{x0, std::nullopt}; };
  Rng rng(5);
  const auto r = euler_sample(d, make_schedule(cfg), 2, 2, rng);
  EXPECT_EQ(r.sequence, x0);
}

TEST(EulerSampler, IdentityDenoiserHasNoDrift) {
  NoiseConfig cfg;
  const Eigen::MatrixXd start = (Eigen::MatrixXd(3, 1) << 1.5, -2.0, 0.25).finished();
  auto d = [](const Eigen::MatrixXd& x, double) { return DenoiseResult{x, std::nullopt}; };
  const auto r = euler_integrate(d, make_schedule(cfg), start);
  EXPECT_EQ(r.sequence, start);
}

TEST(EulerSampler, GaussianPosteriorMeanOracle) {
  const double mu = 0.3, s = 0.2;
  auto d = [&](const Eigen::MatrixXd& x, double t) {
    return DenoiseResult{((s * s) * x.array() + t * t * mu).matrix() / (s * s + t * t), std::nullopt};
  };
  NoiseConfig cfg;
  cfg.n_sample_steps = 50;
  Rng rng(2024);
  const auto r = euler_sample(d, make_schedule(cfg), 10000, 1, rng);
  const double mean = r.sequence.mean();
  const double sd = std::sqrt((r.sequence.array() - mean).square().sum() / (r.sequence.size() - 1));
  EXPECT_NEAR(mean, mu, 0.01);
  EXPECT_NEAR(sd, s, 0.05 * s);
}

TEST(EulerSampler, DeterministicUnderSeed) {
  auto d = [](const Eigen::MatrixXd& x, double t) {
    return DenoiseResult{(x / (1.0 + t)).eval(), std::nullopt};
  };
  NoiseConfig cfg;
  Rng a(9), b(9);
  EXPECT_EQ(euler_sample(d, make_schedule(cfg), 4, 3, a).sequence,
            euler_sample(d, make_schedule(cfg), 4, 3, b).sequence);
}

TEST(EulerSampler, NonFiniteIsSamplingError) {
  auto d = [](const Eigen::MatrixXd& x, double) {
    return DenoiseResult{Eigen::MatrixXd::Constant(x.rows(), x.cols(), NAN), std::nullopt};
  };
  Rng rng(1);
  EXPECT_THROW(euler_sample(d, make_schedule(NoiseConfig{}), 1, 1, rng), SamplingError);
}

TEST(Denoise, FreshMpdOutputsDecodedZeroWeights) {
  const auto a = small_arch(Variant::kMpd);
  const auto ctx = context_for(a);
  Rng rng(3);
  const auto p = denoiser::init_params(rng, a);
  const auto noisy = normal_matrix(rng, a.horizon, a.dof, 3.0);
  const auto obs = normal_matrix(rng, a.history, a.obs_dim);
  const auto r = denoise(p, ctx, noisy, obs, 2.0, BoundaryState::zero(a.dof));
  EXPECT_TRUE(r.value.isZero(0.0));
  ASSERT_TRUE(r.weights.has_value());
  EXPECT_TRUE(r.weights->isZero(0.0));
}

TEST(Denoise, MpdOutputSatisfiesBoundary) {
  const auto a = small_arch(Variant::kMpd);
  const auto ctx = context_for(a);
  const auto p = randomized_params(a, 17);
  Rng rng(4);
  for (double t : {80.0, 3.0, 0.5, 0.01, 0.001}) {
    const BoundaryState s0{Eigen::Vector2d(0.3, -0.7), Eigen::Vector2d(1.0, 0.2), 0.0};
    const auto r = denoise(p, ctx, normal_matrix(rng, 12, 2, t), normal_matrix(rng, 3, 4), t, s0);
    EXPECT_NEAR(r.value(0, 0), 0.3, 1e-9);
    EXPECT_NEAR(r.value(0, 1), -0.7, 1e-9);
  }
}

TEST(Denoise, BaselineZeroNetworkHalvesInputAtSigmaData) {
  const auto a = small_arch(Variant::kBaseline);
  const auto ctx = context_for(a);
  Rng rng(3);
  const auto p = denoiser::init_params(rng, a);
  const auto noisy = normal_matrix(rng, a.horizon, a.dof);
  const auto r = denoise(p, ctx, noisy, normal_matrix(rng, 3, 4), 0.5, BoundaryState::zero(2));
  EXPECT_LE((r.value - 0.5 * noisy).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_FALSE(r.weights.has_value());
}

TEST(Denoise, ShapeMismatchIsContractError) {
  const auto a = small_arch(Variant::kMpd);
  const auto ctx = context_for(a);
  Rng rng(3);
  const auto p = denoiser::init_params(rng, a);
  EXPECT_THROW(denoise(p, ctx, Eigen::MatrixXd::Zero(11, 2), Eigen::MatrixXd::Zero(3, 4), 1.0,
                       BoundaryState::zero(2)),
               ContractError);
  EXPECT_THROW(denoise(p, ctx, Eigen::MatrixXd::Zero(12, 2), Eigen::MatrixXd::Zero(2, 4), 1.0,
                       BoundaryState::zero(2)),
               ContractError);
}

TEST(Denoise, MpdBoundaryHoldsAtEverySamplerStep) {
  const auto a = small_arch(Variant::kMpd);
  const auto ctx = context_for(a);
  const auto p = randomized_params(a, 23);
  const BoundaryState s0{Eigen::Vector2d(-0.4, 0.9), Eigen::Vector2d(0.0, 0.5), 0.0};
  const Eigen::MatrixXd obs = Eigen::MatrixXd::Constant(3, 4, 0.1);
  int calls = 0;
  auto fn = [&](const Eigen::MatrixXd& x, double t) {
    auto r = denoise(p, ctx, x, obs, t, s0);
    EXPECT_NEAR(r.value(0, 0), -0.4, 1e-9);
    EXPECT_NEAR(r.value(0, 1), 0.9, 1e-9);
    ++calls;
    return r;
  };
  Rng rng(8);
  const auto out = euler_sample(fn, make_schedule(NoiseConfig{}), 12, 2, rng);
  EXPECT_EQ(calls, 10);
  ASSERT_TRUE(out.weights.has_value());
  EXPECT_EQ(out.weights->size(), 8);
}

TEST(DsmLoss, ExactDenoiserGivesZero) {
  const Eigen::MatrixXd tau = Eigen::MatrixXd::Random(12, 2);
  EXPECT_EQ(dsm_objective(tau, tau, 0.7), 0.0);
}

TEST(DsmLoss, UnitErrorAtUnitNoise) {
  Eigen::MatrixXd tau = Eigen::MatrixXd::Zero(12, 2);
  Eigen::MatrixXd d = tau;
  d(3, 1) = 1.0;
  EXPECT_EQ(dsm_objective(d, tau, 1.0), 1.0);
}

TEST(DsmLoss, BalancedWeightingFollowsOutputScaling) {
  NoiseConfig edm, balanced;
  edm.weighting = LossWeighting::kEdm;
  balanced.weighting = LossWeighting::kBalanced;
  const auto mpd = preconditioners_for(Variant::kMpd, balanced);
  const auto base = preconditioners_for(Variant::kBaseline, balanced);
  for (double t : {0.001, 0.05, 0.5, 3.0, 80.0}) {
    EXPECT_EQ(loss_weight(t, balanced, mpd), 1.0);
    EXPECT_NEAR(loss_weight(t, balanced, base), loss_weight(t, edm, base), 1e-12 * loss_weight(t, edm, base));
  }
}

TEST(DsmLoss, ScoreFormIdentity) {
  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    const double t = noise_level_from_uniform(uniform(rng), NoiseConfig{});
    const Eigen::MatrixXd tau = normal_matrix(rng, 12, 4, 0.5);
    const Eigen::MatrixXd noisy = tau + normal_matrix(rng, 12, 4, t);
    const Eigen::MatrixXd d = tau + normal_matrix(rng, 12, 4, 0.1);
    const double a = dsm_objective(d, tau, t);
    const double b = dsm_objective_score_form(d, tau, noisy, t);
    EXPECT_LE(std::abs(a - b), 1e-10 * std::max(1.0, std::abs(a)));
  }
}

TEST(DsmLoss, BatchLossMatchesPerItemObjective) {
  const auto a = small_arch(Variant::kMpd);
  const auto ctx = context_for(a);
  const auto p = randomized_params(a, 2);
  Rng rng(6);
  const auto batch = random_batch(3, a, rng);
  const auto draws = draw_noise(batch, rng, ctx.noise);
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) {
    const auto d = denoise(p, ctx, batch[i].actions + draws[i].eta, batch[i].observations, draws[i].t,
                           batch[i].boundary);
    expected += dsm_objective(d.value, batch[i].actions, draws[i].t) / 3.0;
  }
  const auto r = dsm_loss_fixed(p, ctx, batch, draws, false);
  EXPECT_NEAR(r.loss, expected, 1e-10 * expected);
  EXPECT_GE(r.loss, 0.0);
}

class GradientCheck : public ::testing::TestWithParam<std::tuple<Variant, LossWeighting>> {};

TEST_P(GradientCheck, MatchesCentralDifferences) {
  const auto [variant, weighting] = GetParam();
  const auto a = small_arch(variant);
  NoiseConfig noise;
  noise.weighting = weighting;
  const auto ctx = context_for(a, noise);
  auto p = randomized_params(a, 31);
  Rng rng(77);
  const auto batch = random_batch(2, a, rng);
  const auto draws = draw_noise(batch, rng, ctx.noise);
  const auto analytic = dsm_loss_fixed(p, ctx, batch, draws, true);

  const double eps = 1e-5;
  double worst = 0.0;
  Eigen::VectorXd& theta = p.net.parameters();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double saved = theta(i);
    theta(i) = saved + eps;
    const double up = dsm_loss_fixed(p, ctx, batch, draws, false).loss;
    theta(i) = saved - eps;
    const double down = dsm_loss_fixed(p, ctx, batch, draws, false).loss;
    theta(i) = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double g = analytic.grad(i);
    // Entries below the central-difference roundoff floor (~eps_mach * |loss| / eps)
    // are compared against that floor instead of their own magnitude.
    const double floor = 1e-6 * std::max(1.0, std::abs(analytic.loss));
    const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
    worst = std::max(worst, rel);
  }
  EXPECT_LE(worst, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Variants, GradientCheck,
                         ::testing::Values(std::make_tuple(Variant::kMpd, LossWeighting::kLiteral),
                                           std::make_tuple(Variant::kMpd, LossWeighting::kEdm),
                                           std::make_tuple(Variant::kMpd, LossWeighting::kBalanced),
                                           std::make_tuple(Variant::kBaseline, LossWeighting::kLiteral),
                                           std::make_tuple(Variant::kBaseline, LossWeighting::kBalanced)));

TEST(RegressionLoss, GradientMatchesCentralDifferences) {
  auto a = small_arch(Variant::kRegression);
  auto p = randomized_params(a, 5);
  Rng rng(1);
  const auto batch = random_batch(3, a, rng);
  std::vector<Eigen::VectorXd> targets;
  for (int i = 0; i < 3; ++i) targets.push_back(normal_matrix(rng, a.weight_size(), 1));
  const auto r = regression_loss(p, batch, targets);
  Eigen::VectorXd& theta = p.net.parameters();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double saved = theta(i);
    theta(i) = saved + 1e-5;
    const double up = regression_loss(p, batch, targets, false).loss;
    theta(i) = saved - 1e-5;
    const double down = regression_loss(p, batch, targets, false).loss;
    theta(i) = saved;
    const double fd = (up - down) / 2e-5;
    worst = std::max(worst, std::abs(fd - r.grad(i)) / std::max({std::abs(fd), std::abs(r.grad(i)), 1e-6}));
  }
  EXPECT_LE(worst, 1e-4);
}
