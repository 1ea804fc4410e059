#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "instances.hpp"
#include "vprir/inference.hpp"

namespace {

using vprir::InferenceConfig;
using vprir::ModelParams;
using vprir::OptimState;
using vprir::VariationalParams;

using oracle::fd_max_error;
using oracle::Instance;
using oracle::random_instance;

TEST(ExpectedResidual, HandEvaluated) {
  EXPECT_DOUBLE_EQ(vprir::expected_residual(std::vector{0.0}, std::vector{1.0}, VariationalParams{{0.0}, {1.0}}), 1.0);
  const std::vector y{0.4, -1.0, 2.0, 0.5};
  const double r = vprir::expected_residual(y, std::vector{1.0}, VariationalParams{y, std::vector(4, 1e-300)});
  EXPECT_NEAR(r, 0.0, 1e-12);
}

TEST(ExpectedResidual, RejectsLengthMismatch) {
  EXPECT_THROW(vprir::expected_residual(std::vector{0.0, 1.0}, std::vector{1.0}, VariationalParams{{0.0}, {1.0}}),
               vprir::InvalidArgument);
}

TEST(ExpectedResidual, MatchesMonteCarlo) {
  std::mt19937_64 rng(17);
  const std::size_t lh = 6, ls = 10;
  const auto s = oracle::random_vector(rng, ls);
  const auto y = oracle::random_vector(rng, ls + lh - 1, 2.0);
  VariationalParams z{oracle::random_vector(rng, lh), std::vector<double>(lh)};
  std::uniform_real_distribution<double> var(0.2, 1.5);
  for (auto& r : z.r_h) r = var(rng);
  const double exact = vprir::expected_residual(y, s, z);

  std::normal_distribution<double> n01(0.0, 1.0);
  double mc = 0.0;
  const int draws = 100000;
  std::vector<double> h(lh);
  for (int d = 0; d < draws; ++d) {
    for (std::size_t u = 0; u < lh; ++u) h[u] = z.mu_h[u] + std::sqrt(z.r_h[u]) * n01(rng);
    const auto sh = oracle::naive_convolve(s, h);
    double e = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) e += (y[t] - sh[t]) * (y[t] - sh[t]);
    mc += e;
  }
  mc /= draws;
  EXPECT_NEAR(mc / exact, 1.0, 0.01);
}

TEST(FreeEnergy, SingleSampleHandEvaluated) {
  const auto b = vprir::free_energy(ModelParams{{1.0}, 0.0, {1.0}, 1.0, 1.0}, VariationalParams{{0.0}, {1.0}},
                                    std::vector{0.0}, std::vector{1.0});
  // -ln(2 pi)/2 - 1/2 evaluated in long double.
  const long double expected = -0.5L * std::log(2.0L * 3.14159265358979323846264338327950288L) - 0.5L;
  EXPECT_NEAR(b.total, static_cast<double>(expected), 1e-12);
  EXPECT_NEAR(b.total, -1.41894, 1e-5);
  EXPECT_NEAR(b.total, b.likelihood_term + b.prior_logdet_term + b.prior_quadratic_term + b.entropy_term,
              1e-12 * std::abs(b.total));
}

TEST(FreeEnergy, MatchesDenseTextbookOracle) {
  std::mt19937_64 rng(23);
  for (std::size_t lh : {1u, 3u, 5u, 8u}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto in = random_instance(rng, lh, 3, 3, 7);
      const auto theta = in.state.theta();
      const auto z = in.state.z();
      const auto b = vprir::free_energy(theta, z, in.y, in.s);
      const Eigen::MatrixXd V = oracle::whitening(theta.g, theta.a, theta.p, lh);
      const double dense = oracle::dense_free_energy(in.y, in.s, z.mu_h, z.r_h, V,
                                                     theta.sigma_eps * theta.sigma_eps,
                                                     theta.sigma_w * theta.sigma_w);
      EXPECT_NEAR(b.total, dense, 1e-8 * std::max(1.0, std::abs(dense))) << "L_h=" << lh;
    }
  }
}

TEST(FreeEnergy, LargeNoiseLimit) {
  std::mt19937_64 rng(4);
  auto in = random_instance(rng, 6, 2, 2);
  auto theta = in.state.theta();
  theta.sigma_w = 1e8;
  const auto b = vprir::free_energy(theta, in.state.z(), in.y, in.s);
  const double T = static_cast<double>(in.y.size());
  const double limit = -0.5 * T * std::log(2.0 * std::numbers::pi * theta.sigma_w * theta.sigma_w);
  EXPECT_NEAR(b.likelihood_term, limit, 1e-9 * std::abs(limit));
}

TEST(FreeEnergy, RejectsNonPositiveVariance) {
  EXPECT_THROW(vprir::free_energy(ModelParams{{1.0}, 0.0, {1.0}, 1.0, 1.0}, VariationalParams{{0.0}, {0.0}},
                                  std::vector{0.0}, std::vector{1.0}),
               vprir::DomainError);
  EXPECT_THROW(vprir::free_energy(ModelParams{{1.0}, 0.0, {1.0}, -1.0, 1.0}, VariationalParams{{0.0}, {1.0}},
                                  std::vector{0.0}, std::vector{1.0}),
               vprir::DomainError);
}

TEST(LossAndGradient, LossIsMinusTwiceFreeEnergy) {
  std::mt19937_64 rng(41);
  auto in = random_instance(rng, 30, 4, 3, 50);
  const auto [loss, grad] = vprir::loss_and_gradient(in.state, in.y, in.s);
  const auto b = vprir::free_energy(in.state.theta(), in.state.z(), in.y, in.s);
  EXPECT_NEAR(loss, -2.0 * b.total, 1e-10 * std::abs(loss));
  EXPECT_EQ(grad.size(), in.state.layout.size());
}

TEST(LossAndGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = random_instance(rng, 12, 3, 2);
    EXPECT_LT(fd_max_error(in), 1e-5) << "trial " << trial;
  }
}

TEST(LossAndGradient, MatchesCentralDifferencesWithLongerFilters) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 4; ++trial) {
    const auto in = random_instance(rng, 20, 5, 4, 15);
    EXPECT_LT(fd_max_error(in), 1e-5) << "trial " << trial;
  }
}

TEST(LossAndGradient, SymmetricCriticalPointInMean) {
  std::mt19937_64 rng(6);
  InferenceConfig cfg;
  cfg.rir_length = 10;
  cfg.g_length = 3;
  cfg.p_length = 2;
  auto st = OptimState::initial(cfg);
  st.values[st.layout.mu_offset()] = 0.0;
  const auto s = oracle::random_vector(rng, 15);
  const std::vector<double> y(24, 0.0);
  const auto [loss, grad] = vprir::loss_and_gradient(st, y, s);
  for (std::size_t u = 0; u < 10; ++u) EXPECT_EQ(grad[st.layout.mu_offset() + u], 0.0);
}

TEST(LossAndGradient, DoublingNoiseVarianceShiftsLikelihood) {
  std::mt19937_64 rng(8);
  auto in = random_instance(rng, 8, 2, 2);
  const vprir::Observation obs(in.y, in.s, 8);
  const auto z = in.state.z();
  const double R = vprir::expected_residual(obs, z.mu_h, z.r_h);
  const double sw2 = std::exp(in.state.values[in.state.layout.log_sigma_w2()]);
  const double before = vprir::evaluate(in.state, obs).breakdown.likelihood_term;
  auto doubled = in.state;
  doubled.values[doubled.layout.log_sigma_w2()] += std::numbers::ln2;
  const double after = vprir::evaluate(doubled, obs).breakdown.likelihood_term;
  const double T = static_cast<double>(in.y.size());
  EXPECT_NEAR(-2.0 * (after - before), T * std::numbers::ln2 - R / (2.0 * sw2), 1e-9 * (T + R));
}

TEST(LossAndGradient, NonFiniteLossNamesTheTerm) {
  std::mt19937_64 rng(3);
  auto in = random_instance(rng, 5, 2, 2);
  in.state.values[in.state.layout.log_r_offset()] = -1e6;  // r underflows to 0
  try {
    (void)vprir::loss_and_gradient(in.state, in.y, in.s);
    FAIL() << "expected NumericError";
  } catch (const vprir::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("entropy_term"), std::string::npos) << e.what();
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  InferenceConfig cfg;
  cfg.rir_length = 1;
  cfg.g_length = 1;
  cfg.p_length = 1;
  auto st = OptimState::initial(cfg);
  const auto before = st.values;
  std::vector<double> grad(st.values.size(), 1.0);
  vprir::adam_update(st, grad, {});
  for (std::size_t i = 0; i < grad.size(); ++i) EXPECT_NEAR(before[i] - st.values[i], 1e-3, 1e-10);
  EXPECT_EQ(st.step_count, 1u);
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  InferenceConfig cfg;
  cfg.rir_length = 3;
  auto st = OptimState::initial(cfg);
  std::vector<double> grad(st.values.size(), 0.5);
  vprir::adam_update(st, grad, {});
  std::fill(grad.begin(), grad.end(), 0.0);
  const double m0 = st.first_moment[0];
  const double v0 = st.second_moment[0];
  vprir::adam_update(st, grad, {});
  EXPECT_NEAR(st.first_moment[0], 0.9 * m0, 1e-15);
  EXPECT_NEAR(st.second_moment[0], 0.999 * v0, 1e-15);

  auto fresh = OptimState::initial(cfg);
  const auto untouched = fresh.values;
  vprir::adam_update(fresh, grad, {});
  EXPECT_EQ(fresh.values, untouched);
}

TEST(Adam, ConstantGradientStepConvergesToLearningRate) {
  InferenceConfig cfg;
  cfg.rir_length = 1;
  cfg.g_length = 1;
  cfg.p_length = 1;
  auto st = OptimState::initial(cfg);
  std::vector<double> grad(st.values.size(), -3.0);
  double last_step = 0.0;
  for (int i = 0; i < 5000; ++i) {
    const double before = st.values[0];
    vprir::adam_update(st, grad, {});
    last_step = st.values[0] - before;
  }
  EXPECT_NEAR(last_step, 1e-3, 1e-9);
}

TEST(Adam, RejectsBadHyperparameters) {
  InferenceConfig cfg;
  cfg.rir_length = 1;
  auto st = OptimState::initial(cfg);
  std::vector<double> grad(st.values.size(), 0.0);
  EXPECT_THROW(vprir::adam_update(st, grad, {0.0, 0.9, 0.999, 1e-8}), vprir::InvalidArgument);
  EXPECT_THROW(vprir::adam_update(st, grad, {1e-3, 1.0, 0.999, 1e-8}), vprir::InvalidArgument);
}

TEST(Normalize, StableStateUnchanged) {
  std::mt19937_64 rng(10);
  auto in = random_instance(rng, 10, 4, 3);
  const auto before = in.state.values;
  vprir::normalize(in.state);
  EXPECT_EQ(in.state.values, before);
}

TEST(Normalize, ReflectsUnstableRootAndFloorsDecay) {
  InferenceConfig cfg;
  cfg.rir_length = 6;
  cfg.g_length = 2;
  auto st = OptimState::initial(cfg);
  st.set_g(std::vector{1.0, -2.0});
  st.values[st.layout.log_a()] = -40.0;
  vprir::normalize(st);
  EXPECT_EQ(st.theta().g, (std::vector{1.0, -0.5}));
  EXPECT_DOUBLE_EQ(st.values[st.layout.log_a()], std::log(1e-8));
}

TEST(Normalize, SamplingNeverUnstableAfterProjection) {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 100; ++trial) {
    auto in = random_instance(rng, 16, 6, 3);
    for (std::size_t k = 0; k < 5; ++k) in.state.values[k] = 2.0 * std::normal_distribution<double>()(rng);
    vprir::normalize(in.state);
    const vprir::RirOperator op(16, in.state.theta());
    EXPECT_NO_THROW((void)vprir::sample_rir(op, trial));
  }
}

TEST(Normalize, LeavesLossUnchangedWhenAlreadyStable) {
  std::mt19937_64 rng(12);
  auto in = random_instance(rng, 12, 3, 2);
  const vprir::Observation obs(in.y, in.s, 12);
  const double before = vprir::evaluate(in.state, obs).loss;
  vprir::normalize(in.state);
  EXPECT_EQ(vprir::evaluate(in.state, obs).loss, before);
}

InferenceConfig small_config(std::size_t lh, std::size_t iterations) {
  InferenceConfig cfg;
  cfg.rir_length = lh;
  cfg.iterations = iterations;
  cfg.g_length = 3;
  cfg.p_length = 2;
  return cfg;
}

TEST(EstimateRir, IdentityChannelStaysNearImpulse) {
  std::mt19937_64 rng(100);
  const auto s = oracle::random_vector(rng, 400);
  const std::size_t lh = 32;
  std::vector<double> h(lh, 0.0);
  h[0] = 1.0;
  const auto y = oracle::naive_convolve(s, h);
  const auto res = vprir::estimate_rir(y, s, small_config(lh, 500));
  double err = 0.0;
  for (std::size_t u = 0; u < lh; ++u) err += (res.rir[u] - h[u]) * (res.rir[u] - h[u]);
  EXPECT_LT(err, 0.05);
  EXPECT_EQ(res.state.loss_history.size(), 500u);
  EXPECT_EQ(res.state.step_count, 500u);
}

TEST(EstimateRir, LossDecreasesAndMovingAverageIsMonotone) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    const std::size_t lh = 24;
    const auto s = oracle::random_vector(rng, 300);
    auto h = oracle::random_vector(rng, lh, 0.3);
    for (std::size_t u = 0; u < lh; ++u) h[u] *= std::exp(-0.1 * static_cast<double>(u));
    auto y = oracle::naive_convolve(s, h);
    const auto noise = oracle::random_vector(rng, y.size(), 0.1);
    for (std::size_t t = 0; t < y.size(); ++t) y[t] += noise[t];
    const auto res = vprir::estimate_rir(y, s, small_config(lh, 1000));
    const auto& L = res.state.loss_history;
    EXPECT_LT(L.back(), L.front());
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t i = 100; i <= L.size(); i += 50) {
      double avg = 0.0;
      for (std::size_t k = i - 100; k < i; ++k) avg += L[k];
      avg /= 100.0;
      EXPECT_LE(avg, prev + 1e-9 * std::abs(prev));
      prev = avg;
    }
  }
}

TEST(EstimateRir, DeterministicAcrossRuns) {
  std::mt19937_64 rng(9);
  const auto s = oracle::random_vector(rng, 200);
  const auto y = oracle::random_vector(rng, 215);
  const auto a = vprir::estimate_rir(y, s, small_config(16, 200));
  const auto b = vprir::estimate_rir(y, s, small_config(16, 200));
  EXPECT_EQ(a.state.loss_history, b.state.loss_history);
  EXPECT_EQ(a.rir, b.rir);
}

TEST(EstimateRir, SilentSourceShrinksTowardZero) {
  const std::vector<double> s(100, 0.0);
  std::mt19937_64 rng(1);
  const auto y = oracle::random_vector(rng, 115);
  const auto res = vprir::estimate_rir(y, s, small_config(16, 800));
  EXPECT_LT(std::abs(res.rir[0]), 1.0);
  // Likelihood does not depend on mu_h, so the mean only feels the prior.
  const vprir::Observation obs(y, s, 16);
  auto st = res.state;
  const double base = vprir::evaluate(st, obs).breakdown.likelihood_term;
  st.values[st.layout.mu_offset() + 3] += 5.0;
  EXPECT_EQ(vprir::evaluate(st, obs).breakdown.likelihood_term, base);
}

TEST(EstimateRir, FixedNoiseModeKeepsSigmaW) {
  std::mt19937_64 rng(2);
  const auto s = oracle::random_vector(rng, 100);
  const auto y = oracle::random_vector(rng, 107);
  auto cfg = small_config(8, 50);
  cfg.train_noise = false;
  cfg.sigma_w = 0.25;
  const auto res = vprir::estimate_rir(y, s, cfg);
  EXPECT_NEAR(res.state.theta().sigma_w, 0.25, 1e-15);
}

TEST(EstimateRir, RejectsInconsistentLengths) {
  EXPECT_THROW(vprir::estimate_rir(std::vector<double>(10, 1.0), std::vector<double>(5, 1.0), small_config(4, 1)),
               vprir::InvalidArgument);
}

}  // namespace
