#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "pdps/constants.hpp"
#include "pdps/rgo.hpp"

using namespace pdps;
using namespace pdps::testing;

namespace {

// log p_t(x0 | x, y) up to a constant.
double log_rgo_density(const ProblemSpec& p, const OUSchedule& s, double t, const Vector& x, const Vector& x0) {
  const double mu = s.mu(t), s2 = s.sigma2(t);
  return p.gmm_prior()->log_density(x0) - (x - mu * x0).squaredNorm() / (2.0 * s2) - p.likelihood->neg_log(x0);
}

RgoConfig converged_config(int chains) {
  RgoConfig c;
  c.n_in = 2000;
  c.m_chains = chains;
  return c;
}

}  // namespace

TEST(RgoDrift, VanishesForPriorAtOrigin) {
  OUSchedule s;
  const ProblemSpec p = flat_problem();
  EXPECT_NEAR(rgo_drift(p, s, 0.3, vec({0.0}), vec({0.0}))[0], 0.0, 1e-15);
}

TEST(RgoDrift, GaussianExample) {
  OUSchedule s;
  const ProblemSpec p = gaussian_problem(0.0);
  const double d = rgo_drift(p, s, 0.2, vec({1.0}), vec({0.0}))[0];
  EXPECT_NEAR(d, std::exp(-0.2) / -std::expm1(-0.4), 1e-14);
  EXPECT_NEAR(d, 2.48342, 1e-5);
  EXPECT_THROW(rgo_drift(p, s, 0.0, vec({1.0}), vec({0.0})), std::domain_error);
}

TEST(RgoDrift, IsGradientOfLogDensity) {
  OUSchedule s;
  const ProblemSpec p = bimodal_problem();
  Rng rng(21);
  const double tmax = bar_t(60.0);
  for (int i = 0; i < 50; ++i) {
    const double t = tmax * (0.05 + 0.9 * rng.uniform());
    const Vector x = 2.0 * rng.normal_vector(1);
    const Vector x0 = 2.0 * rng.normal_vector(1);
    const Vector fd = fd_gradient([&](const Vector& z) { return log_rgo_density(p, s, t, x, z); }, x0, 1e-6);
    EXPECT_LE(rel_err(rgo_drift(p, s, t, x, x0), fd), 1e-5);
  }
}

TEST(RgoDrift, LogConcaveBelowUpperThreshold) {
  OUSchedule s;
  const ProblemSpec p = bimodal_problem();
  Rng rng(1);
  const double alpha = gmm_constants(*p.gmm_prior(), 0.1, 100, rng).alpha;
  const double lik_curv = p.linear_likelihood()->hessian()(0, 0);
  for (int i = 0; i < 50; ++i) {
    const double t = bar_t(alpha) * rng.uniform();
    const Vector x0 = 3.0 * rng.normal_vector(1);
    const double ratio = s.mu(t) * s.mu(t) / s.sigma2(t);
    const Matrix neg_hess =
        -p.gmm_prior()->hessian_log_density(x0) + ratio * Matrix::Identity(1, 1) + lik_curv * Matrix::Identity(1, 1);
    const double smallest = Eigen::SelfAdjointEigenSolver<Matrix>(neg_hess).eigenvalues().minCoeff();
    EXPECT_GE(smallest, ratio - alpha - 1e-9);
    EXPECT_GT(smallest, 0.0);
  }
}

TEST(RgoStep, Example) {
  const double dt = rgo_step_size(0.075, 2.48342, 1, {1e-12, 1.0});
  EXPECT_NEAR(dt, 2.0 * std::pow(0.075 / 2.48342, 2), 1e-16);
  EXPECT_NEAR(dt, 1.8243e-3, 3e-7);
  EXPECT_DOUBLE_EQ(rgo_step_size(0.075, 0.0, 1), 0.1);
  EXPECT_DOUBLE_EQ(rgo_step_size(0.075, 1e9, 1), 1e-10);
}

TEST(RgoSample, ZeroStepsReturnsInit) {
  OUSchedule s;
  const ProblemSpec p = gaussian_problem(0.0);
  RgoConfig c;
  c.n_in = 0;
  c.m_chains = 4;
  Samples init(4, 1);
  init << 1, 2, 3, 4;
  Rng rng(0);
  const auto b = rgo_sample(p, s, 0.2, vec({1.0}), c, &init, rng);
  EXPECT_EQ(b.particles, init);
}

TEST(RgoSample, ParticleCountFollowsBurnIn) {
  RgoConfig c;
  EXPECT_EQ(c.tail_length(), 10);
  EXPECT_EQ(c.particle_count(), 200);
  c.n_in = 7;
  EXPECT_EQ(c.tail_length(), 4);
  c.strict = true;
  EXPECT_EQ(c.particle_count(), 20);
}

TEST(RgoSample, Deterministic) {
  OUSchedule s;
  const ProblemSpec p = bimodal_problem();
  RgoConfig c;
  Rng a(77), b(77);
  const auto ba = rgo_sample(p, s, 0.1, vec({0.5}), c, nullptr, a);
  const auto bb = rgo_sample(p, s, 0.1, vec({0.5}), c, nullptr, b);
  EXPECT_EQ(ba.particles, bb.particles);
  EXPECT_EQ(ba.chains, bb.chains);
}

TEST(RgoSample, GaussianMeanWithinThreeStandardErrors) {
  OUSchedule s;
  const ProblemSpec p = flat_problem();
  const double t = 0.3, x = 0.8;
  const double mu = s.mu(t), s2 = s.sigma2(t);
  const double expected = (mu * x / s2) / (1.0 + mu * mu / s2);
  RgoConfig c = converged_config(4000);
  c.n_in = 600;
  c.strict = true;  // final states only: i.i.d. across chains
  Rng rng(8);
  const auto b = rgo_sample(p, s, t, vec({x}), c, nullptr, rng);
  const double se = std::sqrt(variance(b.particles) / static_cast<double>(b.particles.rows()));
  EXPECT_NEAR(mean(b.particles), expected, 3.0 * se);
}

TEST(RgoSample, BimodalSmallTimeStaysInRightMode) {
  OUSchedule s;
  const ProblemSpec p = bimodal_problem();
  const double t = 0.05;
  const Vector x = vec({s.mu(t) * 2.0});
  // Quadrature of the right-mode mass.
  double right = 0.0, total = 0.0;
  for (int i = 0; i <= 40000; ++i) {
    const double z = -8.0 + i * 4e-4;
    const double w = std::exp(log_rgo_density(p, s, t, x, vec({z})));
    total += w;
    if (z > 0.0) right += w;
  }
  EXPECT_GE(right / total, 0.99);
  Rng rng(4);
  // Cold starts crawl under the SNR step rule, so give the chains time.
  RgoConfig c = converged_config(200);
  c.n_in = 20000;
  const auto b = rgo_sample(p, s, t, x, c, nullptr, rng);
  const double frac = (b.particles.col(0).array() > 0.0).cast<double>().mean();
  EXPECT_GE(frac, 0.99);
}

TEST(Denoiser, ConstantAndTwoPointBatches) {
  ParticleBatch b;
  b.particles = Samples::Constant(5, 2, 0.25);
  EXPECT_EQ(estimate_denoiser(b), Vector::Constant(2, 0.25));
  b.particles.resize(2, 1);
  b.particles << 0.0, 2.0;
  EXPECT_DOUBLE_EQ(estimate_denoiser(b)[0], 1.0);
  b.particles.resize(0, 1);
  EXPECT_THROW(estimate_denoiser(b), std::invalid_argument);
}

TEST(Score, GaussianExampleWithinFivePercent) {
  OUSchedule s;
  const ProblemSpec p = gaussian_problem(0.0);
  Rng rng(12);
  const RgoConfig c = converged_config(500);
  ASSERT_GE(c.particle_count(), 5000);
  const double est = estimate_posterior_score(p, s, 0.2, vec({1.0}), c, nullptr, rng)[0];
  EXPECT_NEAR(est, -1.50410, 0.05 * 1.50410);
}

TEST(Score, ErrorShrinksWithMoreParticles) {
  OUSchedule s;
  const ProblemSpec p = gaussian_problem(0.0);
  const double exact = -1.0 / (s.mu(0.2) * s.mu(0.2) * 0.5 + s.sigma2(0.2));
  std::vector<double> ratios;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r1 = Rng::stream(seed, 1), r2 = Rng::stream(seed, 2);
    const double small = estimate_posterior_score(p, s, 0.2, vec({1.0}), converged_config(20), nullptr, r1)[0];
    const double large = estimate_posterior_score(p, s, 0.2, vec({1.0}), converged_config(200), nullptr, r2)[0];
    ratios.push_back(std::abs(large - exact) / std::max(std::abs(small - exact), 1e-12));
  }
  std::nth_element(ratios.begin(), ratios.begin() + 10, ratios.end());
  EXPECT_LE(ratios[10], 0.5);
}

TEST(Score, EstimatorReuseCarriesChains) {
  OUSchedule s;
  const ProblemSpec p = gaussian_problem(0.0);
  RgoScoreEstimator est(p, RgoConfig{}, true, s);
  Rng rng(2);
  est.estimate(0.2, vec({1.0}), rng);
  ASSERT_TRUE(est.chains().has_value());
  EXPECT_EQ(est.chains()->rows(), 20);
  RgoScoreEstimator fresh(p, RgoConfig{}, false, s);
  fresh.estimate(0.2, vec({1.0}), rng);
  EXPECT_FALSE(fresh.chains().has_value());
}

TEST(Score, ShiftOnReuseTracksMovingTarget) {
  // Reused chains at the previous x, then a jump in x: the shift should move
  // the chain cloud by about the change in the exact conditional mean.
  OUSchedule s;
  const ProblemSpec p = gaussian_problem(0.0);
  const double t = 0.2;
  const double mu = s.mu(t), s2 = s.sigma2(t);
  const double prec = 2.0 + mu * mu / s2;  // prior 1 + likelihood 1 + tether
  RgoConfig c = converged_config(400);
  RgoScoreEstimator est(p, c, true, s);
  Rng rng(5);
  est.estimate(t, vec({0.0}), rng);
  const double before = est.chains()->col(0).mean();
  RgoConfig none = c;
  none.n_in = 0;
  est.set_config(none);
  est.estimate(t, vec({0.5}), rng);
  const double moved = est.last_batch().particles.col(0).mean() - before;
  EXPECT_NEAR(moved, (mu / s2) * 0.5 / prec, 0.02);
}
