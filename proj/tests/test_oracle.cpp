#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace pdps;
using namespace pdps::testing;

namespace {

FullGaussianMixture scalar_mixture(std::vector<double> w, std::vector<double> m, std::vector<double> v) {
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (std::size_t k = 0; k < w.size(); ++k) {
    means.push_back(vec({m[k]}));
    covs.push_back(Matrix::Constant(1, 1, v[k]));
  }
  return FullGaussianMixture(Eigen::Map<Vector>(w.data(), static_cast<Eigen::Index>(w.size())), means, covs);
}

Samples gaussian_draws(Rng& rng, std::size_t n, const Vector& m) {
  Samples s(static_cast<Eigen::Index>(n), m.size());
  for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) = (m + rng.normal_vector(m.size())).transpose();
  return s;
}

}  // namespace

TEST(ExactPosterior, ConjugateGaussian) {
  const auto post = oracle_posterior(gaussian_problem(1.0));
  ASSERT_EQ(post.components(), 1u);
  EXPECT_NEAR(post.means()[0][0], 0.5, 1e-14);
  EXPECT_NEAR(post.covariances()[0](0, 0), 0.5, 1e-14);
}

TEST(ExactPosterior, Bimodal) {
  const auto post = oracle_posterior(bimodal_problem());
  EXPECT_NEAR(post.weights()[0], 0.03917, 5e-6);
  EXPECT_NEAR(post.weights()[1], 0.96083, 5e-6);
  EXPECT_NEAR(post.means()[0][0], -1.4, 1e-12);
  EXPECT_NEAR(post.means()[1][0], 1.8, 1e-12);
  EXPECT_NEAR(post.covariances()[0](0, 0), 0.2, 1e-12);
  EXPECT_NEAR(post.covariances()[1](0, 0), 0.2, 1e-12);
}

TEST(ExactPosterior, UninformativeOperatorGivesPrior) {
  const ProblemSpec p(scalar_gmm({0.3, 0.7}, {-1.0, 2.0}, {0.5, 0.1}), scalar_linear(0.0, 3.0, 1.0));
  const auto post = oracle_posterior(p);
  EXPECT_NEAR(post.weights()[0], 0.3, 1e-14);
  EXPECT_NEAR(post.means()[1][0], 2.0, 1e-14);
  EXPECT_NEAR(post.covariances()[0](0, 0), 0.5, 1e-14);
}

TEST(ExactPosterior, ProportionalToPriorTimesLikelihood) {
  const ProblemSpec p = bimodal_problem();
  const auto post = oracle_posterior(p);
  // Quadrature of the unnormalised density, then pointwise ratio.
  const auto unnorm = [&](double x) {
    return std::exp(p.gmm_prior()->log_density(vec({x})) - p.likelihood->neg_log(vec({x})));
  };
  const int n = 40000;
  const double h = 20.0 / n;
  double z = 0.0;
  for (int i = 0; i <= n; ++i) z += ((i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0)) * unnorm(-10.0 + i * h);
  z *= h / 3.0;
  for (double x = -4.0; x <= 4.0; x += 0.25) {
    const double ratio = unnorm(x) / z / std::exp(post.log_density(vec({x})));
    EXPECT_NEAR(ratio, 1.0, 1e-6) << "x=" << x;
  }
}

TEST(TimeT, IdentityAndStationaryLimit) {
  OUSchedule s;
  const auto post = oracle_posterior(bimodal_problem());
  const auto same = exact_timet_posterior(post, s, 0.0);
  EXPECT_EQ(same.means()[1], post.means()[1]);
  EXPECT_EQ(same.covariances()[1], post.covariances()[1]);
  const auto far = exact_timet_posterior(post, s, 40.0);
  for (std::size_t k = 0; k < far.components(); ++k) {
    EXPECT_NEAR(far.means()[k][0], 0.0, 1e-12);
    EXPECT_NEAR(far.covariances()[k](0, 0), 1.0, 1e-12);
  }
}

TEST(TimeT, GaussianExampleAndScore) {
  OUSchedule s;
  const auto qt = exact_timet_posterior(oracle_posterior(gaussian_problem(1.0)), s, 0.2);
  const double mu = std::exp(-0.2), var = 0.5 * mu * mu - std::expm1(-0.4);
  EXPECT_NEAR(qt.means()[0][0], 0.5 * mu, 1e-15);
  EXPECT_NEAR(qt.covariances()[0](0, 0), var, 1e-15);
  EXPECT_NEAR(exact_score(qt, vec({1.0}))[0], -(1.0 - 0.5 * mu) / var, 1e-14);
  // Six-digit reference values.
  EXPECT_NEAR(qt.means()[0][0], 0.40937, 5e-6);
  EXPECT_NEAR(qt.covariances()[0](0, 0), 0.66485, 2e-5);
  EXPECT_NEAR(exact_score(qt, vec({1.0}))[0], -0.88836, 3e-5);
  const auto q0 = exact_timet_posterior(oracle_posterior(gaussian_problem(0.0)), s, 0.2);
  EXPECT_NEAR(exact_score(q0, vec({1.0}))[0], -1.0 / var, 1e-14);
  EXPECT_NEAR(exact_score(q0, vec({1.0}))[0], -1.50410, 3e-5);
}

TEST(TimeT, SemigroupComposition) {
  OUSchedule s;
  const auto post = oracle_posterior(bimodal_problem());
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const double a = 2.0 * rng.uniform(), b = 2.0 * rng.uniform();
    const auto two = exact_timet_posterior(exact_timet_posterior(post, s, a), s, b);
    const auto one = exact_timet_posterior(post, s, a + b);
    for (std::size_t k = 0; k < one.components(); ++k) {
      EXPECT_NEAR(two.means()[k][0], one.means()[k][0], 1e-12);
      EXPECT_NEAR(two.covariances()[k](0, 0), one.covariances()[k](0, 0), 1e-12);
    }
  }
}

TEST(TimeT, ScoreMatchesFiniteDifference) {
  OUSchedule s;
  const auto qt = exact_timet_posterior(oracle_posterior(bimodal_problem()), s, 0.1);
  for (double x = -3.0; x <= 3.0; x += 0.5) {
    const Vector fd = fd_gradient([&](const Vector& z) { return qt.log_density(z); }, vec({x}));
    EXPECT_LE(rel_err(exact_score(qt, vec({x})), fd), 1e-6);
  }
}

TEST(TimeT, TweedieCrossIdentity) {
  OUSchedule s;
  Rng rng(17);
  for (const ProblemSpec& p : {bimodal_problem(), gaussian_problem(1.0)}) {
    const auto post = oracle_posterior(p);
    for (int i = 0; i < 50; ++i) {
      const double t = 0.01 + 1.5 * rng.uniform();
      const Vector x = 2.5 * rng.normal_vector(1);
      const Vector cm = exact_conditional_mean(*p.gmm_prior(), *p.linear_likelihood(), s, t, x);
      const Vector lhs = (s.mu(t) * cm - x) / s.sigma2(t);
      const Vector rhs = exact_score(exact_timet_posterior(post, s, t), x);
      EXPECT_LE(rel_err(lhs, rhs), 1e-8);
    }
  }
}

TEST(Sampling, GaussianMean) {
  Rng rng(1);
  const auto mix = scalar_mixture({1.0}, {0.7}, {2.0});
  const Samples x = sample_exact(mix, 20000, rng);
  EXPECT_NEAR(mean(x), 0.7, 3.0 * std::sqrt(2.0 / 20000));
}

TEST(Sampling, DegenerateWeights) {
  Rng rng(1);
  const auto mix = scalar_mixture({1.0, 0.0}, {-5.0, 5.0}, {0.01, 0.01});
  const Samples x = sample_exact(mix, 1000, rng);
  EXPECT_LT(x.maxCoeff(), 0.0);
}

TEST(Sampling, BimodalRightModeFraction) {
  Rng rng(2);
  const auto post = oracle_posterior(bimodal_problem());
  const Samples x = sample_exact(post, 2000, rng);
  EXPECT_NEAR(mode_weights(x, post)[1], 0.9608, 0.02);
}

TEST(W2, OneDimensionalProperties) {
  Rng rng(4);
  const Samples a = gaussian_draws(rng, 500, vec({0.0}));
  EXPECT_EQ(w2_1d(a, a), 0.0);
  const Samples z = Samples::Zero(10, 1);
  const Samples c = Samples::Constant(10, 1, -2.5);
  EXPECT_DOUBLE_EQ(w2_1d(z, c), 2.5);
  EXPECT_THROW(w2_1d(z, a), std::invalid_argument);
  const Samples b = gaussian_draws(rng, 20000, vec({0.0}));
  const Samples shifted = gaussian_draws(rng, 20000, vec({1.0}));
  EXPECT_NEAR(w2_1d(b, shifted), 1.0, 0.05);
}

TEST(W2, Symmetric) {
  Rng rng(4);
  const Samples a = gaussian_draws(rng, 300, vec({0.0}));
  const Samples b = gaussian_draws(rng, 300, vec({0.4}));
  EXPECT_DOUBLE_EQ(w2_1d(a, b), w2_1d(b, a));
}

TEST(W2, Sliced) {
  Rng rng(5);
  const Samples a = gaussian_draws(rng, 4000, vec({0.0, 0.0}));
  const Samples b = gaussian_draws(rng, 4000, vec({1.0, 0.0}));
  EXPECT_EQ(w2_sliced(a, a, 16, rng), 0.0);
  const double w = w2_sliced(a, b, 128, rng);
  EXPECT_NEAR(w, 1.0 / std::sqrt(2.0), 0.1);
  // Pure shift: every projection is bounded by the shift length.
  Samples c = a;
  c.col(0).array() += 1.0;
  const double shifted = w2_sliced(a, c, 64, rng);
  EXPECT_GT(shifted, 0.0);
  EXPECT_LE(shifted, 1.0 + 1e-12);
}

TEST(Ula, GaussianPosteriorMean) {
  const Samples x = ula_baseline(gaussian_problem(1.0), 2000, 0.01, 1000, 7);
  EXPECT_NEAR(mean(x), 0.5, 0.05);
}

TEST(Ula, FrozenForTinyStep) {
  const ProblemSpec p = bimodal_problem();
  Rng a(3), b(3);
  const Vector moved = ula_chain(p, 10, 1e-14, a);
  EXPECT_NEAR(moved[0], b.normal_vector(1)[0], 1e-6);
}

TEST(Dps, FlatLikelihoodIsPriorDiffusion) {
  OUSchedule s;
  const ProblemSpec p = flat_problem();
  ReverseConfig c;
  c.T0 = 0.05;
  const Samples x = parallel_draws(1000, 1, 11, 1, [&](std::size_t, Rng& rng) {
    return dps_baseline(p, s, c, 5.0, 1.0, rng);
  });
  Rng rng(1);
  EXPECT_LE(w2_1d(x, sample_exact(oracle_posterior(p), 1000, rng)), 0.1);
}

TEST(Dps, GuidanceTermMatchesClosedForm) {
  // Gaussian prior, linear likelihood: the denoiser is linear, so the guided
  // score has a closed form.
  OUSchedule s;
  const ProblemSpec p = gaussian_problem(1.0);
  DpsScoreEstimator dps(p, s, 1.0);
  Rng rng(0);
  const double t = 0.3, x = 0.4;
  const double slope = s.mu(t);  // D(t, x) = mu x for N(0, 1) under this schedule
  const double prior_score = -x;
  const double guidance = -slope * (slope * x - 1.0);
  EXPECT_NEAR(dps.estimate(t, vec({x}), rng)[0], prior_score + guidance, 1e-7);
}
