#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "pdps/models.hpp"

namespace pdps {

/// Problem constants used by the terminal-time thresholds.
struct ModelConstants {
  double alpha = 0.0;  // semi-log-concavity constant
  double v_sg2 = 0.0;  // sub-Gaussian variance proxy V_SG^2
  double c_sg = 0.0;   // sub-Gaussian mass bound C_SG
};

/// Largest |eigenvalue| of the log-prior Hessian over a probe set.
///
/// In one dimension the probes are a dense grid (step 1e-3) covering every
/// component mean +- 6 standard deviations; otherwise they are
/// probe_count prior draws, the means, and the pairwise mean midpoints.
inline double gmm_alpha(const IsotropicGaussianMixture& gmm, int probe_count, Rng& rng) {
  if (probe_count < 1) throw std::invalid_argument("gmm_alpha: probe_count must be >= 1");
  const auto d = gmm.dim();
  const auto k = gmm.components();
  double alpha = 0.0;
  auto probe = [&](const ConstVecRef& x) {
    if (d == 1) {
      alpha = std::max(alpha, std::abs(gmm.hessian_log_density(x)(0, 0)));
    } else {
      Eigen::SelfAdjointEigenSolver<Matrix> es(gmm.hessian_log_density(x), Eigen::EigenvaluesOnly);
      alpha = std::max(alpha, es.eigenvalues().cwiseAbs().maxCoeff());
    }
  };

  if (d == 1) {
    const double sd = std::sqrt(gmm.variances().maxCoeff());
    const double lo = gmm.means().minCoeff() - 6.0 * sd;
    const double hi = gmm.means().maxCoeff() + 6.0 * sd;
    const double step = 1e-3;
    Vector x(1);
    for (double v = lo; v <= hi + 0.5 * step; v += step) {
      x[0] = v;
      probe(x);
    }
  }
  Vector x(d);
  for (int i = 0; i < probe_count; ++i) {
    gmm.sample(rng, x);
    probe(x);
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    probe(gmm.means().col(i));
    for (Eigen::Index j = i + 1; j < k; ++j) probe(0.5 * (gmm.means().col(i) + gmm.means().col(j)));
  }
  return alpha;
}

/// E_{pi_0} exp(|X|^2 / v_sg2) in closed form. Per component,
/// (1 - 2 s^2/V^2)^{-d/2} exp(|m|^2 / (V^2 - 2 s^2)); finite iff V^2 > 2 s^2.
inline double gmm_subgaussian_mass(const IsotropicGaussianMixture& gmm, double v_sg2) {
  const auto d = static_cast<double>(gmm.dim());
  double total = 0.0;
  for (Eigen::Index k = 0; k < gmm.components(); ++k) {
    const double s2 = gmm.variances()[k];
    if (!(v_sg2 > 2.0 * s2)) return std::numeric_limits<double>::infinity();
    const double log_term = -0.5 * d * std::log1p(-2.0 * s2 / v_sg2) +
                            gmm.means().col(k).squaredNorm() / (v_sg2 - 2.0 * s2);
    total += gmm.weights()[k] * std::exp(log_term);
  }
  return total;
}

inline ModelConstants gmm_constants(const IsotropicGaussianMixture& gmm, double margin, int probe_count, Rng& rng) {
  if (!(margin > 0.0)) throw std::invalid_argument("gmm_constants: margin must be positive");
  ModelConstants c;
  c.v_sg2 = 2.0 * gmm.variances().maxCoeff() * (1.0 + margin);
  c.alpha = gmm_alpha(gmm, probe_count, rng);
  c.c_sg = gmm_subgaussian_mass(gmm, c.v_sg2);
  return c;
}

struct ConditionEstimate {
  double kappa = 1.0;
  double std_error = 0.0;  // Monte Carlo standard error of kappa
  double min_neg_log = 0.0;
  bool underflow = false;
};

namespace detail {

// Backtracking gradient descent on l_y from x; returns the final value.
inline double descend(const Likelihood& lik, Vector x, int iterations = 500) {
  Vector g(x.size());
  double f = lik.neg_log(x);
  double step = 1.0;
  for (int it = 0; it < iterations; ++it) {
    lik.grad_neg_log(x, g);
    const double gn2 = g.squaredNorm();
    if (!std::isfinite(gn2) || gn2 < 1e-24) break;
    bool moved = false;
    for (int bt = 0; bt < 60; ++bt) {
      const Vector cand = x - step * g;
      const double fc = lik.neg_log(cand);
      if (fc <= f - 0.5 * step * gn2) {
        x = cand;
        f = fc;
        moved = true;
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;
  }
  return f;
}

}  // namespace detail

/// kappa_y = sup exp(-l_y) / E_{pi_0} exp(-l_y(X)).
///
/// The supremum comes from multi-start descent on l_y started at
/// search_budget prior draws; the expectation is a Monte Carlo mean over
/// prior_samples draws, accumulated in log space.
inline ConditionEstimate condition_number(const ProblemSpec& problem, int prior_samples, int search_budget,
                                          Rng& rng) {
  if (prior_samples < 1 || search_budget < 1)
    throw std::invalid_argument("condition_number: budgets must be >= 1");
  if (!problem.prior->can_sample()) throw std::invalid_argument("condition_number: prior must be samplable");
  const Likelihood& lik = *problem.likelihood;
  const auto d = problem.dim();

  Vector x(d);
  std::vector<double> neg(static_cast<std::size_t>(prior_samples));
  double best = std::numeric_limits<double>::infinity();
  for (auto& v : neg) {
    problem.prior->sample(rng, x);
    v = lik.neg_log(x);
    best = std::min(best, v);
  }
  for (int i = 0; i < search_budget; ++i) {
    problem.prior->sample(rng, x);
    best = std::min(best, detail::descend(lik, x));
  }

  ConditionEstimate out;
  out.min_neg_log = best;
  // Ratios exp(-(l - l_min)) lie in (0, 1]; only the mean can underflow.
  double sum = 0.0;
  double sum2 = 0.0;
  for (double v : neg) {
    const double r = std::exp(-(v - best));
    sum += r;
    sum2 += r * r;
  }
  const double n = static_cast<double>(neg.size());
  const double mean = sum / n;
  if (!(mean > 0.0)) {
    out.kappa = std::numeric_limits<double>::infinity();
    out.std_error = std::numeric_limits<double>::infinity();
    out.underflow = true;
    return out;
  }
  const double var = std::max(0.0, sum2 / n - mean * mean);
  out.kappa = 1.0 / mean;
  out.std_error = out.kappa * std::sqrt(var / n) / mean;
  return out;
}

/// Upper bound on the log-Sobolev constant of the terminal posterior:
/// 12 s_T^2 exp(2 (s_T^2 + 2 m_T^2 V^2)/(s_T^2 - 2 m_T^2 V^2) log(kappa^2 C^2)).
inline double lsi_bound(const OUSchedule& schedule, double T, double kappa, double c_sg, double v_sg2) {
  if (!(T > underline_t(v_sg2))) throw std::domain_error("lsi_bound: T must exceed underline_t(v_sg2)");
  const double m2 = std::pow(schedule.mu(T), 2);
  const double s2 = schedule.sigma2(T);
  const double den = s2 - 2.0 * m2 * v_sg2;
  if (!(den > 0.0)) throw std::domain_error("lsi_bound: nonpositive denominator");
  const double ratio = (s2 + 2.0 * m2 * v_sg2) / den;
  return 12.0 * s2 * std::exp(2.0 * ratio * std::log(kappa * kappa * c_sg * c_sg));
}

}  // namespace pdps
