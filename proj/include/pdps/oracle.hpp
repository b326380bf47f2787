#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "pdps/reverse.hpp"

namespace pdps {

/// Gaussian mixture with full covariances; what conjugacy produces.
class FullGaussianMixture {
 public:
  FullGaussianMixture(Vector weights, std::vector<Vector> means, std::vector<Matrix> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    const auto k = static_cast<std::size_t>(weights_.size());
    if (k == 0 || means_.size() != k || covs_.size() != k)
      throw std::invalid_argument("FullGaussianMixture: need matching weights, means and covariances");
    if ((weights_.array() < 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-9)
      throw std::invalid_argument("FullGaussianMixture: weights must be nonnegative and sum to 1");
    const auto d = means_[0].size();
    for (std::size_t i = 0; i < k; ++i) {
      if (means_[i].size() != d || covs_[i].rows() != d || covs_[i].cols() != d)
        throw std::invalid_argument("FullGaussianMixture: inconsistent dimensions");
      if (!covs_[i].isApprox(covs_[i].transpose(), 1e-10))
        throw std::invalid_argument("FullGaussianMixture: covariance not symmetric");
      Eigen::LLT<Matrix> llt(covs_[i]);
      if (llt.info() != Eigen::Success) throw std::invalid_argument("FullGaussianMixture: covariance not positive definite");
      chol_.push_back(llt.matrixL());
      log_norm_.push_back(-0.5 * d * std::log(2.0 * std::numbers::pi) -
                          llt.matrixL().toDenseMatrix().diagonal().array().log().sum());
    }
  }

  Eigen::Index dim() const { return means_[0].size(); }
  std::size_t components() const { return means_.size(); }
  const Vector& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  const std::vector<Matrix>& covariances() const { return covs_; }
  const Matrix& cholesky(std::size_t k) const { return chol_[k]; }

  Vector component_log_densities(const ConstVecRef& x) const {
    Vector out(static_cast<Eigen::Index>(components()));
    for (std::size_t k = 0; k < components(); ++k) {
      const Vector z = chol_[k].triangularView<Eigen::Lower>().solve(x - means_[k]);
      out[static_cast<Eigen::Index>(k)] = log_norm_[k] - 0.5 * z.squaredNorm();
    }
    return out;
  }

  Vector responsibilities(const ConstVecRef& x) const {
    Vector lw = component_log_densities(x);
    for (Eigen::Index k = 0; k < lw.size(); ++k)
      lw[k] = weights_[k] > 0.0 ? lw[k] + std::log(weights_[k]) : -std::numeric_limits<double>::infinity();
    const double top = lw.maxCoeff();
    Vector r = (lw.array() - top).exp();
    return r / r.sum();
  }

  double log_density(const ConstVecRef& x) const {
    Vector lw = component_log_densities(x);
    double top = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < lw.size(); ++k) {
      lw[k] = weights_[k] > 0.0 ? lw[k] + std::log(weights_[k]) : -std::numeric_limits<double>::infinity();
      top = std::max(top, lw[k]);
    }
    return top + std::log((lw.array() - top).exp().sum());
  }

 private:
  Vector weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covs_;
  std::vector<Matrix> chol_;
  std::vector<double> log_norm_;
};

/// Conjugate update of an isotropic GMM prior by a linear-Gaussian likelihood.
inline FullGaussianMixture exact_posterior(const IsotropicGaussianMixture& prior, const LinearGaussianLikelihood& lik) {
  const auto d = prior.dim();
  if (d > 16) throw std::invalid_argument("exact_posterior: dimension above 16");
  const Matrix& a = lik.forward();
  const Vector& y = lik.observation();
  const double n2 = lik.noise_std() * lik.noise_std();
  const auto k = prior.components();
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  Vector logw(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double s2 = prior.variances()[i];
    const Vector m = prior.means().col(i);
    const Matrix precision = Matrix::Identity(d, d) / s2 + a.transpose() * a / n2;
    Eigen::LLT<Matrix> llt(precision);
    if (llt.info() != Eigen::Success) throw std::runtime_error("exact_posterior: singular posterior precision");
    Matrix cov = llt.solve(Matrix::Identity(d, d));
    cov = 0.5 * (cov + cov.transpose());
    means.push_back(llt.solve(m / s2 + a.transpose() * y / n2));
    covs.push_back(std::move(cov));
    // Evidence N(y; A m, n2 I + s2 A A^T).
    const Matrix ev = n2 * Matrix::Identity(a.rows(), a.rows()) + s2 * a * a.transpose();
    Eigen::LLT<Matrix> ev_llt(ev);
    const Vector z = ev_llt.matrixL().solve(y - a * m);
    const double logdet = 2.0 * ev_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    logw[i] = std::log(prior.weights()[i]) - 0.5 * z.squaredNorm() - 0.5 * logdet;
  }
  Vector w = (logw.array() - logw.maxCoeff()).exp();
  w /= w.sum();
  return FullGaussianMixture(w, std::move(means), std::move(covs));
}

/// Exact posterior of an oracle-compatible problem: GMM prior with a linear
/// Gaussian or flat likelihood.
inline FullGaussianMixture oracle_posterior(const ProblemSpec& problem) {
  const auto* gmm = problem.gmm_prior();
  if (gmm == nullptr) throw std::invalid_argument("oracle needs a Gaussian-mixture prior");
  if (const auto* lin = problem.linear_likelihood()) return exact_posterior(*gmm, *lin);
  if (!problem.is_flat()) throw std::invalid_argument("oracle needs a linear-Gaussian or flat likelihood");
  const auto d = gmm->dim();
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (Eigen::Index k = 0; k < gmm->components(); ++k) {
    means.push_back(gmm->means().col(k));
    covs.push_back(gmm->variances()[k] * Matrix::Identity(d, d));
  }
  return FullGaussianMixture(gmm->weights(), std::move(means), std::move(covs));
}

/// Law of mu_t X + sigma_t Z for X drawn from the mixture.
inline FullGaussianMixture exact_timet_posterior(const FullGaussianMixture& mix, const OUSchedule& schedule, double t) {
  const double mu = schedule.mu(t);
  const double s2 = schedule.sigma2(t);
  const auto d = mix.dim();
  std::vector<Vector> means;
  std::vector<Matrix> covs;
  for (std::size_t k = 0; k < mix.components(); ++k) {
    means.push_back(mu * mix.means()[k]);
    covs.push_back(mu * mu * mix.covariances()[k] + s2 * Matrix::Identity(d, d));
  }
  return FullGaussianMixture(mix.weights(), std::move(means), std::move(covs));
}

inline Vector exact_score(const FullGaussianMixture& mix, const ConstVecRef& x) {
  const Vector r = mix.responsibilities(x);
  Vector out = Vector::Zero(x.size());
  for (std::size_t k = 0; k < mix.components(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    if (r[i] == 0.0) continue;
    const Matrix& l = mix.cholesky(k);
    const Vector z = l.triangularView<Eigen::Lower>().solve(x - mix.means()[k]);
    out -= r[i] * l.transpose().triangularView<Eigen::Upper>().solve(z);
  }
  return out;
}

/// E[X0 | X_t = x, Y = y], computed from the joint Gaussian of (X0, X_t, Y)
/// under each prior component; independent of the posterior-then-convolve
/// route taken by exact_timet_posterior.
inline Vector exact_conditional_mean(const IsotropicGaussianMixture& prior, const LinearGaussianLikelihood& lik,
                                     const OUSchedule& schedule, double t, const ConstVecRef& x) {
  if (!(t > 0.0)) throw std::domain_error("exact_conditional_mean: t must be positive");
  const auto d = prior.dim();
  const Matrix& a = lik.forward();
  const Vector& y = lik.observation();
  const auto n = a.rows();
  const double n2 = lik.noise_std() * lik.noise_std();
  const double mu = schedule.mu(t);
  const double s2t = schedule.sigma2(t);
  const auto k = prior.components();

  // Observation vector o = (x, y) = H X0 + noise, H = [mu I; A].
  Matrix h(d + n, d);
  h << mu * Matrix::Identity(d, d), a;
  Vector o(d + n);
  o << x, y;
  Matrix noise = Matrix::Zero(d + n, d + n);
  noise.topLeftCorner(d, d).diagonal().setConstant(s2t);
  noise.bottomRightCorner(n, n).diagonal().setConstant(n2);

  Vector logw(k);
  std::vector<Vector> cond;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double s2 = prior.variances()[i];
    const Vector m = prior.means().col(i);
    const Matrix cov_o = s2 * h * h.transpose() + noise;
    Eigen::LLT<Matrix> llt(cov_o);
    const Vector resid = o - h * m;
    const Vector z = llt.matrixL().solve(resid);
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    logw[i] = std::log(prior.weights()[i]) - 0.5 * z.squaredNorm() - 0.5 * logdet;
    cond.push_back(m + s2 * h.transpose() * llt.solve(resid));
  }
  const Vector w = (logw.array() - logw.maxCoeff()).exp();
  Vector out = Vector::Zero(d);
  for (Eigen::Index i = 0; i < k; ++i) out += w[i] * cond[static_cast<std::size_t>(i)];
  return out / w.sum();
}

inline Samples sample_exact(const FullGaussianMixture& mix, std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_exact: n must be >= 1");
  const auto d = mix.dim();
  Samples out(static_cast<Eigen::Index>(n), d);
  std::discrete_distribution<std::size_t> pick(mix.weights().data(), mix.weights().data() + mix.weights().size());
  Vector z(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = pick(rng.engine());
    rng.fill_normal(z);
    out.row(static_cast<Eigen::Index>(i)) = (mix.means()[k] + mix.cholesky(k) * z).transpose();
  }
  return out;
}

/// Exact W2 between two equal-size empirical measures on the line.
inline double w2_1d(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("w2_1d: sample sizes differ");
  if (a.empty()) throw std::invalid_argument("w2_1d: empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

inline std::vector<double> column(const Samples& s, Eigen::Index j) {
  std::vector<double> out(static_cast<std::size_t>(s.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) out[static_cast<std::size_t>(i)] = s(i, j);
  return out;
}

inline double w2_1d(const Samples& a, const Samples& b) {
  if (a.cols() != 1 || b.cols() != 1) throw std::invalid_argument("w2_1d: samples must be one-dimensional");
  return w2_1d(column(a, 0), column(b, 0));
}

/// Root mean square of 1D W2 over random unit projections.
inline double w2_sliced(const Samples& a, const Samples& b, int n_projections, Rng& rng) {
  if (a.cols() != b.cols()) throw std::invalid_argument("w2_sliced: dimension mismatch");
  if (a.cols() < 2) throw std::invalid_argument("w2_sliced: needs d >= 2");
  if (n_projections < 1) throw std::invalid_argument("w2_sliced: n_projections must be >= 1");
  double acc = 0.0;
  for (int p = 0; p < n_projections; ++p) {
    Vector u = rng.normal_vector(a.cols());
    u.normalize();
    const Vector pa = a * u;
    const Vector pb = b * u;
    const double w = w2_1d(std::vector<double>(pa.data(), pa.data() + pa.size()),
                           std::vector<double>(pb.data(), pb.data() + pb.size()));
    acc += w * w;
  }
  return std::sqrt(acc / n_projections);
}

/// W2 choosing the exact 1D form or the sliced one.
inline double w2_distance(const Samples& a, const Samples& b, Rng& rng, int n_projections = 128) {
  return a.cols() == 1 ? w2_1d(a, b) : w2_sliced(a, b, n_projections, rng);
}

/// Fraction of samples assigned to each mixture component by largest
/// responsibility.
inline Vector mode_weights(const Samples& s, const FullGaussianMixture& mix) {
  Vector counts = Vector::Zero(static_cast<Eigen::Index>(mix.components()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best = 0;
    mix.responsibilities(s.row(i).transpose()).maxCoeff(&best);
    counts[best] += 1.0;
  }
  return counts / static_cast<double>(s.rows());
}

/// Unadjusted Langevin directly on the time-zero posterior score, from N(0, I).
inline Vector ula_chain(const ProblemSpec& problem, int steps, double step_size, Rng& rng) {
  if (!(step_size > 0.0)) throw std::invalid_argument("ula: step_size must be positive");
  if (steps < 0) throw std::invalid_argument("ula: steps must be nonnegative");
  const auto d = problem.dim();
  Vector x = rng.normal_vector(d);
  Vector s(d);
  Vector scratch(d);
  const double noise = std::sqrt(2.0 * step_size);
  for (int k = 0; k < steps; ++k) {
    problem.posterior_score(x, s, scratch);
    for (Eigen::Index j = 0; j < d; ++j) x[j] += s[j] * step_size + noise * rng.normal();
    if (!x.allFinite()) throw DivergenceError("ula", 0.0, static_cast<std::size_t>(k), describe(x));
  }
  return x;
}

inline Samples ula_baseline(const ProblemSpec& problem, int steps, double step_size, std::size_t n,
                            std::uint64_t master_seed, int workers = 1) {
  return parallel_draws(n, problem.dim(), master_seed, workers,
                        [&](std::size_t, Rng& rng) { return ula_chain(problem, steps, step_size, rng); });
}

/// Dirac-delta guidance: grad log pi_t(x) - zeta J_D(x)^T grad l_y(D(t, x)),
/// with D the prior denoiser and J_D from central differences.
class DpsScoreEstimator final : public ScoreEstimator {
 public:
  DpsScoreEstimator(const ProblemSpec& problem, OUSchedule schedule, double zeta, double fd_step = 1e-4)
      : problem_(problem), schedule_(schedule), zeta_(zeta), h_(fd_step) {
    if (!problem.prior->has_denoiser()) throw std::invalid_argument("dps: prior must expose a denoiser");
    if (!(fd_step > 0.0)) throw std::invalid_argument("dps: finite-difference step must be positive");
  }

  Vector estimate(double t, const ConstVecRef& x, Rng&) override {
    const auto d = x.size();
    const double mu = schedule_.mu(t);
    const double s2 = schedule_.sigma2(t);
    Vector den(d);
    problem_.prior->denoise(t, x, den);
    Vector out = (mu * den - x) / s2;
    if (zeta_ == 0.0 || problem_.is_flat()) return out;
    Vector g(d);
    problem_.likelihood->grad_neg_log(den, g);
    Vector xp = x;
    Vector dp(d);
    Vector dm(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      xp[i] = x[i] + h_;
      problem_.prior->denoise(t, xp, dp);
      xp[i] = x[i] - h_;
      problem_.prior->denoise(t, xp, dm);
      xp[i] = x[i];
      out[i] -= zeta_ * g.dot(dp - dm) / (2.0 * h_);
    }
    return out;
  }

 private:
  const ProblemSpec& problem_;
  OUSchedule schedule_;
  double zeta_;
  double h_;
};

/// One DPS draw: start from N(0, I) at t_start and run the reverse loop and
/// post-processing of config (config.T is replaced by t_start).
inline Vector dps_baseline(const ProblemSpec& problem, const OUSchedule& schedule, ReverseConfig config,
                           double t_start, double zeta, Rng& rng) {
  config.T = t_start;
  if (!config.truncation_radius) config.truncation_radius = std::numeric_limits<double>::infinity();
  config.validate();
  DpsScoreEstimator estimator(problem, schedule, zeta);
  return run_reverse(problem, schedule, config, estimator, rng.normal_vector(problem.dim()), rng);
}

}  // namespace pdps
