#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

#include "pdps/rng.hpp"
#include "pdps/schedule.hpp"
#include "pdps/types.hpp"

namespace pdps {

/// Source of the prior score grad log pi_0. Implementations are immutable
/// after construction and safe for concurrent reads.
class PriorScoreProvider {
 public:
  virtual ~PriorScoreProvider() = default;

  virtual Eigen::Index dim() const = 0;

  /// Writes grad log pi_0(x) into out. Hot path: must not allocate.
  virtual void score(const ConstVecRef& x, VecRef out) const = 0;

  Vector score(const ConstVecRef& x) const {
    Vector out(dim());
    score(x, out);
    return out;
  }

  virtual bool has_log_density() const { return false; }
  virtual double log_density(const ConstVecRef&) const {
    throw std::logic_error("prior does not expose a log density");
  }

  /// E[X_0 | mu_t X_0 + sigma_t Z = x] under the OU schedule.
  virtual bool has_denoiser() const { return false; }
  virtual void denoise(double /*t*/, const ConstVecRef& /*x*/, VecRef /*out*/) const {
    throw std::logic_error("prior does not expose a denoiser");
  }

  /// E[X_0 | X_0 + sigma Z = x], the variance-exploding parametrisation used
  /// by the optional final clean-up step. sigma == 0 is the identity.
  virtual void denoise_at_noise_level(double /*sigma*/, const ConstVecRef& /*x*/, VecRef /*out*/) const {
    throw std::logic_error("prior does not expose a denoiser");
  }

  virtual bool can_sample() const { return false; }
  virtual void sample(Rng&, VecRef) const { throw std::logic_error("prior cannot be sampled"); }
};

/// pi_0(x) = sum_k w_k N(x; m_k, s_k^2 I).
class IsotropicGaussianMixture final : public PriorScoreProvider {
 public:
  /// means holds one component mean per column (d x K).
  IsotropicGaussianMixture(Vector weights, Matrix means, Vector variances)
      : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    const auto k = weights_.size();
    if (k == 0) throw std::invalid_argument("gmm: at least one component required");
    if (means_.cols() != k || variances_.size() != k)
      throw std::invalid_argument("gmm: weights, means and variances disagree on component count");
    if (means_.rows() == 0) throw std::invalid_argument("gmm: dimension must be positive");
    if (!(weights_.array() > 0.0).all()) throw std::invalid_argument("gmm: weights must be positive");
    if (std::abs(weights_.sum() - 1.0) > 1e-9) throw std::invalid_argument("gmm: weights must sum to 1");
    if (!(variances_.array() > 0.0).all()) throw std::domain_error("gmm: component variances must be positive");
    if (!means_.allFinite() || !variances_.allFinite()) throw std::invalid_argument("gmm: non-finite parameters");
    weights_ /= weights_.sum();
    log_weights_ = weights_.array().log();
    // Component log-normalisers for the unconvolved case (a = 1, b2 = 0).
    base_log_norm_ = log_weights_.array() - 0.5 * static_cast<double>(dim()) * variances_.array().log();
  }

  /// One-dimensional convenience constructor.
  static IsotropicGaussianMixture scalar(const std::vector<double>& weights, const std::vector<double>& means,
                                         const std::vector<double>& variances) {
    const auto k = static_cast<Eigen::Index>(weights.size());
    Matrix m(1, k);
    for (Eigen::Index i = 0; i < k; ++i) m(0, i) = means.at(static_cast<std::size_t>(i));
    return {Eigen::Map<const Vector>(weights.data(), k), m, Eigen::Map<const Vector>(variances.data(), k)};
  }

  Eigen::Index dim() const override { return means_.rows(); }
  Eigen::Index components() const { return weights_.size(); }
  const Vector& weights() const { return weights_; }
  const Matrix& means() const { return means_; }
  const Vector& variances() const { return variances_; }

  void score(const ConstVecRef& x, VecRef out) const override { convolved_score(x, 1.0, 0.0, out); }
  using PriorScoreProvider::score;

  bool has_log_density() const override { return true; }
  double log_density(const ConstVecRef& x) const override { return convolved_log_density(x, 1.0, 0.0); }

  bool has_denoiser() const override { return true; }

  /// Tweedie: D = (x + sigma_t^2 grad log pi_t(x)) / mu_t, where pi_t has
  /// component means mu_t m_k and variances mu_t^2 s_k^2 + sigma_t^2.
  void denoise(double t, const ConstVecRef& x, VecRef out) const override {
    if (!(t > 0.0)) throw std::domain_error("gmm denoiser: t must be positive");
    const OUSchedule s;
    const double mu = s.mu(t);
    const double s2 = s.sigma2(t);
    convolved_score(x, mu, s2, out);
    out = (x + s2 * out) / mu;
  }

  void denoise_at_noise_level(double sigma, const ConstVecRef& x, VecRef out) const override {
    if (sigma == 0.0) {
      out = x;
      return;
    }
    convolved_score(x, 1.0, sigma * sigma, out);
    out = x + sigma * sigma * out;
  }

  bool can_sample() const override { return true; }
  void sample(Rng& rng, VecRef out) const override {
    const double u = rng.uniform();
    double acc = 0.0;
    Eigen::Index k = components() - 1;
    for (Eigen::Index i = 0; i < components(); ++i) {
      acc += weights_[i];
      if (u < acc) {
        k = i;
        break;
      }
    }
    const double sd = std::sqrt(variances_[k]);
    for (Eigen::Index j = 0; j < dim(); ++j) out[j] = means_(j, k) + sd * rng.normal();
  }

  /// Score of the law of a X_0 + sqrt(b2) Z: components N(a m_k, (a^2 s_k^2 + b2) I).
  /// Single pass with a running log-sum-exp so separated modes never underflow.
  void convolved_score(const ConstVecRef& x, double a, double b2, VecRef out) const {
    const auto d = static_cast<double>(dim());
    double max_log = -std::numeric_limits<double>::infinity();
    double total = 0.0;
    out.setZero();
    const bool base = (a == 1.0 && b2 == 0.0);
    for (Eigen::Index k = 0; k < components(); ++k) {
      const double var = a * a * variances_[k] + b2;
      const double dist2 = (x - a * means_.col(k)).squaredNorm();
      const double norm = base ? base_log_norm_[k] : log_weights_[k] - 0.5 * d * std::log(var);
      const double lk = norm - 0.5 * dist2 / var;
      if (lk > max_log) {
        const double rescale = std::exp(max_log - lk);
        total *= rescale;
        out *= rescale;
        max_log = lk;
      }
      const double r = std::exp(lk - max_log);
      total += r;
      out.noalias() -= (r / var) * (x - a * means_.col(k));
    }
    out /= total;
  }

  double convolved_log_density(const ConstVecRef& x, double a, double b2) const {
    const auto d = static_cast<double>(dim());
    double max_log = -std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (Eigen::Index k = 0; k < components(); ++k) {
      const double var = a * a * variances_[k] + b2;
      const double lk = log_weights_[k] - 0.5 * (x - a * means_.col(k)).squaredNorm() / var -
                        0.5 * d * std::log(2.0 * std::numbers::pi * var);
      if (lk > max_log) {
        total *= std::exp(max_log - lk);
        max_log = lk;
      }
      total += std::exp(lk - max_log);
    }
    return max_log + std::log(total);
  }

  /// Posterior responsibilities xi_k(x) of the components at x.
  Vector responsibilities(const ConstVecRef& x) const {
    const auto d = static_cast<double>(dim());
    Vector lk(components());
    for (Eigen::Index k = 0; k < components(); ++k) {
      lk[k] = log_weights_[k] - 0.5 * (x - means_.col(k)).squaredNorm() / variances_[k] -
              0.5 * d * std::log(variances_[k]);
    }
    lk.array() -= lk.maxCoeff();
    lk = lk.array().exp();
    return lk / lk.sum();
  }

  /// Analytic Hessian of log pi_0:
  /// sum_k xi_k (s_k - s) s_k^T - (sum_k xi_k / s_k^2) I, with s_k the component scores.
  Matrix hessian_log_density(const ConstVecRef& x) const {
    const Vector xi = responsibilities(x);
    const Vector s = score(x);
    Matrix h = Matrix::Zero(dim(), dim());
    double diag = 0.0;
    for (Eigen::Index k = 0; k < components(); ++k) {
      const Vector sk = -(x - means_.col(k)) / variances_[k];
      h.noalias() += xi[k] * (sk - s) * sk.transpose();
      diag += xi[k] / variances_[k];
    }
    h.diagonal().array() -= diag;
    return 0.5 * (h + h.transpose());
  }

 private:
  Vector weights_;
  Matrix means_;
  Vector variances_;
  Vector log_weights_;
  Vector base_log_norm_;
};

inline Vector gmm_score(const IsotropicGaussianMixture& gmm, const ConstVecRef& x) { return gmm.score(x); }

inline double gmm_log_density(const IsotropicGaussianMixture& gmm, const ConstVecRef& x) {
  return gmm.log_density(x);
}

inline Vector gmm_prior_denoiser(const IsotropicGaussianMixture& gmm, double t, const ConstVecRef& x) {
  Vector out(gmm.dim());
  gmm.denoise(t, x, out);
  return out;
}

/// Negative log-likelihood l_y(x) = -log p(y | x), up to an additive constant.
class Likelihood {
 public:
  virtual ~Likelihood() = default;
  virtual Eigen::Index dim() const = 0;
  virtual Eigen::Index obs_dim() const = 0;
  virtual double neg_log(const ConstVecRef& x) const = 0;
  /// Hot path: must not allocate.
  virtual void grad_neg_log(const ConstVecRef& x, VecRef out) const = 0;

  Vector grad_neg_log(const ConstVecRef& x) const {
    Vector out(dim());
    grad_neg_log(x, out);
    return out;
  }
};

/// l_y == 0: the posterior is the prior.
class FlatLikelihood final : public Likelihood {
 public:
  explicit FlatLikelihood(Eigen::Index d) : d_(d) {}
  Eigen::Index dim() const override { return d_; }
  Eigen::Index obs_dim() const override { return 0; }
  double neg_log(const ConstVecRef&) const override { return 0.0; }
  void grad_neg_log(const ConstVecRef&, VecRef out) const override { out.setZero(); }
  using Likelihood::grad_neg_log;

 private:
  Eigen::Index d_;
};

/// y = A x + n, n ~ N(0, noise_std^2 I).
class LinearGaussianLikelihood final : public Likelihood {
 public:
  LinearGaussianLikelihood(Matrix a, Vector y, double noise_std)
      : a_(std::move(a)), y_(std::move(y)), noise_std_(noise_std) {
    if (!(noise_std_ > 0.0)) throw std::invalid_argument("linear likelihood: noise_std must be positive");
    if (a_.rows() != y_.size()) throw std::invalid_argument("linear likelihood: A rows must match y");
    const double inv = 1.0 / (noise_std_ * noise_std_);
    gram_ = inv * a_.transpose() * a_;
    aty_ = inv * a_.transpose() * y_;
  }

  Eigen::Index dim() const override { return a_.cols(); }
  Eigen::Index obs_dim() const override { return a_.rows(); }
  const Matrix& forward() const { return a_; }
  const Vector& observation() const { return y_; }
  double noise_std() const { return noise_std_; }
  /// A^T A / noise_std^2, the constant Hessian of l_y.
  const Matrix& hessian() const { return gram_; }

  double neg_log(const ConstVecRef& x) const override {
    return (y_ - a_ * x).squaredNorm() / (2.0 * noise_std_ * noise_std_);
  }

  void grad_neg_log(const ConstVecRef& x, VecRef out) const override {
    out.noalias() = gram_ * x;
    out -= aty_;
  }
  using Likelihood::grad_neg_log;

 private:
  Matrix a_;
  Vector y_;
  double noise_std_;
  Matrix gram_;
  Vector aty_;
};

/// Differentiable forward map R^d -> R^n given by its value and the
/// Jacobian-transpose action v -> J_F(x)^T v.
struct ForwardModel {
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
  std::function<Vector(const ConstVecRef&)> value;
  std::function<Vector(const ConstVecRef&, const ConstVecRef&)> vjp;
  std::string name;
};

/// Componentwise tanh after a linear map: F(x) = tanh(A x).
inline ForwardModel tanh_forward_model(Matrix a) {
  auto shared = std::make_shared<const Matrix>(std::move(a));
  ForwardModel f;
  f.in_dim = shared->cols();
  f.out_dim = shared->rows();
  f.name = "tanh";
  f.value = [shared](const ConstVecRef& x) -> Vector { return ((*shared) * x).array().tanh().matrix(); };
  f.vjp = [shared](const ConstVecRef& x, const ConstVecRef& v) -> Vector {
    const Eigen::ArrayXd th = ((*shared) * x).array().tanh();
    return shared->transpose() * ((1.0 - th.square()) * v.array()).matrix();
  };
  return f;
}

/// y = F(x) + n, n ~ N(0, noise_std^2 I).
class NonlinearGaussianLikelihood final : public Likelihood {
 public:
  NonlinearGaussianLikelihood(ForwardModel f, Vector y, double noise_std)
      : f_(std::move(f)), y_(std::move(y)), noise_std_(noise_std) {
    if (!(noise_std_ > 0.0)) throw std::invalid_argument("nonlinear likelihood: noise_std must be positive");
    if (!f_.value || !f_.vjp) throw std::invalid_argument("nonlinear likelihood: forward map and its vjp required");
    if (f_.out_dim != y_.size()) throw std::invalid_argument("nonlinear likelihood: output dimension must match y");
  }

  Eigen::Index dim() const override { return f_.in_dim; }
  Eigen::Index obs_dim() const override { return f_.out_dim; }
  const ForwardModel& forward() const { return f_; }
  const Vector& observation() const { return y_; }
  double noise_std() const { return noise_std_; }

  double neg_log(const ConstVecRef& x) const override {
    return (f_.value(x) - y_).squaredNorm() / (2.0 * noise_std_ * noise_std_);
  }

  /// J_F(x)^T (F(x) - y) / noise_std^2.
  void grad_neg_log(const ConstVecRef& x, VecRef out) const override {
    const Vector r = f_.value(x) - y_;
    out = f_.vjp(x, r) / (noise_std_ * noise_std_);
  }
  using Likelihood::grad_neg_log;

 private:
  ForwardModel f_;
  Vector y_;
  double noise_std_;
};

/// A Bayesian inverse problem: posterior q_0(x | y) ∝ exp(-l_y(x)) pi_0(x).
struct ProblemSpec {
  std::shared_ptr<const PriorScoreProvider> prior;
  std::shared_ptr<const Likelihood> likelihood;

  ProblemSpec(std::shared_ptr<const PriorScoreProvider> p, std::shared_ptr<const Likelihood> l)
      : prior(std::move(p)), likelihood(std::move(l)) {
    if (!prior || !likelihood) throw std::invalid_argument("problem: prior and likelihood required");
    if (prior->dim() != likelihood->dim())
      throw std::invalid_argument("problem: prior and likelihood dimensions differ");
  }

  Eigen::Index dim() const { return prior->dim(); }
  Eigen::Index obs_dim() const { return likelihood->obs_dim(); }

  /// grad log q_0(x | y) = grad log pi_0(x) - grad l_y(x). Uses out as scratch.
  void posterior_score(const ConstVecRef& x, VecRef out, VecRef scratch) const {
    prior->score(x, out);
    likelihood->grad_neg_log(x, scratch);
    out -= scratch;
  }

  /// Non-null when the prior is an isotropic Gaussian mixture.
  const IsotropicGaussianMixture* gmm_prior() const {
    return dynamic_cast<const IsotropicGaussianMixture*>(prior.get());
  }
  const LinearGaussianLikelihood* linear_likelihood() const {
    return dynamic_cast<const LinearGaussianLikelihood*>(likelihood.get());
  }
  bool is_flat() const { return dynamic_cast<const FlatLikelihood*>(likelihood.get()) != nullptr; }
};

}  // namespace pdps
