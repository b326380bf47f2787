#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <utility>

#include "pdps/models.hpp"
#include "pdps/rng.hpp"
#include "pdps/schedule.hpp"
#include "pdps/types.hpp"

namespace pdps {

struct StepClamp {
  double min = 1e-10;
  double max = 0.1;
};

/// Inner Langevin settings for sampling the posterior denoising density.
struct RgoConfig {
  int n_in = 20;
  double snr_in = 0.075;
  int m_chains = 20;
  double burn_in_fraction = 0.5;  // leading fraction of each chain discarded
  StepClamp step_clamp{};
  bool strict = false;            // pool only the final state of each chain
  // On reuse, move carried chains by the predicted change of the target mean,
  // (mu/sigma^2) Cov[x0] (x_new - x_old), with Cov taken from the particles.
  bool shift_on_reuse = true;

  int tail_length() const {
    if (n_in == 0) return 0;
    if (strict) return 1;
    return static_cast<int>(std::ceil((1.0 - burn_in_fraction) * n_in - 1e-9));
  }

  int particle_count() const { return n_in == 0 ? m_chains : m_chains * tail_length(); }

  void validate() const {
    if (n_in < 0) throw std::invalid_argument("rgo: n_in must be nonnegative");
    if (m_chains < 1) throw std::invalid_argument("rgo: m_chains must be positive");
    if (!(snr_in > 0.0)) throw std::invalid_argument("rgo: snr_in must be positive");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0))
      throw std::invalid_argument("rgo: burn_in_fraction must lie in [0, 1)");
    if (!(step_clamp.min > 0.0 && step_clamp.min <= step_clamp.max))
      throw std::invalid_argument("rgo: step clamp must satisfy 0 < min <= max");
    if (particle_count() < 1) throw std::invalid_argument("rgo: effective particle count must be >= 1");
  }
};

/// Particles approximately distributed as p_t(. | x, y), one per row.
struct ParticleBatch {
  Samples particles;  // pooled post-burn-in states
  Samples chains;     // final state of every chain, reused to warm-start the next call
  double t = 0.0;
  Vector x;
};

/// Drift of the Langevin dynamics whose invariant law is the posterior
/// denoising density: s_prior(x0) + (mu_t/sigma_t^2)(x - mu_t x0) - grad l_y(x0).
/// Writes into out; scratch receives the likelihood gradient. No allocation.
inline void rgo_drift_into(const ProblemSpec& problem, double mu, double s2, const ConstVecRef& x,
                           const ConstVecRef& x0, VecRef out, VecRef scratch) {
  problem.prior->score(x0, out);
  out.noalias() += (mu / s2) * (x - mu * x0);
  problem.likelihood->grad_neg_log(x0, scratch);
  out -= scratch;
}

inline Vector rgo_drift(const ProblemSpec& problem, const OUSchedule& schedule, double t, const ConstVecRef& x,
                        const ConstVecRef& x0) {
  if (!(t > 0.0)) throw std::domain_error("rgo_drift: t must be positive");
  Vector out(problem.dim());
  Vector scratch(problem.dim());
  rgo_drift_into(problem, schedule.mu(t), schedule.sigma2(t), x, x0, out, scratch);
  return out;
}

/// Signal-to-noise step size: 2 (snr sqrt(d) / |drift|)^2, clamped.
inline double rgo_step_size(double snr, double mean_drift_norm, Eigen::Index d, const StepClamp& clamp = {}) {
  if (!(snr > 0.0)) throw std::invalid_argument("rgo_step_size: snr must be positive");
  if (!(mean_drift_norm >= 0.0)) throw std::invalid_argument("rgo_step_size: drift norm must be nonnegative");
  const double ratio = snr * std::sqrt(static_cast<double>(d)) / std::max(mean_drift_norm, 1e-12);
  return std::clamp(2.0 * ratio * ratio, clamp.min, clamp.max);
}

/// Evolves config.m_chains Euler-Maruyama chains for config.n_in steps
/// towards p_t(. | x, y). The step size is shared by all chains and set each
/// step from the mean drift norm across chains. Chains start at init (one row
/// per chain) or, without init, at N(0, I). Chains are advanced in index
/// order from a single stream, so results depend only on the rng state.
inline ParticleBatch rgo_sample(const ProblemSpec& problem, const OUSchedule& schedule, double t,
                                const ConstVecRef& x, const RgoConfig& config, const Samples* init, Rng& rng) {
  if (!(t > 0.0)) throw std::domain_error("rgo_sample: t must be positive");
  config.validate();
  const auto d = problem.dim();
  const auto m = static_cast<Eigen::Index>(config.m_chains);
  if (x.size() != d) throw std::invalid_argument("rgo_sample: x has wrong dimension");

  ParticleBatch batch;
  batch.t = t;
  batch.x = x;
  if (init != nullptr) {
    if (init->rows() != m || init->cols() != d)
      throw std::invalid_argument("rgo_sample: init batch must hold one row per chain");
    batch.chains = *init;
  } else {
    batch.chains.resize(m, d);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < d; ++j) batch.chains(i, j) = rng.normal();
  }

  if (config.n_in == 0) {
    batch.particles = batch.chains;
    return batch;
  }

  const double mu = schedule.mu(t);
  const double s2 = schedule.sigma2(t);
  const int tail = config.tail_length();
  const int first_kept = config.n_in - tail;
  batch.particles.resize(m * tail, d);

  Samples drift(m, d);
  Vector scratch(d);
  Eigen::Index row = 0;
  for (int step = 0; step < config.n_in; ++step) {
    double norm_sum = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      rgo_drift_into(problem, mu, s2, x, batch.chains.row(i).transpose(), drift.row(i).transpose(), scratch);
      norm_sum += drift.row(i).norm();
    }
    const double dt = rgo_step_size(config.snr_in, norm_sum / static_cast<double>(m), d, config.step_clamp);
    const double noise = std::sqrt(2.0 * dt);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) batch.chains(i, j) += drift(i, j) * dt + noise * rng.normal();
      if (!batch.chains.row(i).allFinite())
        throw DivergenceError("rgo", t, static_cast<std::size_t>(step), describe(x));
    }
    if (step >= first_kept) {
      batch.particles.middleRows(row, m) = batch.chains;
      row += m;
    }
  }
  return batch;
}

/// Monte Carlo posterior denoiser: the mean of the particles.
inline Vector estimate_denoiser(const ParticleBatch& batch) {
  if (batch.particles.rows() == 0) throw std::invalid_argument("estimate_denoiser: empty batch");
  return batch.particles.colwise().mean().transpose();
}

/// Conditional Tweedie: grad log q_t(x | y) = -x/sigma_t^2 + (mu_t/sigma_t^2) D(t, x, y).
inline Vector score_from_denoiser(const OUSchedule& schedule, double t, const ConstVecRef& x,
                                  const ConstVecRef& denoised) {
  const double mu = schedule.mu(t);
  const double s2 = schedule.sigma2(t);
  return (mu * denoised - x) / s2;
}

inline Vector estimate_posterior_score(const ProblemSpec& problem, const OUSchedule& schedule, double t,
                                       const ConstVecRef& x, const RgoConfig& config, const Samples* init,
                                       Rng& rng, ParticleBatch* batch_out = nullptr) {
  ParticleBatch batch = rgo_sample(problem, schedule, t, x, config, init, rng);
  Vector score = score_from_denoiser(schedule, t, x, estimate_denoiser(batch));
  if (batch_out != nullptr) *batch_out = std::move(batch);
  return score;
}

/// Posterior score at (t, x) as seen by the outer samplers. Stateful
/// implementations (chain reuse) are owned by a single trajectory.
class ScoreEstimator {
 public:
  virtual ~ScoreEstimator() = default;
  virtual Vector estimate(double t, const ConstVecRef& x, Rng& rng) = 0;
};

/// Monte Carlo estimator backed by rgo_sample. With reuse enabled, the final
/// chain states of one call initialise the next.
class RgoScoreEstimator final : public ScoreEstimator {
 public:
  RgoScoreEstimator(const ProblemSpec& problem, RgoConfig config, bool reuse, OUSchedule schedule = {})
      : problem_(problem), config_(config), reuse_(reuse), schedule_(schedule) {
    config_.validate();
  }

  Vector estimate(double t, const ConstVecRef& x, Rng& rng) override {
    if (reuse_ && chains_ && config_.shift_on_reuse && last_.particles.rows() > 1 && last_.x.size() == x.size())
      shift_chains(x);
    const Samples* init = (reuse_ && chains_) ? &*chains_ : nullptr;
    ParticleBatch batch = rgo_sample(problem_, schedule_, t, x, config_, init, rng);
    Vector score = score_from_denoiser(schedule_, t, x, estimate_denoiser(batch));
    if (reuse_) chains_ = batch.chains;
    last_ = std::move(batch);
    return score;
  }

  void set_config(const RgoConfig& config) {
    config.validate();
    if (chains_ && chains_->rows() != config.m_chains) chains_.reset();
    config_ = config;
  }
  const RgoConfig& config() const { return config_; }

  void seed_chains(Samples chains) { chains_ = std::move(chains); }
  const std::optional<Samples>& chains() const { return chains_; }
  const ParticleBatch& last_batch() const { return last_; }

 private:
  void shift_chains(const ConstVecRef& x) {
    const Vector dx = x - last_.x;
    if (dx.squaredNorm() == 0.0) return;
    const Eigen::RowVectorXd mean = last_.particles.colwise().mean();
    const Samples centered = last_.particles.rowwise() - mean;
    const Vector proj = centered * dx;
    const Vector cov_dx = centered.transpose() * proj / static_cast<double>(last_.particles.rows() - 1);
    const double mu = schedule_.mu(last_.t);
    Vector shift = mu / schedule_.sigma2(last_.t) * cov_dx;
    // Trust region: never move further than the tether centre x / mu does.
    const double gain = mu * shift.dot(dx) / dx.squaredNorm();
    if (gain > 1.0) shift /= gain;
    chains_->rowwise() += shift.transpose();
  }

  const ProblemSpec& problem_;
  RgoConfig config_;
  bool reuse_;
  OUSchedule schedule_;
  std::optional<Samples> chains_;
  ParticleBatch last_;
};

/// Wraps a known score function; used to inject exact scores in tests.
class FunctionScoreEstimator final : public ScoreEstimator {
 public:
  explicit FunctionScoreEstimator(std::function<Vector(double, const ConstVecRef&)> fn) : fn_(std::move(fn)) {}
  Vector estimate(double t, const ConstVecRef& x, Rng&) override { return fn_(t, x); }

 private:
  std::function<Vector(double, const ConstVecRef&)> fn_;
};

}  // namespace pdps
