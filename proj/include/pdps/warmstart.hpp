#pragma once

#include <cmath>
#include <stdexcept>

#include "pdps/rgo.hpp"

namespace pdps {

/// How the outer Langevin loop turns the SNR rule into step sizes.
enum class OuterStepRule {
  // Step from the norm of the current score estimate alone. For a single
  // trajectory this makes the step state-dependent and biases the invariant
  // law towards high-score regions; kept for comparison.
  kInstantaneous,
  // Step from the running mean of past score norms during the first
  // adapt_fraction of the loop, then frozen.
  kAdaptThenFreeze,
};

struct WarmStartConfig {
  int n_out = 400;
  double snr_out = 0.16;
  bool chain_reuse = true;
  RgoConfig inner = [] {
    RgoConfig c;
    c.n_in = 50;
    return c;
  }();
  StepClamp step_clamp{};
  OuterStepRule step_rule = OuterStepRule::kAdaptThenFreeze;
  double adapt_fraction = 0.5;

  void validate() const {
    if (n_out < 0) throw std::invalid_argument("warm start: n_out must be nonnegative");
    if (!(snr_out > 0.0)) throw std::invalid_argument("warm start: snr_out must be positive");
    if (!(adapt_fraction > 0.0 && adapt_fraction <= 1.0))
      throw std::invalid_argument("warm start: adapt_fraction must lie in (0, 1]");
    if (!(step_clamp.min > 0.0 && step_clamp.min <= step_clamp.max))
      throw std::invalid_argument("warm start: step clamp must satisfy 0 < min <= max");
    inner.validate();
  }
};

struct WarmStartResult {
  Vector x;             // approximate draw from q_T(. | y)
  ParticleBatch batch;  // inner batch of the last outer step (empty for injected scores)
  double last_step = 0.0;
};

/// Outer Langevin dynamics targeting q_T(. | y), started at N(0, I), driven
/// by whatever score estimator is supplied.
inline WarmStartResult warm_start(ScoreEstimator& estimator, Eigen::Index d, double T, const WarmStartConfig& config,
                                  Rng& rng) {
  if (!(T > 0.0)) throw std::domain_error("warm_start: T must be positive");
  config.validate();
  WarmStartResult out;
  out.x = rng.normal_vector(d);

  const int n_adapt = std::max(1, static_cast<int>(std::ceil(config.adapt_fraction * config.n_out)));
  double norm_sum = 0.0;
  double dt = 0.0;
  for (int k = 0; k < config.n_out; ++k) {
    const Vector s = estimator.estimate(T, out.x, rng);
    switch (config.step_rule) {
      case OuterStepRule::kInstantaneous:
        dt = rgo_step_size(config.snr_out, s.norm(), d, config.step_clamp);
        break;
      case OuterStepRule::kAdaptThenFreeze:
        if (k < n_adapt) {
          norm_sum += s.norm();
          dt = rgo_step_size(config.snr_out, norm_sum / (k + 1), d, config.step_clamp);
        }
        break;
    }
    const double noise = std::sqrt(2.0 * dt);
    for (Eigen::Index j = 0; j < d; ++j) out.x[j] += s[j] * dt + noise * rng.normal();
    if (!out.x.allFinite()) throw DivergenceError("warm start", T, static_cast<std::size_t>(k), describe(out.x));
  }
  out.last_step = dt;
  return out;
}

/// Warm start with the Monte Carlo posterior score. With chain reuse the
/// inner chains of each outer step initialise those of the next.
inline WarmStartResult warm_start(const ProblemSpec& problem, const OUSchedule& schedule, double T,
                                  const WarmStartConfig& config, Rng& rng) {
  RgoScoreEstimator estimator(problem, config.inner, config.chain_reuse, schedule);
  WarmStartResult out = warm_start(estimator, problem.dim(), T, config, rng);
  if (config.n_out > 0) out.batch = estimator.last_batch();
  return out;
}

}  // namespace pdps
