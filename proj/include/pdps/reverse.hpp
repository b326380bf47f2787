#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "pdps/constants.hpp"
#include "pdps/warmstart.hpp"

namespace pdps {

/// Map applied once at T0 to reach time zero.
enum class FinalStep {
  kNone,
  kReverseDrift,     // x + (x + 2 s(T0, x)) T0, the reverse SDE drift without noise
  kProbabilityFlow,  // x + (x + s(T0, x)) T0, the probability-flow drift
};

struct ReverseConfig {
  double T = 0.2;
  double T0 = 0.05;
  int steps_per_unit_time = 1200;
  // nullopt: derive R from the problem; +inf: no truncation.
  std::optional<double> truncation_radius;
  double truncation_eps = 0.01;
  FinalStep final_step = FinalStep::kProbabilityFlow;
  bool apply_scaling = false;
  double final_denoise_sigma = 0.0;
  RgoConfig inner{};
  WarmStartConfig warm{};

  /// ceil(steps_per_unit_time * (T - T0)), the number of reverse steps.
  int reverse_steps() const {
    const double raw = steps_per_unit_time * (T - T0);
    return std::max(1, static_cast<int>(std::ceil(raw - 1e-9 * std::max(1.0, raw))));
  }

  void validate() const {
    if (!(T0 > 0.0 && T0 < T)) throw std::invalid_argument("reverse: require 0 < T0 < T");
    if (steps_per_unit_time < 1) throw std::invalid_argument("reverse: steps_per_unit_time must be positive");
    if (truncation_radius && !(*truncation_radius > 0.0))
      throw std::invalid_argument("reverse: truncation radius must be positive");
    if (!(truncation_eps > 0.0 && truncation_eps < 1.0))
      throw std::invalid_argument("reverse: truncation_eps must lie in (0, 1)");
    if (!(final_denoise_sigma >= 0.0)) throw std::invalid_argument("reverse: final_denoise_sigma must be >= 0");
    inner.validate();
    warm.validate();
  }
};

/// x if |x|_2 <= R, else 0.
inline Vector truncate(const ConstVecRef& x, double R) {
  if (!(R > 0.0)) throw std::domain_error("truncate: R must be positive");
  if (x.norm() <= R) return x;
  return Vector::Zero(x.size());
}

/// x / mu_{T0}: undoes the mean contraction of the forward process at T0.
inline Vector scale(const ConstVecRef& x, double T0, const OUSchedule& schedule) {
  if (!(T0 > 0.0)) throw std::domain_error("scale: T0 must be positive");
  return x / schedule.mu(T0);
}

/// R^2 = (4 mu_{T0}^2 V^2 + 16 sigma_{T0}^2) log(kappa / eps).
inline double auto_truncation_radius(const OUSchedule& schedule, double T0, double kappa, double v_sg2, double eps) {
  const double r2 = (4.0 * std::pow(schedule.mu(T0), 2) * v_sg2 + 16.0 * schedule.sigma2(T0)) * std::log(kappa / eps);
  if (!(r2 > 0.0)) return std::numeric_limits<double>::infinity();
  return std::sqrt(r2);
}

namespace detail {
inline constexpr std::uint64_t kResolutionSeed = 0x5eed0f7a11ull;
}

/// Fills in an automatic truncation radius. Needs a Gaussian-mixture prior;
/// uses a fixed internal seed so every caller resolves the same R.
inline ReverseConfig resolve_truncation(const ProblemSpec& problem, const OUSchedule& schedule, ReverseConfig config) {
  if (config.truncation_radius) return config;
  const auto* gmm = problem.gmm_prior();
  if (gmm == nullptr)
    throw std::invalid_argument("automatic truncation radius needs a Gaussian-mixture prior; set it explicitly");
  Rng rng(detail::kResolutionSeed);
  const double v_sg2 = 2.0 * gmm->variances().maxCoeff() * 1.1;
  const ConditionEstimate kappa = condition_number(problem, 4000, 8, rng);
  config.truncation_radius = kappa.underflow ? std::numeric_limits<double>::infinity()
                                             : auto_truncation_radius(schedule, config.T0, std::max(1.0, kappa.kappa),
                                                                      v_sg2, config.truncation_eps);
  return config;
}

/// Reverse-time Euler-Maruyama from x (a draw near q_T) down to T0 on a
/// uniform grid, then the deterministic T0 -> 0 step, truncation,
/// optional scaling and optional final denoising, in that order.
inline Vector run_reverse(const ProblemSpec& problem, const OUSchedule& schedule, const ReverseConfig& config,
                          ScoreEstimator& estimator, Vector x, Rng& rng) {
  const int n = config.reverse_steps();
  const double h = (config.T - config.T0) / n;
  const double noise = std::sqrt(2.0 * h);
  for (int k = 0; k < n; ++k) {
    const double t = config.T - k * h;
    const Vector s = estimator.estimate(t, x, rng);
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] += (x[j] + 2.0 * s[j]) * h + noise * rng.normal();
    if (!x.allFinite()) throw DivergenceError("reverse", t, static_cast<std::size_t>(k), describe(x));
  }
  if (config.final_step != FinalStep::kNone) {
    const double w = config.final_step == FinalStep::kReverseDrift ? 2.0 : 1.0;
    const Vector s = estimator.estimate(config.T0, x, rng);
    x += (x + w * s) * config.T0;
    if (!x.allFinite()) throw DivergenceError("reverse", config.T0, static_cast<std::size_t>(n), describe(x));
  }
  const double radius = config.truncation_radius.value_or(std::numeric_limits<double>::infinity());
  if (std::isfinite(radius)) x = truncate(x, radius);
  if (config.apply_scaling) x = scale(x, config.T0, schedule);
  if (config.final_denoise_sigma > 0.0) {
    Vector d(x.size());
    problem.prior->denoise_at_noise_level(config.final_denoise_sigma, x, d);
    x = std::move(d);
  }
  return x;
}

/// One posterior draw: warm start at T, then the early-stopped reverse
/// diffusion. With chain reuse, the warm start's final inner chains seed the
/// reverse phase and every reverse step reuses the previous step's chains.
inline Vector reverse_sample(const ProblemSpec& problem, const OUSchedule& schedule, const ReverseConfig& config_in,
                             Rng& rng) {
  const ReverseConfig config = resolve_truncation(problem, schedule, config_in);
  config.validate();
  RgoScoreEstimator estimator(problem, config.warm.inner, config.warm.chain_reuse, schedule);
  WarmStartResult warm = warm_start(estimator, problem.dim(), config.T, config.warm, rng);
  estimator.set_config(config.inner);
  return run_reverse(problem, schedule, config, estimator, std::move(warm.x), rng);
}

struct SampleSet {
  Samples samples;
  std::uint64_t seed = 0;
  ReverseConfig config;
  double wall_time_s = 0.0;
};

class BatchError : public std::runtime_error {
 public:
  BatchError(const std::string& what, std::vector<std::pair<std::size_t, std::string>> failures)
      : std::runtime_error(what), failures_(std::move(failures)) {}
  const std::vector<std::pair<std::size_t, std::string>>& failures() const { return failures_; }

 private:
  std::vector<std::pair<std::size_t, std::string>> failures_;
};

/// Runs fn(i, rng_i) for i in [0, n) on up to `workers` threads. rng_i is the
/// stream (master_seed, i), so the output does not depend on scheduling.
template <typename Fn>
inline Samples parallel_draws(std::size_t n, Eigen::Index d, std::uint64_t master_seed, int workers, Fn&& fn) {
  Samples out(static_cast<Eigen::Index>(n), d);
  std::atomic<std::size_t> next{0};
  std::mutex mtx;
  std::vector<std::pair<std::size_t, std::string>> failures;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        Rng rng = Rng::stream(master_seed, i);
        const Vector x = fn(i, rng);
        out.row(static_cast<Eigen::Index>(i)) = x.transpose();
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mtx);
        failures.emplace_back(i, e.what());
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(threads, n); ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    std::ostringstream os;
    os << failures.size() << " of " << n << " draws failed; first: #" << failures.front().first << ": "
       << failures.front().second;
    throw BatchError(os.str(), std::move(failures));
  }
  return out;
}

inline SampleSet sample_batch(const ProblemSpec& problem, const OUSchedule& schedule, const ReverseConfig& config_in,
                              std::size_t n, std::uint64_t master_seed, int workers = 1) {
  if (n < 1) throw std::invalid_argument("sample_batch: n must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  SampleSet set;
  set.seed = master_seed;
  set.config = resolve_truncation(problem, schedule, config_in);
  set.config.validate();
  set.samples = parallel_draws(n, problem.dim(), master_seed, workers, [&](std::size_t, Rng& rng) {
    return reverse_sample(problem, schedule, set.config, rng);
  });
  set.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return set;
}

/// Hyperparameters suggested by the score-error bound with every
/// Theta-constant set to one. Advisory only.
struct Advice {
  double inner_horizon = 0.0;  // S
  long particles = 0;          // m
  double eps_prior = 0.0;
};

inline Advice advisor(const OUSchedule& schedule, double T, double T0, double alpha, double kappa, double eta2,
                      double eps, double lipschitz_g = 1.0) {
  if (!(eps > 0.0 && eps < 1.0)) throw std::domain_error("advisor: eps must lie in (0, 1)");
  if (!(T0 > 0.0 && T0 < T)) throw std::domain_error("advisor: require 0 < T0 < T");
  if (!(T < bar_t(alpha))) throw std::domain_error("advisor: T must be below bar_t(alpha)");
  const double m2 = std::pow(schedule.mu(T), 2);
  const double s2 = schedule.sigma2(T);
  const double gap = m2 - alpha * s2;
  if (!(gap > 0.0)) throw std::domain_error("advisor: mu_T^2 - alpha sigma_T^2 must be positive");
  const double log_term = std::log(T * eta2 / (eps * eps));
  Advice a;
  a.inner_horizon = s2 / gap * log_term;
  const double raw_m = T * kappa / (eps * eps);
  a.particles = static_cast<long>(std::ceil(raw_m - 1e-9 * raw_m));
  const double m0 = std::pow(schedule.mu(T0), 2);
  const double s0 = schedule.sigma2(T0);
  a.eps_prior = gap / s2 / (eta2 + log_term) *
                std::exp(-4.0 * (s2 / s0) * (m0 + lipschitz_g * s0) / gap * log_term) * std::pow(eps, 4) /
                (T * T * kappa);
  return a;
}

}  // namespace pdps
