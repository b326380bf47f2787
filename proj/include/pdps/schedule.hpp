#pragma once

#include <cmath>
#include <stdexcept>

namespace pdps {

/// Ornstein-Uhlenbeck forward process dX = -X dt + sqrt(2) dB.
///
/// X_t | X_0 ~ N(mu(t) X_0, sigma2(t) I) with mu = e^{-t} and sigma2 = 1 - e^{-2t},
/// so mu^2 + sigma2 = 1 for every t. Stateless; all members are pure.
struct OUSchedule {
  double mu(double t) const {
    check_time(t);
    return std::exp(-t);
  }

  double sigma2(double t) const {
    check_time(t);
    return -std::expm1(-2.0 * t);
  }

 private:
  static void check_time(double t) {
    if (!(t >= 0.0)) throw std::domain_error("OUSchedule: time must be nonnegative");
  }
};

/// Largest time below which the posterior denoising density is log-concave,
/// given a semi-log-concavity constant alpha: 0.5 * log(1 + 1/alpha).
inline double bar_t(double alpha) {
  if (!(alpha > 0.0)) throw std::domain_error("bar_t: alpha must be positive");
  return 0.5 * std::log1p(1.0 / alpha);
}

/// Smallest terminal time at which the terminal posterior satisfies a
/// log-Sobolev inequality: 0.5 * log(1 + 2 v_sg2).
inline double underline_t(double v_sg2) {
  if (!(v_sg2 > 0.0)) throw std::domain_error("underline_t: v_sg2 must be positive");
  return 0.5 * std::log1p(2.0 * v_sg2);
}

struct DualityWindow {
  double lower = 0.0;
  double upper = 0.0;
  bool nonempty = false;

  bool contains(double t) const { return nonempty && t > lower && t < upper; }
};

/// Open interval (underline_t, bar_t) of admissible terminal times. The
/// boundary case 2 alpha v_sg2 == 1 is reported empty.
inline DualityWindow duality_window(double alpha, double v_sg2) {
  DualityWindow w;
  w.lower = underline_t(v_sg2);
  w.upper = bar_t(alpha);
  w.nonempty = w.lower < w.upper;
  // The two thresholds order exactly as 2 alpha v_sg2 against 1; away from the
  // boundary the float comparison must agree with the algebraic one.
  const double product = 2.0 * alpha * v_sg2;
  if (std::abs(product - 1.0) > 1e-12 && w.nonempty != (product < 1.0)) {
    throw std::logic_error("duality_window: threshold ordering disagrees with 2*alpha*v_sg2 < 1");
  }
  return w;
}

/// Terminal time halfway between the two thresholds. Inside the window this is
/// its midpoint; for an empty window it is the compromise between the
/// log-concavity and log-Sobolev requirements.
inline double balanced_terminal_time(const DualityWindow& w) { return 0.5 * (w.lower + w.upper); }

}  // namespace pdps
