#pragma once

#include <memory>
#include <vector>

#include "pdps/oracle.hpp"

namespace pdps::testing {

inline std::shared_ptr<const IsotropicGaussianMixture> scalar_gmm(std::vector<double> w, std::vector<double> m,
                                                                  std::vector<double> v) {
  return std::make_shared<const IsotropicGaussianMixture>(IsotropicGaussianMixture::scalar(w, m, v));
}

inline std::shared_ptr<const LinearGaussianLikelihood> scalar_linear(double a, double y, double noise) {
  Matrix am(1, 1);
  am << a;
  Vector yv(1);
  yv << y;
  return std::make_shared<const LinearGaussianLikelihood>(am, yv, noise);
}

// 0.5 N(-2, 0.25) + 0.5 N(2, 0.25), y = x + n, n ~ N(0, 1), y = 1.
inline ProblemSpec bimodal_problem() {
  return ProblemSpec(scalar_gmm({0.5, 0.5}, {-2.0, 2.0}, {0.25, 0.25}), scalar_linear(1.0, 1.0, 1.0));
}

// N(0, 1) prior, y = x + n, n ~ N(0, 1).
inline ProblemSpec gaussian_problem(double y) {
  return ProblemSpec(scalar_gmm({1.0}, {0.0}, {1.0}), scalar_linear(1.0, y, 1.0));
}

inline ProblemSpec flat_problem() {
  return ProblemSpec(scalar_gmm({1.0}, {0.0}, {1.0}), std::make_shared<const FlatLikelihood>(1));
}

inline Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

inline double mean(const Samples& s) { return s.col(0).mean(); }

inline double variance(const Samples& s) {
  const double m = mean(s);
  return (s.col(0).array() - m).square().sum() / static_cast<double>(s.rows() - 1);
}

// Central finite-difference gradient of f at x.
template <typename F>
Vector fd_gradient(F&& f, const Vector& x, double h = 1e-5) {
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double fp = f(xp);
    xp[i] = x[i] - h;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Vector& a, const Vector& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-12);
}

}  // namespace pdps::testing
