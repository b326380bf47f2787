#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace pdps {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Row-per-point storage used for particle batches and sample sets.
using Samples = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using ConstVecRef = Eigen::Ref<const Vector>;
using VecRef = Eigen::Ref<Vector>;

/// Raised when a chain produces a non-finite coordinate.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::string stage, double t, std::size_t step, const std::string& detail = {})
      : std::runtime_error(format(stage, t, step, detail)), stage_(std::move(stage)), t_(t), step_(step) {}

  const std::string& stage() const noexcept { return stage_; }
  double time() const noexcept { return t_; }
  std::size_t step() const noexcept { return step_; }

 private:
  static std::string format(const std::string& stage, double t, std::size_t step, const std::string& detail) {
    std::ostringstream os;
    os << stage << " diverged at t=" << t << ", step " << step;
    if (!detail.empty()) os << " (" << detail << ")";
    return os.str();
  }

  std::string stage_;
  double t_;
  std::size_t step_;
};

inline bool all_finite(const ConstVecRef& v) { return v.allFinite(); }

inline std::string describe(const ConstVecRef& v) {
  std::ostringstream os;
  os << "x=(";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) os << ", ";
    if (i == 4 && v.size() > 5) {
      os << "...";
      break;
    }
    os << v[i];
  }
  os << ")";
  return os.str();
}

}  // namespace pdps
