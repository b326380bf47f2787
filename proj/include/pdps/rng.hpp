#pragma once

#include <cstdint>
#include <random>

#include "pdps/types.hpp"

namespace pdps {

// Random source for all samplers. Not thread-safe; each trajectory owns one.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Independent stream for (master seed, index), e.g. one per trajectory.
  static Rng stream(std::uint64_t master, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      0x9e3779b9u};
    Rng r;
    r.engine_.seed(seq);
    return r;
  }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  void fill_normal(VecRef out) {
    for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal();
  }

  Vector normal_vector(Eigen::Index d) {
    Vector v(d);
    fill_normal(v);
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace pdps
