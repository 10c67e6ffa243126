#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "hgrec/matrix.hpp"

namespace hgrec {

/// Derives an independent seed for a named consumer ("split", "init", ...) from a parent seed.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view name);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt);

/// Seeded generator used by every stochastic component.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean, double stddev) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)); fan_in = rows, fan_out = cols.
Matrix xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);
Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

}  // namespace hgrec
