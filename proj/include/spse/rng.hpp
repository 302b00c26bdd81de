#pragma once

#include <cstdint>

#include "spse/tensor.hpp"

namespace spse {

/// Counter-based random stream: the n-th draw is a pure function of
/// (seed, n), so a stream can be forked or replayed without shared state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [lo, hi], inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double gaussian();

  /// Independent stream derived from this one's seed and a label.
  RngStream fork(std::uint64_t label) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

Tensor gaussian(RngStream& rng, const Shape& shape);
std::int64_t uniform_int(RngStream& rng, std::int64_t lo, std::int64_t hi);

}  // namespace spse
