#include "spse/rng.hpp"

#include <cmath>
#include <numbers>

#include "spse/errors.hpp"

namespace spse {

namespace {

// SplitMix64 finalizer.
std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t RngStream::next_u64() {
  const std::uint64_t key = mix(seed_ ^ 0x6a09e667f3bcc909ULL);
  const std::uint64_t n = counter_++;
  return mix(key + (n + 1) * 0x9e3779b97f4a7c15ULL);
}

double RngStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ArgumentError("uniform_int: hi < lo");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());
  // Lemire's multiply-shift; bias is below 2^-50 for the ranges used here.
  __extension__ using u128 = unsigned __int128;
  const auto wide = static_cast<u128>(next_u64()) * span;
  return lo + static_cast<std::int64_t>(wide >> 64);
}

double RngStream::gaussian() {
  // Box-Muller, consuming exactly two draws per sample so the counter advances
  // predictably.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RngStream RngStream::fork(std::uint64_t label) const { return RngStream(mix(seed_ * 0x2545f4914f6cdd1dULL + label + 1), 0); }

Tensor gaussian(RngStream& rng, const Shape& shape) {
  Tensor out(shape);
  for (auto& v : out.data()) v = rng.gaussian();
  return out;
}

std::int64_t uniform_int(RngStream& rng, std::int64_t lo, std::int64_t hi) { return rng.uniform_int(lo, hi); }

}  // namespace spse
