#pragma once

#include <atomic>
#include <cstdint>

namespace conftune {

namespace detail {

// SplitMix64 output function.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::atomic<std::uint64_t>& draw_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

} // namespace detail

// Uniform value in [0, 1) that depends only on (seed, sample_index): the
// sample_index-th output of a SplitMix64 stream whose state starts at
// mix64(seed). No hidden state, so evaluation order and threading cannot
// change the result.
inline double draw_u(std::uint64_t seed, std::uint64_t sample_index) {
  detail::draw_counter().fetch_add(1, std::memory_order_relaxed);
  constexpr std::uint64_t golden_gamma = 0x9E3779B97F4A7C15ULL;
  const std::uint64_t state = detail::mix64(seed) + (sample_index + 1) * golden_gamma;
  return static_cast<double>(detail::mix64(state) >> 11) * 0x1.0p-53;
}

// Total number of draw_u calls in this process; lets tests prove that a code
// path is free of randomization.
inline std::uint64_t draw_u_call_count() {
  return detail::draw_counter().load(std::memory_order_relaxed);
}

} // namespace conftune
