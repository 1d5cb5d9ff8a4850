#pragma once

#include <cstdint>
#include <random>

namespace segdiff {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; a bijective mixer of 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stream key derived from a run seed and up to three counters. Streams keyed
/// by distinct tuples are independent, so draws never depend on call order.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
                                   std::uint64_t c = 0) {
  return mix64(mix64(mix64(mix64(seed) ^ a) ^ b) ^ c);
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t a = 0, std::uint64_t b = 0,
                       std::uint64_t c = 0) {
  return Rng(stream_key(seed, a, b, c));
}

}  // namespace segdiff
