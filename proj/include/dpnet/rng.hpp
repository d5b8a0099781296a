#pragma once

#include <bit>
#include <cstdint>
#include <random>

namespace dpnet {

// splitmix64 finalizer, used to derive independent engine seeds from
// (global seed, stream id, ...) tuples without correlated low bits.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
  return mix64(mix64(a) ^ (0x94d049bb133111ebULL * b + 0x2545f4914f6cdd1dULL));
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix64(mix64(a, b), c);
}

// Stable derivation of a stream from a seed and a double-valued tag
// (e.g. frame time); identical (seed, tag) pairs give identical streams.
inline std::uint64_t mix64_tag(std::uint64_t seed, double tag) {
  return mix64(seed, std::bit_cast<std::uint64_t>(tag));
}

inline std::mt19937_64 make_engine(std::uint64_t derived_seed) {
  return std::mt19937_64(derived_seed);
}

}  // namespace dpnet
