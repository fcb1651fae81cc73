#pragma once

#include <cstdint>
#include <random>

namespace clalign {

// Counter-based sub-seed derivation. Every random draw in the library is keyed
// on (master_seed, stream, a, b, c) so that independent runs that replay the
// same key consume bit-identical randomness without sharing generator state.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t {
  kClassMeans = 1,
  kPoints = 2,
  kAugment = 3,
  kBatch = 4,
  kInit = 5,
  kTrial = 6,
  kChild = 7,
  kProbe = 8,
};

inline constexpr std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                           std::int64_t a = 0, std::int64_t b = 0,
                                           std::int64_t c = 0) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(stream));
  h = splitmix64(h ^ static_cast<std::uint64_t>(a));
  h = splitmix64(h ^ static_cast<std::uint64_t>(b));
  h = splitmix64(h ^ static_cast<std::uint64_t>(c));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, Stream stream, std::int64_t a = 0,
                    std::int64_t b = 0, std::int64_t c = 0) {
  return Rng(derive_seed(master, stream, a, b, c));
}

}  // namespace clalign
