#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace qdspin {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derive an independent substream seed from a root seed and a path of
/// integer keys, e.g. (seed, domain, trajectory, channel).
inline std::uint64_t substream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = mix64(seed);
  for (auto k : keys) h = mix64(h ^ mix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
  const auto s = substream_seed(seed, keys);
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
  return Rng(seq);
}

/// Domain tags for substream derivation.
enum class Stream : std::uint64_t { trajectory = 1, detection = 2, oracle = 3, fit = 4 };

inline constexpr std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

}  // namespace qdspin
