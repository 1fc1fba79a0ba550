#pragma once

// Seed substreams. Every random draw in the library comes from a generator
// derived from (master seed, stream name, index), so results never depend on
// scheduling or on how many threads ran.

#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

namespace dcorsel {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives a child seed; distinct (name, index) pairs give unrelated streams.
inline constexpr std::uint64_t substream_seed(std::uint64_t seed, std::string_view name,
                                              std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(seed ^ fnv1a(name)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(substream_seed(seed, name, index)),
                    static_cast<std::uint32_t>(substream_seed(seed, name, index) >> 32)};
  return Rng(seq);
}

/// Uniform draw on [0, bound) without modulo bias.
inline std::uint64_t bounded(Rng& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % bound;
}

/// Fisher-Yates shuffle of 0..n-1 with our own bounded draws, so the
/// permutation for a given stream is identical across standard libraries.
inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(bounded(rng, i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace dcorsel
