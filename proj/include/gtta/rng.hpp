#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gtta {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Folds a key tuple (seed, stream, counter, ...) into one 64-bit seed.
constexpr std::uint64_t hash_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

/// Stream identifiers so that independent consumers never share a key.
enum class Stream : std::uint64_t {
  dataset = 1,
  corruption = 2,
  init = 3,
  shuffle = 4,
  reservoir = 5,
  source_sample = 6,
  style = 7,
  memory = 8,
  test_order = 9,
};

/// A generator keyed by (seed, stream, counters...). Replaying the key replays the draws.
template <typename... Counters>
std::mt19937_64 keyed_generator(std::uint64_t seed, Stream stream, Counters... counters) {
  return std::mt19937_64(hash_key({seed, static_cast<std::uint64_t>(stream),
                                   static_cast<std::uint64_t>(counters)...}));
}

}  // namespace gtta
