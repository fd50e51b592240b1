#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace prospector {

// SplitMix64 finalizer; good avalanche for combining seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t combine_seeds(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x6A09E667F3BCC909ULL;
  for (auto p : parts) h = mix64(h ^ mix64(p));
  return h;
}

constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Derives the seed of a named random substream from the run seed, so every
/// consumer (splits, sampling, simulator noise) draws independently but
/// reproducibly from a single `--seed`.
constexpr std::uint64_t substream_seed(std::uint64_t run_seed, std::string_view name) noexcept {
  return combine_seeds({run_seed, fnv1a(name)});
}

}  // namespace prospector
