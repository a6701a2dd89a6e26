#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace lwfs {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Derives a child seed from a parent seed and a sequence of indices.
inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = splitmix64(seed);
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return h;
}

/// Seed-stream tags, kept distinct so derived streams never collide.
namespace seed_tag {
inline constexpr std::uint64_t kEncoderLayer = 1;
inline constexpr std::uint64_t kProjHead = 2;
inline constexpr std::uint64_t kPredHead = 3;
inline constexpr std::uint64_t kClient = 4;
inline constexpr std::uint64_t kServer = 5;
inline constexpr std::uint64_t kSampling = 6;
inline constexpr std::uint64_t kShuffle = 7;
inline constexpr std::uint64_t kAugment = 8;
inline constexpr std::uint64_t kPartition = 9;
inline constexpr std::uint64_t kProbe = 10;
}  // namespace seed_tag

}  // namespace lwfs
