#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace adaptexp {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream seed: mix64(seed XOR tag).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return mix64(seed ^ tag); }

/// Chains several words through the finalizer; order matters.
constexpr std::uint64_t combine_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix64(mix64(mix64(a) ^ b) ^ c);
}

/// FNV-1a. Stable across platforms and runs, used to key streams by name.
constexpr std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Stream tags. Changing any of these changes every seeded result.
namespace stream {
inline constexpr std::uint64_t kContext = 0x636f6e7465787431ULL;
inline constexpr std::uint64_t kNoise = 0x6e6f697365303031ULL;
inline constexpr std::uint64_t kBootstrap = 0x626f6f7473747270ULL;
inline constexpr std::uint64_t kInstance = 0x696e7374616e6365ULL;
inline constexpr std::uint64_t kPost = 0x706f737465787031ULL;
inline constexpr std::uint64_t kEnvironment = 0x656e7669726f6e6dULL;
}  // namespace stream

/// Thin wrapper over mt19937_64 with the handful of draws the library needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  /// Draws from a categorical distribution given nonnegative weights summing to ~1.
  std::size_t categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] <= 0.0) continue;
      acc += probs[i];
      last_positive = i;
      if (u < acc) return i;
    }
    return last_positive;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace adaptexp
