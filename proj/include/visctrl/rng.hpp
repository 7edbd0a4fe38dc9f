#pragma once

// All randomness in the library comes from SplitMix64 (Steele, Lea & Flood,
// 2014). It is tiny, has a fully specified output sequence and, being
// counter-based, can be keyed directly from (seed, index) tuples.

#include <cstdint>
#include <string_view>

namespace visctrl {

inline constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class SplitMix64 {
 public:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += kGamma;
    return splitmix64_mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform in [-bound, bound).
  constexpr double symmetric(double bound) noexcept { return (2.0 * uniform() - 1.0) * bound; }

 private:
  std::uint64_t state_;
};

// FNV-1a, 64-bit.
inline constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stateless key derivation: mixes a seed with an ordered list of counters.
inline constexpr std::uint64_t derive_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) noexcept {
  std::uint64_t k = splitmix64_mix(seed + SplitMix64::kGamma);
  k = splitmix64_mix(k ^ (a + SplitMix64::kGamma));
  k = splitmix64_mix(k ^ (b + 2 * SplitMix64::kGamma));
  return k;
}

}  // namespace visctrl
