#ifndef POSTHOC_PHILOX_HPP
#define POSTHOC_PHILOX_HPP

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
// numbers: as easy as 1, 2, 3", SC'11). A block of 128 random bits is a pure
// function of (key, counter), so any row/voxel/subject can be drawn
// independently of evaluation order.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace posthoc {

class Philox4x32 {
public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter block(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kW0;
        key[1] += kW1;
      }
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    }
    return ctr;
  }

  static constexpr Key key_from_seed(std::uint64_t seed) noexcept {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;
};

/// Stream tags keep the counter spaces of different consumers disjoint.
enum class StreamTag : std::uint32_t {
  sign_flip = 0x51u,
  noise = 0x6Eu,
  test = 0x7Fu,
};

/// Uniform double in (0, 1] built from 53 bits.
inline double uniform_open_closed(std::uint32_t hi, std::uint32_t lo) noexcept {
  const std::uint64_t bits = (std::uint64_t{hi} << 32 | lo) >> 11;
  return static_cast<double>(bits + 1) * 0x1.0p-53;
}

/// Two independent standard normals from one Philox block (Box-Muller).
inline std::array<double, 2> normal_pair(const Philox4x32::Counter& out) noexcept {
  const double u1 = uniform_open_closed(out[0], out[1]);
  const double u2 = uniform_open_closed(out[2], out[3]);
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {r * std::cos(angle), r * std::sin(angle)};
}

/// SplitMix64 finaliser; used to derive child seeds (train vs calibration rounds, replications).
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

} // namespace posthoc

#endif
