#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace nlab {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Stateless: the output is a pure function of (counter, key), so streams can
/// be addressed directly by (seed, path, draw index) from any thread.
struct Philox4x32 {
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr std::uint32_t kMul0 = 0xD2511F53;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

  static constexpr Counter block(Counter c, Key k) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        k[0] += kWeyl0;
        k[1] += kWeyl1;
      }
      std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
      std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
      c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
           static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
    }
    return c;
  }
};

/// Uniform in the open interval (0, 1) from 64 random bits.
inline double open_unit(std::uint64_t bits) { return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53; }

/// Standard normal draw number `index` of stream `stream` under root `seed`.
///
/// One Philox block yields a Box–Muller pair, so indices 2j and 2j+1 share a block.
inline double keyed_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const std::uint64_t pair = index >> 1;
  Philox4x32::Counter ctr{static_cast<std::uint32_t>(pair), static_cast<std::uint32_t>(pair >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  auto r = Philox4x32::block(ctr, key);
  double u1 = open_unit((std::uint64_t{r[1]} << 32) | r[0]);
  double u2 = open_unit((std::uint64_t{r[3]} << 32) | r[2]);
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  return (index & 1) ? radius * std::sin(angle) : radius * std::cos(angle);
}

/// Both normals of Box–Muller pair `pair` (indices 2·pair and 2·pair + 1 of keyed_normal).
inline std::array<double, 2> keyed_normal_pair(std::uint64_t seed, std::uint64_t stream, std::uint64_t pair) {
  Philox4x32::Counter ctr{static_cast<std::uint32_t>(pair), static_cast<std::uint32_t>(pair >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  auto r = Philox4x32::block(ctr, key);
  double u1 = open_unit((std::uint64_t{r[1]} << 32) | r[0]);
  double u2 = open_unit((std::uint64_t{r[3]} << 32) | r[2]);
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

/// Uniform draw in (0, 1), addressed like keyed_normal.
inline double keyed_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const std::uint64_t pair = index >> 1;
  Philox4x32::Counter ctr{static_cast<std::uint32_t>(pair), static_cast<std::uint32_t>(pair >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  Philox4x32::Key key{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  auto r = Philox4x32::block(ctr, key);
  return (index & 1) ? open_unit((std::uint64_t{r[3]} << 32) | r[2]) : open_unit((std::uint64_t{r[1]} << 32) | r[0]);
}

}  // namespace nlab
