#pragma once

// Counter-based random numbers: Philox4x32-10 (Salmon et al., SC'11).
// Every draw is a pure function of (key, counter), so a stream keyed by
// (seed, path-index, step) is reproducible without shared state.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace intertwine {

class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeylA;
        key[1] += kWeylB;
      }
      ctr = single_round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMulA = 0xD2511F53u;
  static constexpr std::uint32_t kMulB = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeylA = 0x9E3779B9u;
  static constexpr std::uint32_t kWeylB = 0xBB67AE85u;

  static Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMulA) * c[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMulB) * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Normal variates for one (seed, path) stream, addressed by step and slot.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint64_t path)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)}, path_(path) {}

  /// Two independent standard normals for (step, block).
  std::array<double, 2> pair(std::uint64_t step, std::uint32_t block) const {
    // Step gets 48 bits, block 16 bits of the first two counter words.
    const std::uint64_t word = (step << 16) | (block & 0xFFFFu);
    const Philox4x32::Counter ctr{static_cast<std::uint32_t>(word), static_cast<std::uint32_t>(word >> 32),
                                  static_cast<std::uint32_t>(path_), static_cast<std::uint32_t>(path_ >> 32)};
    const auto r = Philox4x32::generate(ctr, key_);
    const double u1 = to_open_unit(r[0], r[1]);
    const double u2 = to_open_unit(r[2], r[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return {radius * std::cos(angle), radius * std::sin(angle)};
  }

  /// Fill `out[0..n)` with the normals of one step.
  template <class V>
  void fill(std::uint64_t step, V& out, int n) const {
    for (int i = 0; i < n; i += 2) {
      const auto z = pair(step, static_cast<std::uint32_t>(i / 2));
      out(i) = z[0];
      if (i + 1 < n) out(i + 1) = z[1];
    }
  }

  /// 53-bit uniform in (0, 1).
  static double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

 private:
  Philox4x32::Key key_;
  std::uint64_t path_;
};

}  // namespace intertwine
