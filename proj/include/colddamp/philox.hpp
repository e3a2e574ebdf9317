#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>

#include "colddamp/constants.hpp"

namespace colddamp {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Output is a pure function of (key, counter), so any sample of a run can be
/// regenerated independently of how the run is scheduled.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Counter generate(Counter ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t(kMul0) * ctr[0];
      const std::uint64_t p1 = std::uint64_t(kMul1) * ctr[2];
      ctr = {std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0], std::uint32_t(p1),
             std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1], std::uint32_t(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
};

/// Deterministic standard-normal stream addressed by (step, slot).
///
/// Each step owns an independent block of normals; the block for step n is
/// identical no matter which other steps were drawn.
class NormalStream {
 public:
  NormalStream(std::uint64_t seed, std::uint32_t stream) noexcept
      : key_{std::uint32_t(seed), std::uint32_t(seed >> 32)}, stream_(stream) {}

  /// Fills `out` with the normals of one step (Box-Muller on 53-bit uniforms).
  void fill(std::uint64_t step, std::span<double> out) const noexcept {
    std::size_t i = 0;
    for (std::uint32_t block = 0; i < out.size(); ++block) {
      const auto r = Philox4x32::generate(
          {std::uint32_t(step), std::uint32_t(step >> 32), block, stream_}, key_);
      const double u1 = to_unit(r[0], r[1]);
      const double u2 = to_unit(r[2], r[3]);
      const double rad = std::sqrt(-2.0 * std::log(u1));
      out[i++] = rad * std::cos(kTwoPi * u2);
      if (i < out.size()) out[i++] = rad * std::sin(kTwoPi * u2);
    }
  }

 private:
  // Uniform on the open interval (0, 1).
  static double to_unit(std::uint32_t hi, std::uint32_t lo) noexcept {
    const std::uint64_t bits = (std::uint64_t(hi) << 32 | lo) >> 11;
    return (double(bits) + 0.5) * 0x1.0p-53;
  }

  Philox4x32::Key key_;
  std::uint32_t stream_;
};

}  // namespace colddamp
