#pragma once

#include <numbers>

namespace colddamp {

/// Fixed physical constants (SI).
struct PhysicalConstants {
  static constexpr double k_B = 1.380649e-23;   // J/K
  static constexpr double hbar = 1.054572e-34;  // J s
};

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace colddamp
