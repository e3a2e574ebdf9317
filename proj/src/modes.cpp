#include "colddamp/modes.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "validate.hpp"

namespace colddamp {

using detail::require_non_negative;
using detail::require_positive;

NormalMode::NormalMode(int index, double L, double C, double R)
    : index_(index), L_(L), C_(C), R_(R) {
  require_positive(L, "L");
  require_positive(C, "C");
  require_positive(R, "R");
  if (!(Q() > 1.0)) throw ValidationError("Q", "mode must be underdamped (Q > 1)");
}

double NormalMode::omega0() const noexcept { return 1.0 / std::sqrt(L_ * C_); }

double NormalMode::f0() const noexcept { return omega0() / kTwoPi; }

double NormalMode::Q() const noexcept { return omega0() * L_ / R_; }

NormalMode mode_from_measurement(double L, double f, double Q, int index) {
  require_positive(L, "L");
  require_positive(f, "f");
  require_positive(Q, "Q");
  if (!(Q > 1.0)) throw ValidationError("Q", "must be > 1");
  const double w = kTwoPi * f;
  return NormalMode(index, L, 1.0 / (w * w * L), w * L / Q);
}

ModeSet::ModeSet(std::vector<NormalMode> modes) : modes_(std::move(modes)) {
  if (modes_.empty()) throw ValidationError("modes", "at least one mode required");
  std::vector<double> q(modes_.size());
  for (std::size_t i = 0; i < modes_.size(); ++i) {
    q[i] = modes_[i].Q();
    if (i > 0 && !(modes_[i].f0() > modes_[i - 1].f0())) {
      throw ValidationError("modes[" + std::to_string(i) + "].f",
                            "resonance frequencies must be strictly increasing");
    }
  }
  near_degenerate_ = near_degenerate(q);
}

bool ModeSet::near_degenerate(std::span<const double> q_prime) const {
  if (q_prime.size() != modes_.size()) {
    throw ValidationError("q_prime", "one quality factor per mode required");
  }
  for (std::size_t i = 1; i < modes_.size(); ++i) {
    const double width = std::max(modes_[i - 1].f0() / q_prime[i - 1],
                                  modes_[i].f0() / q_prime[i]);
    if (modes_[i].f0() - modes_[i - 1].f0() < 5.0 * width) return true;
  }
  return false;
}

std::complex<double> series_rlc_impedance(double R, double L, double C,
                                          double f) {
  require_positive(f, "f");
  const double w = kTwoPi * f;
  return {R, w * L - 1.0 / (w * C)};
}

std::complex<double> impedance(const NormalMode& mode, double f) {
  return series_rlc_impedance(mode.R(), mode.L(), mode.C(), f);
}

double thermal_mean_square_current(const NormalMode& mode, double T) {
  require_non_negative(T, "T");
  return PhysicalConstants::k_B * T / mode.L();
}

double rms_displacement(const MechanicalResonator& res, double T) {
  require_positive(res.M, "M");
  require_positive(res.omega_B, "omega_B");
  require_non_negative(T, "T");
  return std::sqrt(PhysicalConstants::k_B * T /
                   (res.M * res.omega_B * res.omega_B));
}

double occupation_number(double T, double f) {
  require_non_negative(T, "T");
  require_positive(f, "f");
  return PhysicalConstants::k_B * T / (PhysicalConstants::hbar * kTwoPi * f);
}

ModeSet auriga_modes() {
  return ModeSet({mode_from_measurement(1.66e-4, 865.0, 1.2e6, 1),
                  mode_from_measurement(1.23e-5, 914.0, 0.88e6, 2),
                  mode_from_measurement(8.12e-6, 953.0, 0.77e6, 3)});
}

}  // namespace colddamp
