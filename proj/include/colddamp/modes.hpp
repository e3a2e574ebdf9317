#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "colddamp/constants.hpp"

namespace colddamp {

/// Effective series-RLC model of one normal mode as seen from the amplifier.
///
/// Immutable after construction. Frequencies at the API boundary are in Hz;
/// angular frequencies are only exposed through the explicitly named
/// `omega0()`.
class NormalMode {
 public:
  /// Builds a mode from series parameters. Throws ValidationError unless
  /// L, C, R are positive and finite and the resulting Q exceeds 1.
  NormalMode(int index, double L, double C, double R);

  int index() const noexcept { return index_; }
  double L() const noexcept { return L_; }
  double C() const noexcept { return C_; }
  double R() const noexcept { return R_; }

  double omega0() const noexcept;     // rad/s
  double f0() const noexcept;         // Hz
  double Q() const noexcept;          // omega0 L / R
  /// Open-loop full width at half power, Hz.
  double linewidth() const noexcept { return f0() / Q(); }

 private:
  int index_;
  double L_;
  double C_;
  double R_;
};

/// Builds a mode from the measured (L, f, Q) triple. R and C are derived.
NormalMode mode_from_measurement(double L, double f, double Q, int index = 1);

/// Ordered set of normal modes with strictly increasing resonances.
class ModeSet {
 public:
  explicit ModeSet(std::vector<NormalMode> modes);

  std::size_t size() const noexcept { return modes_.size(); }
  const NormalMode& operator[](std::size_t i) const { return modes_[i]; }
  const std::vector<NormalMode>& modes() const noexcept { return modes_; }
  auto begin() const noexcept { return modes_.begin(); }
  auto end() const noexcept { return modes_.end(); }

  /// True when two neighbouring open-loop resonances sit closer than five
  /// open-loop linewidths.
  bool near_degenerate() const noexcept { return near_degenerate_; }

  /// Same check against closed-loop quality factors (one per mode).
  bool near_degenerate(std::span<const double> q_prime) const;

  double max_frequency() const noexcept { return modes_.back().f0(); }

 private:
  std::vector<NormalMode> modes_;
  bool near_degenerate_ = false;
};

struct Bath {
  double T0 = 4.2;  // K
};

struct MechanicalResonator {
  double M;        // kg
  double omega_B;  // rad/s
};

/// Z = R + i(omega L - 1/(omega C)) for raw series values (R may be zero).
std::complex<double> series_rlc_impedance(double R, double L, double C,
                                          double f);

std::complex<double> impedance(const NormalMode& mode, double f);

/// Equipartition: <I^2> = k_B T / L, A^2.
double thermal_mean_square_current(const NormalMode& mode, double T);

/// sqrt(k_B T / (M omega_B^2)), m.
double rms_displacement(const MechanicalResonator& res, double T);

/// k_B T / (hbar 2 pi f).
double occupation_number(double T, double f);

/// The three AURIGA normal modes (865, 914, 953 Hz).
ModeSet auriga_modes();

}  // namespace colddamp
