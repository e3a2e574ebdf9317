#pragma once

#include <complex>

#include "colddamp/modes.hpp"

namespace colddamp {

/// Single-pole passive low-pass D(f) = dc_gain / (1 + i f / f_c).
struct LoopFilter {
  double dc_gain = 0.0;
  double f_c = 200.0;  // Hz

  void validate() const;
};

/// Current amplifier in the feedback path.
///
/// Only the product A * dc_gain enters the loop transfer; the two are kept
/// apart because the amplifier gain and the filter setting are configured
/// independently.
struct AmplifierModel {
  double A = 1.0;
  double L_in = 1.74e-6;  // H
  double S_In = 6.6e-26;  // A^2/Hz, single-sided additive current noise
  double S_Vn = 0.0;      // V^2/Hz, single-sided back-action voltage noise

  void validate() const;
};

/// Series impedance the feedback loop adds to a mode branch.
struct FeedbackImpedance {
  double R_D;  // ohm
  double X_D;  // ohm
};

struct ClosedLoopMode {
  NormalMode mode;
  std::complex<double> loop_gain;  // AD at the mode frequency
  double R_D;
  double X_D;
  double g;        // R_D / R
  double Q_prime;  // Q / (1 + g)
  double f_shift;  // fractional resonance shift, -X_D / (2 omega L)
  /// |AD| < 0.01 and AD within 0.25 rad of -pi/2.
  bool small_gain_regime;

  /// Closed-loop full width at half power, Hz.
  double linewidth() const { return mode.f0() / Q_prime; }
  /// Amplitude decay time 2 Q' / omega, s.
  double decay_time() const { return 2.0 * Q_prime / mode.omega0(); }
};

std::complex<double> loop_transfer(const LoopFilter& filter,
                                   const AmplifierModel& amp, double f);

/// R_D + i X_D = i AD / (1 - AD) * omega L_in.
FeedbackImpedance feedback_resistance(std::complex<double> AD, double f,
                                      double L_in);

ClosedLoopMode close_loop(const NormalMode& mode, const AmplifierModel& amp,
                          const LoopFilter& filter);

/// Mode damped by an ideal quadrature feedback of strength g (X_D = 0), for
/// exploring the damping law without a concrete loop. loop_gain is left 0.
ClosedLoopMode with_damping(const NormalMode& mode, double g);

/// Filter dc gain that makes close_loop return g_target for this mode.
/// Solved on the exact loop expression, restricted to |AD| < 0.5.
double gain_for_target(const NormalMode& mode, const AmplifierModel& amp,
                       double f_c, double g_target);

}  // namespace colddamp
