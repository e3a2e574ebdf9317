#pragma once

#include <cstddef>
#include <vector>

#include "colddamp/feedback.hpp"
#include "colddamp/modes.hpp"

namespace colddamp {

/// Linearly spaced frequency grid, Hz.
class FrequencyGrid {
 public:
  FrequencyGrid(double f_start, double f_stop, std::size_t n_points);

  double f_start() const noexcept { return f_start_; }
  double f_stop() const noexcept { return f_stop_; }
  std::size_t size() const noexcept { return n_; }
  double step() const noexcept { return (f_stop_ - f_start_) / double(n_ - 1); }
  double operator[](std::size_t i) const noexcept;
  std::vector<double> frequencies() const;

 private:
  double f_start_;
  double f_stop_;
  std::size_t n_;
};

/// Single-sided, per-Hz current PSD: the integral over f in Hz yields A^2.
struct AnalyticSpectrum {
  FrequencyGrid grid;
  std::vector<double> values;  // A^2/Hz
};

struct TemperaturePrediction {
  int mode_index;
  double g;
  double T_simple;             // T0 / (1 + g)
  double T_refined;            // including amplifier noise
  double mean_square_current;  // k_B T_simple / L
};

/// Johnson voltage-noise PSD 4 k_B T0 R, V^2/Hz.
double thermal_voltage_psd(const NormalMode& mode, double T0);

/// Passive-resonator current PSD at one frequency, parameterized by the mode
/// temperature and loaded quality factor:
///   4 k_B T w_k / (Q' L) * w^2 / ((w^2 - w_k^2)^2 + (w_k w / Q')^2).
double resonator_psd(double T_mode, double f_mode, double q_prime, double L,
                     double f);

/// Current noise the thermal bath drives through a feedback-damped mode.
AnalyticSpectrum mode_current_psd(const ClosedLoopMode& clm, double T0,
                                  const FrequencyGrid& grid);

struct CurrentPsdBreakdown {
  AnalyticSpectrum total;
  std::vector<AnalyticSpectrum> thermal;      // one per mode
  AnalyticSpectrum floor;                     // additive amplifier noise
  std::vector<AnalyticSpectrum> back_action;  // one per mode
};

/// Total measured current PSD, with its independent components.
CurrentPsdBreakdown total_current_psd_components(const ModeSet& modes,
                                                 const AmplifierModel& amp,
                                                 const LoopFilter& filter,
                                                 double T0,
                                                 const FrequencyGrid& grid);

AnalyticSpectrum total_current_psd(const ModeSet& modes,
                                   const AmplifierModel& amp,
                                   const LoopFilter& filter, double T0,
                                   const FrequencyGrid& grid);

/// Trapezoidal integral of a spectrum over [f_lo, f_hi], A^2. Band edges
/// falling between grid points are linearly interpolated.
double integrate_psd(const AnalyticSpectrum& spec, double f_lo, double f_hi);

double predicted_temperature_simple(double T0, double g);

double predicted_temperature_refined(const NormalMode& mode,
                                     const AmplifierModel& amp, double T0,
                                     double g);

TemperaturePrediction predict_temperature(const ClosedLoopMode& clm,
                                          const AmplifierModel& amp, double T0);

struct OptimumGain {
  double g_opt;
  double T_min;
  /// Large-g estimate sqrt(4 k_B Q T0_eff / (omega L S_In)).
  double g_large_gain_estimate;
};

/// Minimizes the noise-limited mode temperature over g in (0, inf).
OptimumGain optimum_gain(const NormalMode& mode, const AmplifierModel& amp,
                         double T0);

}  // namespace colddamp
