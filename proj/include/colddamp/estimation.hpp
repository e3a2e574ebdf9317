#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "colddamp/simulator.hpp"
#include "colddamp/spectra.hpp"

namespace colddamp {

enum class Window { Hann, Rectangular };

Window window_from_name(const std::string& name);
std::string window_name(Window w);

struct WelchConfig {
  std::size_t segment_length = 4096;
  double overlap = 0.5;  // fraction in [0, 1)
  Window window = Window::Hann;
  bool detrend = true;  // remove each segment's mean
};

/// Single-sided, per-Hz PSD estimate.
struct PsdEstimate {
  double fs = 0.0;
  double df = 0.0;
  std::vector<double> frequencies;  // Hz
  std::vector<double> values;       // A^2/Hz
  std::size_t n_averages = 0;
  bool window_corrected = false;
};

/// Shortest segment giving `bins_per_linewidth` bins across `linewidth` Hz.
std::size_t segment_length_for(double fs, double linewidth,
                               double bins_per_linewidth = 10.0);

PsdEstimate welch_psd(std::span<const double> samples, double fs,
                      const WelchConfig& cfg);
PsdEstimate welch_psd(const TimeSeries& series, const WelchConfig& cfg,
                      const std::string& channel = "measured_current_a");

/// Wraps an analytic spectrum so it can be fed to fit_modes.
PsdEstimate as_estimate(const AnalyticSpectrum& spec);

struct FittedMode;

struct FitOptions {
  std::optional<double> f_lo;  // Hz; default: around the detected peaks
  std::optional<double> f_hi;
  int max_iterations = 200;
  double tolerance = 1e-8;  // relative parameter change
  /// Starting point (T, f, Q' per mode, plus floor) replacing peak picking.
  std::vector<FittedMode> initial_modes;
  double initial_floor = 0.0;
};

struct FittedMode {
  int index = 0;
  double L = 0.0;
  double T = 0.0;  // K
  double f = 0.0;  // Hz
  double Q_prime = 0.0;
  double T_err = 0.0;
  double f_err = 0.0;
  double Q_prime_err = 0.0;
};

struct ModeFitResult {
  std::vector<FittedMode> modes;  // ordered by frequency
  double floor = 0.0;             // A^2/Hz
  double floor_err = 0.0;
  /// Parameter covariance, order [T_1, f_1, Q'_1, ..., floor].
  Eigen::MatrixXd covariance;
  int iterations = 0;
  double final_residual = 0.0;  // sum of squared relative residuals
  std::size_t n_bins = 0;
  double f_lo = 0.0;
  double f_hi = 0.0;
};

/// Fits a sum of passive-resonator lines (one per mode, inductances known)
/// plus a white floor by damped least squares with model-based weights.
ModeFitResult fit_modes(const PsdEstimate& psd, std::size_t n_modes,
                        std::span<const double> L_list,
                        const FitOptions& options = {});

struct TemperatureEstimate {
  double T = 0.0;           // fitted amplitude temperature, K
  double T_err = 0.0;
  double T_integral = 0.0;  // L * integral of the fitted line / k_B
  double relative_discrepancy = 0.0;
  bool consistent = true;   // discrepancy within 0.5%
};

/// mode_index is 1-based within the fit.
TemperatureEstimate extract_temperature(const ModeFitResult& fit,
                                        std::size_t mode_index, double L);

struct ToneResponse {
  double f;                      // Hz
  std::complex<double> current;  // phasor, A
};

struct CalibrationResult {
  double L = 0.0;
  double C = 0.0;
  double R = 0.0;
  double L_err = 0.0;
  double C_err = 0.0;
  double R_err = 0.0;

  double f0() const;
  double Q() const;
};

/// Least-squares fit of R + i omega L + 1/(i omega C) to V_cal / I.
CalibrationResult estimate_impedance(std::span<const ToneResponse> responses,
                                     double V_cal);

/// Phasor I with x(t) = Re(I exp(i 2 pi f t)), t = t0 + n / fs.
std::complex<double> tone_phasor(std::span<const double> samples, double fs,
                                 double f, double t0 = 0.0);

struct RingdownResult {
  double Q_prime = 0.0;
  double f = 0.0;    // Hz
  double tau = 0.0;  // amplitude decay time, s
  double Q_prime_err = 0.0;
  double f_err = 0.0;
  double tau_err = 0.0;
};

RingdownResult ringdown_decay(std::span<const double> samples, double fs);
RingdownResult ringdown_decay(const TimeSeries& series,
                              const std::string& channel = "measured_current_a");

}  // namespace colddamp
