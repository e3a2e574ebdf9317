#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "colddamp/feedback.hpp"
#include "colddamp/modes.hpp"

namespace colddamp {

struct SimConfig {
  double fs = 8000.0;      // Hz
  double duration = 10.0;  // s, including burn-in
  std::uint64_t seed = 0;
  /// Discarded transient, s. Unset means ten times the slowest closed-loop
  /// amplitude decay time.
  std::optional<double> burn_in;
};

/// Continuous-time linear model of N mode branches sharing one feedback loop.
///
/// State layout: [q_1, I_1, ..., q_N, I_N, I_D] (charges in C, currents in A).
/// Each branch obeys
///   L_k dI_k/dt = -R_k I_k - q_k/C_k + v_th,k + v_ba + v_drive - L_in dI_D/dt
/// and the filter current follows
///   tau_c dI_D/dt = -I_D + A dc_gain (sum_j I_j + I_D + i_n),
/// i.e. the amplifier sees the input-coil current, which carries the feedback
/// current as well. The dI_D/dt term is substituted so the drift is explicit.
struct StateSpace {
  std::size_t n_modes = 0;
  Eigen::MatrixXd drift;
  /// Columns: thermal voltage of each mode, then the common back-action voltage.
  Eigen::MatrixXd noise_input;
  /// Two-sided intensities of the columns above (single-sided PSD / 2).
  Eigen::VectorXd noise_intensity;
  /// d(state)/dt per ampere of additive measurement noise i_n.
  Eigen::VectorXd measurement_input;
  /// d(state)/dt per volt of series drive applied to every branch.
  Eigen::VectorXd drive_input;
  /// Single-sided PSD of i_n, A^2/Hz.
  double measurement_psd = 0.0;
  /// Measured current (without i_n): sum of branch currents.
  Eigen::RowVectorXd output;
  std::vector<double> mode_frequencies;  // open-loop, Hz

  std::size_t dim() const { return 2 * n_modes + 1; }
  static std::size_t charge_index(std::size_t k) { return 2 * k; }
  static std::size_t current_index(std::size_t k) { return 2 * k + 1; }
  std::size_t filter_index() const { return 2 * n_modes; }

  /// Diagonal similarity used internally: charges are multiplied by omega_k
  /// so every state carries current units.
  Eigen::VectorXd state_scale() const;
  Eigen::VectorXcd eigenvalues() const;
  /// Largest 1/|Re(lambda)| over the drift eigenvalues, s.
  double slowest_decay_time() const;
};

StateSpace build_state_space(const ModeSet& modes, const AmplifierModel& amp,
                             const LoopFilter& filter, double T0);

/// Exact zero-order discretization at sample rate fs.
///
/// Matrices are stored in the scaled coordinates of `StateSpace::state_scale`;
/// the `*_physical()` accessors undo the scaling.
struct DiscreteSystem {
  double fs = 0.0;
  StateSpace continuous;
  Eigen::VectorXd scale;
  Eigen::MatrixXd transition;          // exp(drift / fs), scaled
  Eigen::MatrixXd process_covariance;  // scaled, symmetric PSD
  Eigen::MatrixXd noise_factor;        // F F^T = process_covariance
  /// Response to one sample of i_n held over the step, scaled.
  Eigen::VectorXd measurement_gain;
  /// Variance of each i_n sample, S_In fs / 2.
  double measurement_variance = 0.0;

  Eigen::MatrixXd transition_physical() const;
  Eigen::MatrixXd process_covariance_physical() const;
};

DiscreteSystem discretize(const StateSpace& ss, double fs);

/// Stationary state covariance (physical units) of the discrete recursion,
/// including the held measurement-noise input.
Eigen::MatrixXd stationary_covariance(const DiscreteSystem& dsys);

struct Channel {
  std::string name;
  std::vector<double> values;
};

struct TimeSeries {
  double fs = 0.0;
  double t0 = 0.0;
  std::vector<Channel> channels;

  std::size_t size() const { return channels.empty() ? 0 : channels.front().values.size(); }
  const std::vector<double>& channel(const std::string& name) const;
  const std::vector<double>& measured() const { return channel("measured_current_a"); }
  void validate() const;
};

/// Name of the per-mode current channel (1-based mode index).
std::string mode_channel_name(std::size_t mode_index);

/// Langevin run: burn-in is discarded; (seed, config) fixes every sample.
TimeSeries simulate(const DiscreteSystem& dsys, const SimConfig& cfg,
                    bool record_modes = false);

/// Free decay from I_mode = I0 with all other states zero. Recorded from t = 0.
TimeSeries ringdown(const DiscreteSystem& dsys, const SimConfig& cfg,
                    std::size_t mode_index, double I0);

/// Steady response to V_cal cos(2 pi f t) in series with every branch.
/// The run starts on the periodic steady state of the drive, so burn-in only
/// matters for the noise. Mode channels are always recorded.
TimeSeries inject_calibration(const DiscreteSystem& dsys, const SimConfig& cfg,
                              double amplitude, double f);

}  // namespace colddamp
