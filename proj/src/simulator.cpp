#include "colddamp/simulator.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <unsupported/Eigen/MatrixFunctions>

#include "colddamp/errors.hpp"
#include "colddamp/philox.hpp"
#include "validate.hpp"

namespace colddamp {

using detail::require_non_negative;
using detail::require_positive;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr std::uint32_t kStreamLangevin = 0;
constexpr std::uint32_t kStreamRingdown = 1;
constexpr std::uint32_t kStreamCalibration = 2;

struct Discretized {
  MatrixXd phi;
  MatrixXd covariance;
  VectorXd input_gain;
};

void require_finite_matrix(const MatrixXd& m, const char* what) {
  if (!m.allFinite()) {
    throw NumericalError(std::string(what) +
                         " is not finite; raise fs relative to the system stiffness");
  }
}

// Van Loan construction for the exact covariance of the integrated white
// noise, plus the held-input gain from a second augmented exponential.
Discretized discretize_matrices(const MatrixXd& a, const MatrixXd& qc,
                                const VectorXd& b_in, double h) {
  const Eigen::Index n = a.rows();
  MatrixXd vl = MatrixXd::Zero(2 * n, 2 * n);
  vl.topLeftCorner(n, n) = -a * h;
  vl.topRightCorner(n, n) = qc * h;
  vl.bottomRightCorner(n, n) = a.transpose() * h;
  const MatrixXd e = vl.exp();
  require_finite_matrix(e, "matrix exponential");

  Discretized out;
  out.phi = e.bottomRightCorner(n, n).transpose();
  MatrixXd cov = out.phi * e.topRightCorner(n, n);
  out.covariance = 0.5 * (cov + cov.transpose());

  MatrixXd aug = MatrixXd::Zero(n + 1, n + 1);
  aug.topLeftCorner(n, n) = a * h;
  aug.topRightCorner(n, 1) = b_in * h;
  const MatrixXd ea = aug.exp();
  require_finite_matrix(ea, "input-gain exponential");
  out.input_gain = ea.topRightCorner(n, 1);
  return out;
}

// Symmetric square-root factor; tiny negative eigenvalues are rounding noise.
MatrixXd psd_factor(MatrixXd& cov) {
  const Eigen::Index n = cov.rows();
  const double trace = cov.trace();
  if (trace == 0.0) return MatrixXd::Zero(n, n);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  VectorXd lambda = es.eigenvalues();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (lambda(i) < 0.0) {
      if (-lambda(i) > 1e-14 * trace) {
        std::ostringstream os;
        os << "process covariance has eigenvalue " << lambda(i)
           << " (trace " << trace << ")";
        throw NumericalError(os.str());
      }
      lambda(i) = 0.0;
    }
  }
  cov = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  return es.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
}

std::size_t samples_for(double seconds, double fs) {
  return std::size_t(std::llround(seconds * fs));
}

// One linear Gaussian recursion in scaled coordinates.
struct Recursion {
  const MatrixXd& phi;
  const MatrixXd& factor;
  const VectorXd& input_gain;
  double input_sigma;
  Eigen::RowVectorXd output;
  std::vector<Eigen::Index> mode_rows;
  bool stochastic;

  TimeSeries run(VectorXd x, std::size_t n_burn, std::size_t n_rec, double fs,
                 std::uint64_t seed, std::uint32_t stream, bool record_modes) const {
    const Eigen::Index n = x.size();
    TimeSeries ts;
    ts.fs = fs;
    ts.t0 = double(n_burn) / fs;
    ts.channels.push_back({"measured_current_a", std::vector<double>(n_rec)});
    if (record_modes) {
      for (std::size_t k = 0; k < mode_rows.size(); ++k) {
        ts.channels.push_back({mode_channel_name(k + 1), std::vector<double>(n_rec)});
      }
    }
    const NormalStream normals(seed, stream);
    const bool has_state_noise = stochastic && factor.squaredNorm() > 0.0;
    const bool has_input = stochastic && input_sigma > 0.0;
    VectorXd z = VectorXd::Zero(n + 1);
    VectorXd next(n);
    const std::size_t total = n_burn + n_rec;
    for (std::size_t step = 0; step < total; ++step) {
      if (has_state_noise || has_input) {
        normals.fill(step, std::span<double>(z.data(), std::size_t(n + 1)));
      }
      const double u = has_input ? input_sigma * z(n) : 0.0;
      if (step >= n_burn) {
        const std::size_t j = step - n_burn;
        ts.channels[0].values[j] = output.dot(x) + u;
        if (record_modes) {
          for (std::size_t k = 0; k < mode_rows.size(); ++k) {
            ts.channels[k + 1].values[j] = x(mode_rows[k]);
          }
        }
      }
      next.noalias() = phi * x;
      if (has_state_noise) next.noalias() += factor * z.head(n);
      if (has_input) next += input_gain * u;
      x.swap(next);
    }
    return ts;
  }
};

Recursion make_recursion(const DiscreteSystem& d, const MatrixXd& phi,
                         const MatrixXd& factor, const VectorXd& gain,
                         bool stochastic) {
  const std::size_t n = d.continuous.n_modes;
  Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(phi.cols());
  std::vector<Eigen::Index> rows;
  for (std::size_t k = 0; k < n; ++k) {
    const auto r = Eigen::Index(StateSpace::current_index(k));
    out(r) = 1.0;  // currents are unscaled
    rows.push_back(r);
  }
  return Recursion{phi, factor, gain, std::sqrt(d.measurement_variance), out, rows,
                   stochastic};
}

double resolve_burn_in(const DiscreteSystem& d, const SimConfig& cfg) {
  return cfg.burn_in ? *cfg.burn_in : 10.0 * d.continuous.slowest_decay_time();
}

void validate_config(const DiscreteSystem& d, const SimConfig& cfg, bool need_burn) {
  require_positive(cfg.fs, "fs");
  require_positive(cfg.duration, "duration");
  if (cfg.fs != d.fs) throw ValidationError("fs", "must equal the discretization rate");
  if (cfg.burn_in) require_non_negative(*cfg.burn_in, "burn_in");
  if (need_burn && !(cfg.duration > resolve_burn_in(d, cfg))) {
    throw ValidationError("duration", "must exceed burn_in");
  }
}

}  // namespace

Eigen::VectorXd StateSpace::state_scale() const {
  VectorXd s = VectorXd::Ones(Eigen::Index(dim()));
  for (std::size_t k = 0; k < n_modes; ++k) {
    s(Eigen::Index(charge_index(k))) = kTwoPi * mode_frequencies[k];
  }
  return s;
}

Eigen::VectorXcd StateSpace::eigenvalues() const {
  const VectorXd s = state_scale();
  const MatrixXd scaled = s.asDiagonal() * drift * s.cwiseInverse().asDiagonal();
  return Eigen::EigenSolver<MatrixXd>(scaled, false).eigenvalues();
}

double StateSpace::slowest_decay_time() const {
  double worst = 0.0;
  for (const auto& l : eigenvalues()) worst = std::max(worst, -1.0 / l.real());
  return worst;
}

StateSpace build_state_space(const ModeSet& modes, const AmplifierModel& amp,
                             const LoopFilter& filter, double T0) {
  require_non_negative(T0, "T0");
  for (const NormalMode& m : modes) (void)close_loop(m, amp, filter);

  const std::size_t n = modes.size();
  StateSpace ss;
  ss.n_modes = n;
  const auto dim = Eigen::Index(ss.dim());
  const auto fi = Eigen::Index(ss.filter_index());
  const double rate = kTwoPi * filter.f_c;  // 1 / tau_c
  const double loop = amp.A * filter.dc_gain;

  ss.drift = MatrixXd::Zero(dim, dim);
  ss.noise_input = MatrixXd::Zero(dim, Eigen::Index(n + 1));
  ss.noise_intensity = VectorXd::Zero(Eigen::Index(n + 1));
  ss.measurement_input = VectorXd::Zero(dim);
  ss.drive_input = VectorXd::Zero(dim);
  ss.output = Eigen::RowVectorXd::Zero(dim);
  ss.measurement_psd = amp.S_In;

  // Filter row: dI_D/dt = rate * (-(1 - loop) I_D + loop * sum I_j + loop * i_n).
  Eigen::RowVectorXd filter_row = Eigen::RowVectorXd::Zero(dim);
  filter_row(fi) = -rate * (1.0 - loop);
  for (std::size_t j = 0; j < n; ++j) {
    filter_row(Eigen::Index(StateSpace::current_index(j))) = rate * loop;
  }
  const double filter_noise = rate * loop;
  ss.drift.row(fi) = filter_row;
  ss.measurement_input(fi) = filter_noise;

  for (std::size_t k = 0; k < n; ++k) {
    const NormalMode& m = modes[k];
    const auto qi = Eigen::Index(StateSpace::charge_index(k));
    const auto ii = Eigen::Index(StateSpace::current_index(k));
    const double coupling = amp.L_in / m.L();
    ss.drift(qi, ii) = 1.0;
    ss.drift.row(ii) -= coupling * filter_row;
    ss.drift(ii, qi) -= 1.0 / (m.L() * m.C());
    ss.drift(ii, ii) -= m.R() / m.L();
    ss.measurement_input(ii) = -coupling * filter_noise;
    ss.drive_input(ii) = 1.0 / m.L();
    ss.noise_input(ii, Eigen::Index(k)) = 1.0 / m.L();
    ss.noise_input(ii, Eigen::Index(n)) = 1.0 / m.L();
    ss.noise_intensity(Eigen::Index(k)) = 2.0 * PhysicalConstants::k_B * T0 * m.R();
    ss.output(ii) = 1.0;
    ss.mode_frequencies.push_back(m.f0());
  }
  ss.noise_intensity(Eigen::Index(n)) = amp.S_Vn / 2.0;

  for (const auto& l : ss.eigenvalues()) {
    if (!(l.real() < 0.0)) {
      std::ostringstream os;
      os << "closed-loop system is unstable: eigenvalue " << l.real() << " + "
         << l.imag() << "i";
      throw StabilityError(os.str());
    }
  }
  return ss;
}

DiscreteSystem discretize(const StateSpace& ss, double fs) {
  require_positive(fs, "fs");
  const double f_max =
      *std::max_element(ss.mode_frequencies.begin(), ss.mode_frequencies.end());
  if (fs < 8.0 * f_max) {
    throw ValidationError("fs", "must be at least 8x the highest mode frequency");
  }
  DiscreteSystem d;
  d.fs = fs;
  d.continuous = ss;
  d.scale = ss.state_scale();
  const MatrixXd a = d.scale.asDiagonal() * ss.drift * d.scale.cwiseInverse().asDiagonal();
  const MatrixXd b = d.scale.asDiagonal() * ss.noise_input;
  const MatrixXd qc = b * ss.noise_intensity.asDiagonal() * b.transpose();
  const VectorXd b_in = d.scale.asDiagonal() * ss.measurement_input;

  Discretized m = discretize_matrices(a, qc, b_in, 1.0 / fs);
  d.transition = std::move(m.phi);
  d.process_covariance = std::move(m.covariance);
  d.noise_factor = psd_factor(d.process_covariance);
  d.measurement_gain = std::move(m.input_gain);
  d.measurement_variance = ss.measurement_psd * fs / 2.0;
  return d;
}

Eigen::MatrixXd DiscreteSystem::transition_physical() const {
  return scale.cwiseInverse().asDiagonal() * transition * scale.asDiagonal();
}

Eigen::MatrixXd DiscreteSystem::process_covariance_physical() const {
  const VectorXd inv = scale.cwiseInverse();
  return inv.asDiagonal() * process_covariance * inv.asDiagonal();
}

Eigen::MatrixXd stationary_covariance(const DiscreteSystem& dsys) {
  // Doubling: P = sum_k Phi^k W Phi^k^T.
  MatrixXd a = dsys.transition;
  MatrixXd p = dsys.process_covariance + dsys.measurement_variance *
                                             dsys.measurement_gain *
                                             dsys.measurement_gain.transpose();
  for (int it = 0; it < 128 && a.squaredNorm() > 1e-36; ++it) {
    p += a * p * a.transpose();
    a = a * a;
  }
  if (a.squaredNorm() > 1e-36) throw NumericalError("stationary covariance did not converge");
  const VectorXd inv = dsys.scale.cwiseInverse();
  MatrixXd phys = inv.asDiagonal() * p * inv.asDiagonal();
  return 0.5 * (phys + phys.transpose());
}

const std::vector<double>& TimeSeries::channel(const std::string& name) const {
  for (const Channel& c : channels) {
    if (c.name == name) return c.values;
  }
  throw ValidationError("channel", "no channel named '" + name + "'");
}

void TimeSeries::validate() const {
  require_positive(fs, "fs");
  for (const Channel& c : channels) {
    if (c.values.size() != size()) throw ValidationError(c.name, "channel lengths differ");
    for (double v : c.values) {
      if (!std::isfinite(v)) throw ValidationError(c.name, "non-finite sample");
    }
  }
}

std::string mode_channel_name(std::size_t mode_index) {
  return "mode" + std::to_string(mode_index) + "_a";
}

TimeSeries simulate(const DiscreteSystem& dsys, const SimConfig& cfg,
                    bool record_modes) {
  validate_config(dsys, cfg, true);
  const double burn = resolve_burn_in(dsys, cfg);
  const std::size_t n_burn = samples_for(burn, cfg.fs);
  const std::size_t n_rec = samples_for(cfg.duration, cfg.fs) - n_burn;
  const Recursion rec = make_recursion(dsys, dsys.transition, dsys.noise_factor,
                                       dsys.measurement_gain, true);
  return rec.run(VectorXd::Zero(dsys.transition.rows()), n_burn, n_rec, cfg.fs,
                 cfg.seed, kStreamLangevin, record_modes);
}

TimeSeries ringdown(const DiscreteSystem& dsys, const SimConfig& cfg,
                    std::size_t mode_index, double I0) {
  validate_config(dsys, cfg, false);
  if (mode_index < 1 || mode_index > dsys.continuous.n_modes) {
    throw ValidationError("mode_index", "out of range");
  }
  VectorXd x0 = VectorXd::Zero(dsys.transition.rows());
  x0(Eigen::Index(StateSpace::current_index(mode_index - 1))) = I0;
  const Recursion rec = make_recursion(dsys, dsys.transition, dsys.noise_factor,
                                       dsys.measurement_gain, true);
  return rec.run(x0, 0, samples_for(cfg.duration, cfg.fs), cfg.fs, cfg.seed,
                 kStreamRingdown, true);
}

TimeSeries inject_calibration(const DiscreteSystem& dsys, const SimConfig& cfg,
                              double amplitude, double f) {
  validate_config(dsys, cfg, true);
  detail::require_finite(amplitude, "amplitude");
  require_positive(f, "f");
  // Augment with a two-state oscillator generating the drive exactly.
  const StateSpace& ss = dsys.continuous;
  const Eigen::Index n = Eigen::Index(ss.dim());
  const double w = kTwoPi * f;
  VectorXd scale(n + 2);
  scale << dsys.scale, 1.0, 1.0;
  MatrixXd a = MatrixXd::Zero(n + 2, n + 2);
  a.topLeftCorner(n, n) = dsys.scale.asDiagonal() * ss.drift *
                          dsys.scale.cwiseInverse().asDiagonal();
  a.block(0, n, n, 1) = dsys.scale.asDiagonal() * ss.drive_input;
  a(n, n + 1) = -w;
  a(n + 1, n) = w;
  MatrixXd b = MatrixXd::Zero(n + 2, ss.noise_input.cols());
  b.topRows(n) = dsys.scale.asDiagonal() * ss.noise_input;
  const MatrixXd qc = b * ss.noise_intensity.asDiagonal() * b.transpose();
  VectorXd b_in = VectorXd::Zero(n + 2);
  b_in.head(n) = dsys.scale.asDiagonal() * ss.measurement_input;

  Discretized m = discretize_matrices(a, qc, b_in, 1.0 / cfg.fs);
  const MatrixXd factor = psd_factor(m.covariance);
  const Recursion rec = make_recursion(dsys, m.phi, factor, m.input_gain, true);
  // Start on the periodic steady state of the drive, Re(X) with
  // (i w - A) X = B V, so only the noise has a transient.
  const Eigen::MatrixXcd lhs =
      std::complex<double>(0.0, w) * Eigen::MatrixXcd::Identity(n, n) -
      a.topLeftCorner(n, n).cast<std::complex<double>>();
  const Eigen::VectorXcd rhs = (a.block(0, n, n, 1) * amplitude).cast<std::complex<double>>();
  VectorXd x0 = VectorXd::Zero(n + 2);
  x0.head(n) = lhs.partialPivLu().solve(rhs).real();
  x0(n) = amplitude;
  const double burn = resolve_burn_in(dsys, cfg);
  const std::size_t n_burn = samples_for(burn, cfg.fs);
  return rec.run(x0, n_burn, samples_for(cfg.duration, cfg.fs) - n_burn, cfg.fs,
                 cfg.seed, kStreamCalibration, true);
}

}  // namespace colddamp
