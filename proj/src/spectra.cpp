#include "colddamp/spectra.hpp"

#include <algorithm>
#include <boost/math/tools/minima.hpp>
#include <cmath>
#include <sstream>

#include "colddamp/errors.hpp"
#include "validate.hpp"

namespace colddamp {

using detail::require_non_negative;
using detail::require_positive;

namespace {
constexpr double kB = PhysicalConstants::k_B;

AnalyticSpectrum zero_spectrum(const FrequencyGrid& grid) {
  return {grid, std::vector<double>(grid.size(), 0.0)};
}
}  // namespace

FrequencyGrid::FrequencyGrid(double f_start, double f_stop, std::size_t n_points)
    : f_start_(f_start), f_stop_(f_stop), n_(n_points) {
  require_positive(f_start, "f_start");
  require_positive(f_stop, "f_stop");
  if (!(f_stop > f_start)) throw ValidationError("f_stop", "must exceed f_start");
  if (n_points < 2) throw ValidationError("n_points", "must be >= 2");
}

double FrequencyGrid::operator[](std::size_t i) const noexcept {
  if (i + 1 == n_) return f_stop_;
  return f_start_ + step() * double(i);
}

std::vector<double> FrequencyGrid::frequencies() const {
  std::vector<double> f(n_);
  for (std::size_t i = 0; i < n_; ++i) f[i] = (*this)[i];
  return f;
}

double thermal_voltage_psd(const NormalMode& mode, double T0) {
  require_non_negative(T0, "T0");
  return 4.0 * kB * T0 * mode.R();
}

double resonator_psd(double T_mode, double f_mode, double q_prime, double L,
                     double f) {
  const double wk = kTwoPi * f_mode;
  const double w = kTwoPi * f;
  const double detune = w * w - wk * wk;
  const double damp = wk * w / q_prime;
  return 4.0 * kB * T_mode * wk / (q_prime * L) * (w * w) /
         (detune * detune + damp * damp);
}

AnalyticSpectrum mode_current_psd(const ClosedLoopMode& clm, double T0,
                                  const FrequencyGrid& grid) {
  require_non_negative(T0, "T0");
  if (!(clm.Q_prime > 0.0)) throw AntiDampingError("closed-loop Q' must be positive");
  const NormalMode& m = clm.mode;
  const double wk = m.omega0();
  const double prefactor = 4.0 * kB * T0 * wk / (m.Q() * m.L());
  AnalyticSpectrum out = zero_spectrum(grid);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double w = kTwoPi * grid[i];
    const double detune = w * w - wk * wk;
    const double damp = wk * w / clm.Q_prime;
    out.values[i] = prefactor * (w * w) / (detune * detune + damp * damp);
  }
  return out;
}

CurrentPsdBreakdown total_current_psd_components(const ModeSet& modes,
                                                 const AmplifierModel& amp,
                                                 const LoopFilter& filter,
                                                 double T0,
                                                 const FrequencyGrid& grid) {
  CurrentPsdBreakdown out{zero_spectrum(grid), {}, zero_spectrum(grid), {}};
  std::fill(out.floor.values.begin(), out.floor.values.end(), amp.S_In);
  for (const NormalMode& m : modes) {
    const ClosedLoopMode clm = close_loop(m, amp, filter);
    out.thermal.push_back(mode_current_psd(clm, T0, grid));
    AnalyticSpectrum ba = zero_spectrum(grid);
    if (amp.S_Vn > 0.0) {
      for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto z = series_rlc_impedance(m.R() + clm.R_D, m.L(), m.C(), grid[i]);
        ba.values[i] = amp.S_Vn / std::norm(z);
      }
    }
    out.back_action.push_back(std::move(ba));
  }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double s = out.floor.values[i];
    for (std::size_t k = 0; k < modes.size(); ++k) {
      s += out.thermal[k].values[i] + out.back_action[k].values[i];
    }
    out.total.values[i] = s;
  }
  return out;
}

AnalyticSpectrum total_current_psd(const ModeSet& modes,
                                   const AmplifierModel& amp,
                                   const LoopFilter& filter, double T0,
                                   const FrequencyGrid& grid) {
  return total_current_psd_components(modes, amp, filter, T0, grid).total;
}

double integrate_psd(const AnalyticSpectrum& spec, double f_lo, double f_hi) {
  const FrequencyGrid& g = spec.grid;
  if (f_lo > f_hi) throw RangeError("integration band reversed (f_lo > f_hi)");
  if (f_lo < g.f_start() || f_hi > g.f_stop()) {
    std::ostringstream os;
    os << "integration band [" << f_lo << ", " << f_hi
       << "] Hz outside grid [" << g.f_start() << ", " << g.f_stop() << "] Hz";
    throw RangeError(os.str());
  }
  if (f_lo == f_hi) return 0.0;
  const double df = g.step();
  auto value_at = [&](double f) {
    const double pos = (f - g.f_start()) / df;
    const std::size_t i = std::min<std::size_t>(std::size_t(pos), g.size() - 2);
    const double t = pos - double(i);
    return spec.values[i] * (1.0 - t) + spec.values[i + 1] * t;
  };
  // Grid points strictly inside (f_lo, f_hi).
  std::size_t first = std::size_t(std::ceil((f_lo - g.f_start()) / df));
  while (first < g.size() && g[first] <= f_lo) ++first;
  double sum = 0.0;
  double f_prev = f_lo;
  double v_prev = value_at(f_lo);
  for (std::size_t i = first; i < g.size() && g[i] < f_hi; ++i) {
    sum += 0.5 * (v_prev + spec.values[i]) * (g[i] - f_prev);
    f_prev = g[i];
    v_prev = spec.values[i];
  }
  sum += 0.5 * (v_prev + value_at(f_hi)) * (f_hi - f_prev);
  return sum;
}

double predicted_temperature_simple(double T0, double g) {
  require_non_negative(T0, "T0");
  if (!(g > -1.0)) throw AntiDampingError("g <= -1: total damping is not positive");
  return T0 / (1.0 + g);
}

double predicted_temperature_refined(const NormalMode& mode,
                                     const AmplifierModel& amp, double T0,
                                     double g) {
  require_non_negative(T0, "T0");
  require_non_negative(g, "g");
  const double wL = mode.omega0() * mode.L();
  const double Q = mode.Q();
  return (T0 + Q * amp.S_Vn / (4.0 * kB * wL)) / (1.0 + g) +
         g * g / (1.0 + g) * wL / (4.0 * kB * Q) * amp.S_In;
}

TemperaturePrediction predict_temperature(const ClosedLoopMode& clm,
                                          const AmplifierModel& amp, double T0) {
  const double g = std::max(clm.g, 0.0);
  const double t_simple = predicted_temperature_simple(T0, clm.g);
  return {clm.mode.index(), clm.g, t_simple,
          predicted_temperature_refined(clm.mode, amp, T0, g),
          kB * t_simple / clm.mode.L()};
}

OptimumGain optimum_gain(const NormalMode& mode, const AmplifierModel& amp,
                         double T0) {
  amp.validate();
  require_non_negative(T0, "T0");
  if (amp.S_In == 0.0) {
    throw RangeError("S_In = 0: temperature decreases monotonically in g, no optimum");
  }
  const double wL = mode.omega0() * mode.L();
  const double Q = mode.Q();
  const double t0_eff = T0 + Q * amp.S_Vn / (4.0 * kB * wL);
  const double g_star = std::sqrt(4.0 * kB * Q * t0_eff / (wL * amp.S_In));

  // Unimodal in log g; bracket twelve decades around the large-g estimate.
  auto T_of_log = [&](double lg) {
    return predicted_temperature_refined(mode, amp, T0, std::exp(lg));
  };
  const double centre = std::log(std::max(g_star, 1e-300));
  const auto [lg, t_min] = boost::math::tools::brent_find_minima(
      T_of_log, centre - 6.0 * std::log(10.0), centre + 6.0 * std::log(10.0), 52);
  return {std::exp(lg), t_min, g_star};
}

}  // namespace colddamp
