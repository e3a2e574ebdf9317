#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "colddamp/errors.hpp"
#include "colddamp/estimation.hpp"
#include "validate.hpp"

namespace colddamp {

namespace {

constexpr double kB = PhysicalConstants::k_B;

struct PeakGuess {
  double f;
  double fwhm;
  double height;  // above floor
};

std::vector<double> moving_average(std::span<const double> v, std::size_t half) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(v.size() - 1, i + half);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += v[j];
    out[i] = s / double(hi - lo + 1);
  }
  return out;
}

double median(std::vector<double> v) {
  const auto mid = v.begin() + std::ptrdiff_t(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

// Greedy peak picking on a lightly smoothed spectrum: strongest first, each
// accepted peak masking a few linewidths around it.
std::vector<PeakGuess> detect_peaks(std::span<const double> f, std::span<const double> s,
                                    std::size_t n_modes, double floor_level) {
  const std::vector<double> sm = moving_average(s, s.size() > 50 ? 2 : 0);
  std::vector<std::size_t> cand;
  for (std::size_t i = 1; i + 1 < sm.size(); ++i) {
    if (sm[i] >= sm[i - 1] && sm[i] > sm[i + 1] && sm[i] > 5.0 * floor_level) {
      cand.push_back(i);
    }
  }
  std::sort(cand.begin(), cand.end(), [&](auto a, auto b) { return sm[a] > sm[b]; });

  std::vector<PeakGuess> peaks;
  std::vector<std::pair<double, double>> masked;
  const double df = f[1] - f[0];
  for (std::size_t i : cand) {
    if (peaks.size() == n_modes) break;
    const bool hidden = std::any_of(masked.begin(), masked.end(), [&](const auto& m) {
      return f[i] >= m.first && f[i] <= m.second;
    });
    if (hidden) continue;
    const double height = sm[i] - floor_level;
    const double half = floor_level + 0.5 * height;
    auto crossing = [&](std::size_t a, std::size_t b) {
      const double t = (sm[a] - half) / (sm[a] - sm[b]);
      return f[a] + t * (f[b] - f[a]);
    };
    std::size_t l = i;
    while (l > 0 && sm[l - 1] > half) --l;
    std::size_t r = i;
    while (r + 1 < sm.size() && sm[r + 1] > half) ++r;
    const double f_left = l > 0 ? crossing(l, l - 1) : f[0];
    const double f_right = r + 1 < sm.size() ? crossing(r, r + 1) : f[sm.size() - 1];
    const double fwhm = std::max(f_right - f_left, df);
    // Parabolic refinement of the maximum.
    double fc = f[i];
    const double denom = sm[i - 1] - 2.0 * sm[i] + sm[i + 1];
    if (denom < 0.0) fc += 0.5 * df * (sm[i - 1] - sm[i + 1]) / denom;
    peaks.push_back({fc, fwhm, height});
    masked.emplace_back(fc - 5.0 * fwhm - 2.0 * df, fc + 5.0 * fwhm + 2.0 * df);
  }
  if (peaks.size() < n_modes) {
    std::ostringstream os;
    os << "detected " << peaks.size() << " resolvable peak(s) above 5x floor, "
       << n_modes << " requested";
    throw PeakDetectionError(os.str());
  }
  std::sort(peaks.begin(), peaks.end(), [](auto& a, auto& b) { return a.f < b.f; });
  return peaks;
}

// Model value and gradient of one passive-resonator line.
struct LineEval {
  double value;
  double d_T;
  double d_f;
  double d_q;
};

LineEval line(double T, double fk, double q, double L, double f) {
  const double wk = kTwoPi * fk;
  const double w = kTwoPi * f;
  const double det = w * w - wk * wk;
  const double dmp = wk * w / q;
  const double D = det * det + dmp * dmp;
  const double S = 4.0 * kB * T * wk / (q * L) * (w * w) / D;
  const double dD_dwk = -4.0 * det * wk + 2.0 * wk * w * w / (q * q);
  const double dD_dq = -2.0 * dmp * dmp / q;
  return {S, T != 0.0 ? S / T : 4.0 * kB * wk / (q * L) * (w * w) / D,
          kTwoPi * (S / wk - S / D * dD_dwk), -S / q - S / D * dD_dq};
}

}  // namespace

ModeFitResult fit_modes(const PsdEstimate& psd, std::size_t n_modes,
                        std::span<const double> L_list, const FitOptions& options) {
  if (n_modes < 1) throw ValidationError("n_modes", "must be >= 1");
  if (L_list.size() != n_modes) throw ValidationError("L_list", "one inductance per mode");
  for (double L : L_list) detail::require_positive(L, "L_list");
  if (psd.frequencies.size() != psd.values.size() || psd.values.size() < 8) {
    throw ValidationError("psd", "needs matching frequency/value arrays of >= 8 bins");
  }

  // Detection runs on everything above dc (or the requested band).
  const double band_lo = options.f_lo.value_or(0.0);
  const double band_hi = options.f_hi.value_or(psd.frequencies.back());
  std::vector<double> f_all;
  std::vector<double> s_all;
  for (std::size_t i = 0; i < psd.values.size(); ++i) {
    const double f = psd.frequencies[i];
    if (f > 0.0 && f >= band_lo && f <= band_hi) {
      f_all.push_back(f);
      s_all.push_back(psd.values[i]);
    }
  }
  if (f_all.size() < 8) throw RangeError("fit band holds fewer than 8 bins");
  double floor_level = median(s_all);
  std::vector<PeakGuess> peaks;
  if (options.initial_modes.empty()) {
    peaks = detect_peaks(f_all, s_all, n_modes, floor_level);
  } else {
    if (options.initial_modes.size() != n_modes) {
      throw ValidationError("initial_modes", "one starting point per mode");
    }
    for (std::size_t k = 0; k < n_modes; ++k) {
      const FittedMode& m0 = options.initial_modes[k];
      detail::require_positive(m0.T, "initial_modes.T");
      detail::require_positive(m0.f, "initial_modes.f");
      if (!(m0.Q_prime > 1.0)) throw ValidationError("initial_modes.Q_prime", "must be > 1");
      const double height = resonator_psd(m0.T, m0.f, m0.Q_prime, L_list[k], m0.f);
      peaks.push_back({m0.f, m0.f / m0.Q_prime, height});
    }
    std::sort(peaks.begin(), peaks.end(),
              [](const PeakGuess& a, const PeakGuess& b) { return a.f < b.f; });
    detail::require_non_negative(options.initial_floor, "initial_floor");
    floor_level = options.initial_floor;
  }

  double lo = band_lo;
  double hi = band_hi;
  if (!options.f_lo || !options.f_hi) {
    double widest = 0.0;
    for (const auto& p : peaks) widest = std::max(widest, p.fwhm);
    const double margin = std::max(0.05 * peaks.front().f, 20.0 * widest);
    if (!options.f_lo) lo = std::max(0.0, peaks.front().f - margin);
    if (!options.f_hi) hi = peaks.back().f + margin;
  }
  std::vector<double> fb;
  std::vector<double> sb;
  for (std::size_t i = 0; i < f_all.size(); ++i) {
    if (f_all[i] >= lo && f_all[i] <= hi) {
      fb.push_back(f_all[i]);
      sb.push_back(s_all[i]);
    }
  }
  const std::size_t N = fb.size();
  const std::size_t P = 3 * n_modes + 1;
  if (N <= P) throw RangeError("fit band holds too few bins for the parameter count");

  const auto np = Eigen::Index(P);
  const auto nn = Eigen::Index(N);
  // Parameters p = offset + scale * theta; theta starts at O(1).
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(np);
  Eigen::VectorXd scale(np);
  Eigen::VectorXd theta(np);
  double max_height = 0.0;
  for (std::size_t k = 0; k < n_modes; ++k) {
    const PeakGuess& pk = peaks[k];
    const double q = std::max(pk.f / pk.fwhm, 1.5);
    const double T = pk.height * kTwoPi * pk.f * L_list[k] / (4.0 * kB * q);
    const auto b = Eigen::Index(3 * k);
    scale(b) = T;
    theta(b) = 1.0;
    offset(b + 1) = pk.f;
    scale(b + 1) = pk.fwhm;
    theta(b + 1) = 0.0;
    scale(b + 2) = q;
    theta(b + 2) = 1.0;
    max_height = std::max(max_height, pk.height);
  }
  const auto fl = Eigen::Index(P - 1);
  const double floor_scale = std::max(floor_level, 1e-9 * max_height);
  scale(fl) = floor_scale;
  theta(fl) = std::max(floor_level, 0.0) / floor_scale;

  auto params = [&](const Eigen::VectorXd& th) -> Eigen::VectorXd {
    return offset + scale.cwiseProduct(th);
  };
  auto feasible = [&](Eigen::VectorXd& th) {
    th(fl) = std::max(th(fl), 0.0);
    const Eigen::VectorXd p = params(th);
    for (std::size_t k = 0; k < n_modes; ++k) {
      const auto b = Eigen::Index(3 * k);
      if (!(p(b) > 0.0) || !(p(b + 1) > 0.0) || !(p(b + 2) > 1.0)) return false;
    }
    return p.allFinite();
  };
  auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& m, Eigen::MatrixXd* jac) {
    for (std::size_t i = 0; i < N; ++i) {
      double v = p(fl);
      for (std::size_t k = 0; k < n_modes; ++k) {
        const auto b = Eigen::Index(3 * k);
        const LineEval e = line(p(b), p(b + 1), p(b + 2), L_list[k], fb[i]);
        v += e.value;
        if (jac) {
          (*jac)(Eigen::Index(i), b) = e.d_T * scale(b);
          (*jac)(Eigen::Index(i), b + 1) = e.d_f * scale(b + 1);
          (*jac)(Eigen::Index(i), b + 2) = e.d_q * scale(b + 2);
        }
      }
      if (jac) (*jac)(Eigen::Index(i), fl) = scale(fl);
      m(Eigen::Index(i)) = v;
    }
  };

  const Eigen::Map<const Eigen::VectorXd> data(sb.data(), nn);
  Eigen::VectorXd m(nn);
  Eigen::VectorXd m_trial(nn);
  Eigen::MatrixXd jac(nn, np);
  double lambda = 1e-3;
  bool converged = false;
  int it = 0;
  double cost = 0.0;
  Eigen::MatrixXd jw;
  for (; it < options.max_iterations && !converged; ++it) {
    const Eigen::VectorXd p = params(theta);
    model(p, m, &jac);
    // Weights follow the current model, not the noisy data.
    const Eigen::VectorXd w = m.cwiseInverse();
    const Eigen::VectorXd r = (data - m).cwiseProduct(w);
    jw = w.asDiagonal() * jac;
    cost = r.squaredNorm();
    const Eigen::VectorXd colnorm = jw.colwise().norm().transpose().cwiseMax(1e-300);
    const Eigen::MatrixXd jn = jw * colnorm.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd jtj = jn.transpose() * jn;
    const Eigen::VectorXd jtr = jn.transpose() * r;

    bool accepted = false;
    while (!accepted) {
      Eigen::MatrixXd a = jtj;
      a.diagonal().array() += lambda;
      Eigen::VectorXd step = a.ldlt().solve(jtr).cwiseQuotient(colnorm);
      if (theta(fl) <= 0.0 && step(fl) < 0.0) {
        // Floor pinned at zero: take the step in the remaining parameters.
        Eigen::VectorXd g = jtr;
        a.row(fl).setZero();
        a.col(fl).setZero();
        a(fl, fl) = 1.0;
        g(fl) = 0.0;
        step = a.ldlt().solve(g).cwiseQuotient(colnorm);
      }
      Eigen::VectorXd trial = theta + step;
      const Eigen::VectorXd p_old = params(theta);
      auto relative_change = [&](const Eigen::VectorXd& pt) {
        double worst = 0.0;
        for (Eigen::Index j = 0; j < np; ++j) {
          const double ref = j == fl ? std::max(std::abs(p_old(j)), floor_scale)
                                     : std::abs(p_old(j));
          worst = std::max(worst, std::abs(pt(j) - p_old(j)) / ref);
        }
        return worst;
      };
      if (feasible(trial)) {
        const Eigen::VectorXd pt = params(trial);
        model(pt, m_trial, nullptr);
        const double trial_cost = (data - m_trial).cwiseProduct(w).squaredNorm();
        if (trial_cost <= cost) {
          accepted = true;
          converged = relative_change(pt) < options.tolerance;
          theta = trial;
          lambda = std::max(lambda / 10.0, 1e-12);
          break;
        }
        if (relative_change(pt) < options.tolerance) {
          // No descent left at the resolution we care about.
          converged = true;
          break;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e20) break;
    }
    if (!accepted && !converged) break;
  }
  if (!converged) {
    std::ostringstream os;
    os << "mode fit did not converge after " << it << " iterations (residual " << cost << ")";
    throw FitError(os.str(), cost);
  }

  // Final residual and covariance at the solution.
  const Eigen::VectorXd p = params(theta);
  model(p, m, &jac);
  const Eigen::VectorXd w = m.cwiseInverse();
  jw = w.asDiagonal() * jac;
  cost = (data - m).cwiseProduct(w).squaredNorm();
  const double dof = double(N - P);
  Eigen::MatrixXd cov_theta =
      (jw.transpose() * jw).ldlt().solve(Eigen::MatrixXd::Identity(np, np)) *
      (cost / dof);
  cov_theta = 0.5 * (cov_theta + cov_theta.transpose());

  ModeFitResult res;
  res.covariance = scale.asDiagonal() * cov_theta * scale.asDiagonal();
  auto err = [&](Eigen::Index j) { return std::sqrt(std::max(res.covariance(j, j), 0.0)); };
  for (std::size_t k = 0; k < n_modes; ++k) {
    const auto b = Eigen::Index(3 * k);
    res.modes.push_back({int(k + 1), L_list[k], p(b), p(b + 1), p(b + 2), err(b),
                         err(b + 1), err(b + 2)});
  }
  res.floor = p(fl);
  res.floor_err = err(fl);
  res.iterations = it;
  res.final_residual = cost;
  res.n_bins = N;
  res.f_lo = fb.front();
  res.f_hi = fb.back();
  return res;
}

TemperatureEstimate extract_temperature(const ModeFitResult& fit,
                                        std::size_t mode_index, double L) {
  if (mode_index < 1 || mode_index > fit.modes.size()) {
    throw ValidationError("mode_index", "out of range");
  }
  detail::require_positive(L, "L");
  const FittedMode& m = fit.modes[mode_index - 1];
  TemperatureEstimate out;
  out.T = m.T;
  out.T_err = m.T_err;
  if (m.T == 0.0) return out;

  // Integrate the fitted line over +-1000 linewidths at 20 points each.
  const double fwhm = m.f / m.Q_prime;
  const double lo = std::max(m.f - 1000.0 * fwhm, 1e-6 * m.f);
  const double hi = m.f + 1000.0 * fwhm;
  const FrequencyGrid grid(lo, hi, std::size_t(std::ceil((hi - lo) / fwhm * 20.0)) + 1);
  AnalyticSpectrum line_psd{grid, std::vector<double>(grid.size())};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    line_psd.values[i] = resonator_psd(m.T, m.f, m.Q_prime, L, grid[i]);
  }
  out.T_integral = L * integrate_psd(line_psd, lo, hi) / kB;
  out.relative_discrepancy = std::abs(out.T_integral - out.T) / out.T;
  out.consistent = out.relative_discrepancy <= 5e-3;
  return out;
}

}  // namespace colddamp
