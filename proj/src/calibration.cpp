#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "colddamp/errors.hpp"
#include "colddamp/estimation.hpp"
#include "validate.hpp"

namespace colddamp {

double CalibrationResult::f0() const { return 1.0 / (kTwoPi * std::sqrt(L * C)); }

double CalibrationResult::Q() const { return kTwoPi * f0() * L / R; }

std::complex<double> tone_phasor(std::span<const double> samples, double fs,
                                 double f, double t0) {
  detail::require_positive(fs, "fs");
  detail::require_positive(f, "f");
  if (samples.size() < 3) throw LengthError("tone_phasor needs at least 3 samples");
  // Least squares on [cos, sin, 1]; exact for a pure steady-state tone.
  Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
  Eigen::Vector3d atb = Eigen::Vector3d::Zero();
  const double w = kTwoPi * f;
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const double t = t0 + double(n) / fs;
    const Eigen::Vector3d row(std::cos(w * t), std::sin(w * t), 1.0);
    ata += row * row.transpose();
    atb += row * samples[n];
  }
  const Eigen::Vector3d c = ata.ldlt().solve(atb);
  return {c(0), -c(1)};
}

CalibrationResult estimate_impedance(std::span<const ToneResponse> responses,
                                     double V_cal) {
  detail::require_positive(std::abs(V_cal), "V_cal");
  if (responses.size() < 5) {
    throw ConditioningError("impedance fit needs at least 5 tones, got " +
                            std::to_string(responses.size()));
  }
  const auto n = Eigen::Index(responses.size());
  // Unknowns: R, L, K = 1/C.  Re(Z) = R,  Im(Z) = omega L - K / omega.
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2 * n, 3);
  Eigen::VectorXd y(2 * n);
  double f_min = responses[0].f;
  double f_max = responses[0].f;
  for (Eigen::Index i = 0; i < n; ++i) {
    const ToneResponse& r = responses[std::size_t(i)];
    detail::require_positive(r.f, "f");
    if (std::abs(r.current) == 0.0) throw ValidationError("current", "zero phasor");
    const std::complex<double> z = V_cal / r.current;
    const double w = kTwoPi * r.f;
    x(2 * i, 0) = 1.0;
    y(2 * i) = z.real();
    x(2 * i + 1, 1) = w;
    x(2 * i + 1, 2) = -1.0 / w;
    y(2 * i + 1) = z.imag();
    f_min = std::min(f_min, r.f);
    f_max = std::max(f_max, r.f);
  }
  const Eigen::Vector3d colnorm = x.colwise().norm().transpose();
  const Eigen::MatrixXd xn = x * colnorm.cwiseInverse().asDiagonal();
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xn);
  const Eigen::Vector3d coef = qr.solve(y).cwiseQuotient(colnorm);

  CalibrationResult out;
  out.R = coef(0);
  out.L = coef(1);
  const double K = coef(2);
  if (!(out.L > 0.0) || !(K > 0.0) || !(out.R > 0.0)) {
    std::ostringstream os;
    os << "impedance fit is ill-conditioned (R = " << out.R << ", L = " << out.L
       << ", 1/C = " << K << ")";
    throw ConditioningError(os.str());
  }
  out.C = 1.0 / K;
  const double linewidth = out.f0() / out.Q();
  if (f_max - f_min < 3.0 * linewidth) {
    std::ostringstream os;
    os << "tones span " << f_max - f_min << " Hz, less than 3 linewidths ("
       << 3.0 * linewidth << " Hz)";
    throw ConditioningError(os.str());
  }
  const double dof = double(2 * n - 3);
  const double sigma2 = dof > 0.0 ? (x * coef - y).squaredNorm() / dof : 0.0;
  const Eigen::Matrix3d xtx_inv = (xn.transpose() * xn).inverse();
  const Eigen::Matrix3d cov =
      colnorm.cwiseInverse().asDiagonal() * xtx_inv * colnorm.cwiseInverse().asDiagonal() * sigma2;
  out.R_err = std::sqrt(std::max(cov(0, 0), 0.0));
  out.L_err = std::sqrt(std::max(cov(1, 1), 0.0));
  out.C_err = std::sqrt(std::max(cov(2, 2), 0.0)) / (K * K);
  return out;
}

}  // namespace colddamp
