#include "colddamp/feedback.hpp"

#include <boost/math/tools/roots.hpp>
#include <cmath>
#include <numbers>
#include <sstream>

#include "colddamp/errors.hpp"
#include "validate.hpp"

namespace colddamp {

using detail::require_finite;
using detail::require_non_negative;
using detail::require_positive;

namespace {
constexpr double kSingularityTolerance = 1e-9;
constexpr double kMaxLoopMagnitude = 0.5;
}  // namespace

void LoopFilter::validate() const {
  require_non_negative(dc_gain, "dc_gain");
  require_positive(f_c, "f_c");
}

void AmplifierModel::validate() const {
  require_finite(A, "A");
  require_positive(L_in, "L_in");
  require_non_negative(S_In, "S_In");
  require_non_negative(S_Vn, "S_Vn");
}

std::complex<double> loop_transfer(const LoopFilter& filter,
                                   const AmplifierModel& amp, double f) {
  filter.validate();
  require_non_negative(f, "f");
  return amp.A * filter.dc_gain / std::complex<double>(1.0, f / filter.f_c);
}

FeedbackImpedance feedback_resistance(std::complex<double> AD, double f,
                                      double L_in) {
  require_positive(L_in, "L_in");
  require_non_negative(f, "f");
  const std::complex<double> denom = 1.0 - AD;
  if (std::abs(denom) <= kSingularityTolerance) {
    throw LoopSingularityError("loop gain AD is at the singularity |1 - AD| = 0");
  }
  const std::complex<double> z =
      std::complex<double>(0.0, 1.0) * AD / denom * (kTwoPi * f * L_in);
  return {z.real(), z.imag()};
}

ClosedLoopMode close_loop(const NormalMode& mode, const AmplifierModel& amp,
                          const LoopFilter& filter) {
  amp.validate();
  const double f = mode.f0();
  const std::complex<double> AD = loop_transfer(filter, amp, f);
  const FeedbackImpedance fb = feedback_resistance(AD, f, amp.L_in);
  if (!(mode.R() + fb.R_D > 0.0)) {
    std::ostringstream os;
    os << "feedback makes mode " << mode.index()
       << " anti-damped (R + R_D = " << mode.R() + fb.R_D << " ohm)";
    throw AntiDampingError(os.str());
  }
  const double g = fb.R_D / mode.R();
  const bool small = std::abs(AD) < 0.01 &&
                     std::abs(std::arg(AD) + std::numbers::pi / 2) < 0.25;
  return ClosedLoopMode{mode,
                        AD,
                        fb.R_D,
                        fb.X_D,
                        g,
                        mode.Q() / (1.0 + g),
                        -fb.X_D / (2.0 * mode.omega0() * mode.L()),
                        small};
}

ClosedLoopMode with_damping(const NormalMode& mode, double g) {
  require_finite(g, "g");
  if (!(g > -1.0)) throw AntiDampingError("g <= -1: total damping is not positive");
  return ClosedLoopMode{mode, {0.0, 0.0}, g * mode.R(), 0.0, g,
                        mode.Q() / (1.0 + g), 0.0, true};
}

double gain_for_target(const NormalMode& mode, const AmplifierModel& amp,
                       double f_c, double g_target) {
  amp.validate();
  require_non_negative(g_target, "g_target");
  require_positive(f_c, "f_c");
  if (g_target == 0.0) return 0.0;
  if (amp.A == 0.0) throw RangeError("amplifier gain A is zero; no feedback possible");

  const double f = mode.f0();
  const double x = f / f_c;
  // dc gain at which |AD(f)| reaches the validity limit
  const double dc_max = kMaxLoopMagnitude * std::sqrt(1.0 + x * x) / std::abs(amp.A);
  auto g_of = [&](double dc) {
    const auto AD = loop_transfer(LoopFilter{dc, f_c}, amp, f);
    return feedback_resistance(AD, f, amp.L_in).R_D / mode.R();
  };
  const double g_max = g_of(dc_max);
  if (!(g_max >= g_target)) {
    std::ostringstream os;
    os << "g = " << g_target << " needs |AD| >= " << kMaxLoopMagnitude
       << " for mode " << mode.index() << " (max reachable g = " << g_max << ")";
    throw RangeError(os.str());
  }
  std::uintmax_t max_iter = 200;
  const auto [lo, hi] = boost::math::tools::toms748_solve(
      [&](double dc) { return g_of(dc) - g_target; }, 0.0, dc_max, -g_target,
      g_max - g_target, boost::math::tools::eps_tolerance<double>(52), max_iter);
  return 0.5 * (lo + hi);
}

}  // namespace colddamp
