#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "colddamp/errors.hpp"
#include "colddamp/feedback.hpp"
#include "colddamp/spectra.hpp"
#include "test_util.hpp"

using namespace colddamp;
using cd = std::complex<double>;

namespace {
constexpr double kDeg = 180.0 / std::numbers::pi;

NormalMode mode2() { return auriga_modes()[1]; }
}  // namespace

TEST_CASE("loop_transfer of the single-pole filter") {
  const AmplifierModel amp{2.5, 1.74e-6, 0.0, 0.0};
  const LoopFilter filt{0.3, 200.0};
  const cd at_fc = loop_transfer(filt, amp, 200.0);
  CHECK(std::arg(at_fc) * kDeg == approx(-45.0).epsilon(1e-13));
  CHECK(std::abs(at_fc) == approx(0.75 / std::sqrt(2.0)).epsilon(1e-13));

  const cd at_914 = loop_transfer(filt, amp, 914.0);
  CHECK(std::arg(at_914) * kDeg == approx(-77.65717376451955).epsilon(1e-12));
  CHECK(std::abs(at_914) == approx(0.75 * 0.21376062802513308).epsilon(1e-12));

  const cd dc = loop_transfer(filt, amp, 0.0);
  CHECK(dc.real() == approx(0.75));
  CHECK(dc.imag() == 0.0);

  CHECK_THROWS_AS(loop_transfer(LoopFilter{0.1, 0.0}, amp, 10.0), ValidationError);
}

TEST_CASE("feedback_resistance") {
  SUBCASE("quadrature loop gain") {
    const auto fb = feedback_resistance(cd(0.0, -1e-3), 914.0, 1.74e-6);
    CHECK(fb.R_D == approx(9.9925165926095347e-06).epsilon(1e-12));
    CHECK(fb.X_D == approx(-9.9925165926095350e-09).epsilon(1e-10));
  }
  SUBCASE("real loop gain adds no damping") {
    for (double ad : {-0.3, -1e-3, 0.0, 1e-4, 0.2, 0.9}) {
      const auto fb = feedback_resistance(cd(ad, 0.0), 900.0, 1.74e-6);
      CHECK(fb.R_D == 0.0);
    }
  }
  SUBCASE("first-order inversion") {
    const NormalMode m = mode2();
    const double wLin = m.omega0() * 1.74e-6;
    for (double g : {1.0, 10.0, 100.0}) {
      const cd AD(0.0, -g * m.R() / wLin);
      const auto fb = feedback_resistance(AD, m.f0(), 1.74e-6);
      // Exact R_D = g R / (1 + |AD|^2); the relative deviation is |AD|^2.
      CHECK(fb.R_D / m.R() == approx(g).epsilon(2.0 * std::norm(AD) + 1e-13));
    }
  }
  SUBCASE("singular loop") {
    CHECK_THROWS_AS(feedback_resistance(cd(1.0, 0.0), 900.0, 1.74e-6), LoopSingularityError);
    CHECK_THROWS_AS(feedback_resistance(cd(1.0 + 5e-10, 0.0), 900.0, 1.74e-6),
                    LoopSingularityError);
    CHECK_NOTHROW(feedback_resistance(cd(1.0 + 1e-6, 0.0), 900.0, 1.74e-6));
  }
}

TEST_CASE("small-gain phase law") {
  const double f = 914.0, L_in = 1.74e-6;
  const double wL = kTwoPi * f * L_in;
  for (double mag : {1e-5, 1e-4, 1e-3, 1e-2}) {
    for (double phi = -3.1; phi < 3.1; phi += 0.05) {
      const cd AD = std::polar(mag, phi);
      const auto fb = feedback_resistance(AD, f, L_in);
      const double lead = wL * mag * std::sin(-phi);
      CHECK(std::abs(fb.R_D - lead) <= 1.5 * mag * wL * mag);
      if (phi < 0.0) {
        CHECK(fb.R_D > 0.0);
      } else if (phi > 1e-12) {
        CHECK(fb.R_D < 0.0);
      }
    }
  }
}

TEST_CASE("close_loop") {
  const NormalMode m = mode2();
  const AmplifierModel amp;
  SUBCASE("open loop") {
    const ModeSet set = auriga_modes();
    for (const NormalMode& mk : set.modes()) {
      const auto clm = close_loop(mk, amp, LoopFilter{0.0, 200.0});
      CHECK(clm.g == 0.0);
      CHECK(clm.Q_prime == mk.Q());
      CHECK(clm.f_shift == 0.0);
    }
  }
  SUBCASE("g = R_D / R") {
    // Loop gain chosen to make R_D = 1e-5 ohm exactly at the mode-2 frequency.
    const double w = m.omega0();
    const double x = 1e-5 / (w * amp.L_in);  // |AD| for a pure quadrature gain, to first order
    const auto fb = feedback_resistance(cd(0.0, -x), m.f0(), amp.L_in);
    CHECK(fb.R_D / m.R() == approx(124.58).epsilon(5e-4));
    const double g = 1e-5 / m.R();
    CHECK(g == approx(124.58090936015006).epsilon(1e-12));
    CHECK(m.Q() / (1.0 + g) == approx(7007.434525547765).epsilon(1e-12));
  }
  SUBCASE("Q'(1+g) = Q") {
    for (double dc : {1e-4, 1e-3, 5e-3, 2e-2, 0.1}) {
      const auto clm = close_loop(m, amp, LoopFilter{dc, 200.0});
      CHECK(std::abs(clm.Q_prime * (1.0 + clm.g) / m.Q() - 1.0) < 1e-12);
      CHECK(clm.linewidth() == approx(m.f0() * (1.0 + clm.g) / m.Q()).epsilon(1e-12));
    }
  }
  SUBCASE("R_D increases with dc_gain") {
    double prev = -1.0;
    for (int i = 0; i <= 200; ++i) {
      const double dc = 1e-6 * std::pow(10.0, 4.0 * i / 200.0);
      const auto clm = close_loop(m, amp, LoopFilter{dc, 200.0});
      CHECK(clm.R_D > prev);
      prev = clm.R_D;
    }
  }
  SUBCASE("anti-damping") {
    const AmplifierModel inverted{-1.0, 1.74e-6, 6.6e-26, 0.0};
    CHECK_THROWS_AS(close_loop(m, inverted, LoopFilter{1e-3, 200.0}), AntiDampingError);
  }
  SUBCASE("small-gain flag") {
    CHECK(close_loop(m, amp, LoopFilter{1e-3, 200.0}).small_gain_regime);
    CHECK_FALSE(close_loop(m, amp, LoopFilter{0.2, 200.0}).small_gain_regime);
    // f_c near the mode: phase -45 degrees, far from quadrature.
    CHECK_FALSE(close_loop(m, amp, LoopFilter{1e-3, 914.0}).small_gain_regime);
  }
  SUBCASE("measured g1 range is reachable") {
    const NormalMode m1 = auriga_modes()[0];
    const double lo = gain_for_target(m1, amp, 200.0, 190.0);
    const double hi = gain_for_target(m1, amp, 200.0, 2000.0);
    CHECK(lo > 0.0);
    CHECK(hi > lo);
    CHECK(close_loop(m1, amp, LoopFilter{hi, 200.0}).g == approx(2000.0).epsilon(1e-9));
  }
}

TEST_CASE("gain_for_target") {
  const NormalMode m = mode2();
  const AmplifierModel amp;
  CHECK(gain_for_target(m, amp, 200.0, 0.0) == 0.0);
  for (double g : {10.0, 1e3, 3e4}) {
    const double dc = gain_for_target(m, amp, 200.0, g);
    const auto clm = close_loop(m, amp, LoopFilter{dc, 200.0});
    CHECK(std::abs(clm.g / g - 1.0) < 1e-9);
  }
  const double dc = gain_for_target(m, amp, 200.0, 2.47e4);
  const auto clm = close_loop(m, amp, LoopFilter{dc, 200.0});
  CHECK(predicted_temperature_simple(4.2, clm.g) == approx(1.7003360187846646e-04).epsilon(1e-8));

  CHECK_THROWS_AS(gain_for_target(m, amp, 200.0, 1e6), RangeError);
  CHECK_THROWS_AS(gain_for_target(m, amp, 200.0, -1.0), ValidationError);
  CHECK_THROWS_AS(gain_for_target(m, AmplifierModel{0.0, 1.74e-6, 0.0, 0.0}, 200.0, 10.0),
                  RangeError);
}

TEST_CASE("with_damping") {
  const NormalMode m = mode2();
  const auto clm = with_damping(m, 1e4);
  CHECK(clm.g == 1e4);
  CHECK(clm.R_D == approx(1e4 * m.R()).epsilon(1e-15));
  CHECK(clm.Q_prime == approx(m.Q() / 10001.0).epsilon(1e-15));
  CHECK(clm.f_shift == 0.0);
  CHECK_THROWS_AS(with_damping(m, -1.0), AntiDampingError);
}
