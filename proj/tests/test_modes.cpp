#include <doctest.h>

#include <cmath>
#include <random>

#include "colddamp/errors.hpp"
#include "colddamp/modes.hpp"
#include "test_util.hpp"

using namespace colddamp;

TEST_CASE("mode_from_measurement derives R and C") {
  // Expected values: R = 2 pi f L / Q, C = 1 / ((2 pi f)^2 L), evaluated offline.
  const NormalMode m1 = mode_from_measurement(1.66e-4, 865.0, 1.2e6);
  CHECK(m1.R() == approx(7.518354818815974e-07).epsilon(1e-12));
  CHECK(m1.C() == approx(2.0393884732488931e-04).epsilon(1e-12));

  const NormalMode unit = mode_from_measurement(1.0, 1.0 / kTwoPi, 1.0 + 1e-12);
  CHECK(unit.R() == approx(1.0).epsilon(1e-11));
  CHECK(unit.C() == approx(1.0).epsilon(1e-12));

  const NormalMode m3 = mode_from_measurement(8.12e-6, 953.0, 0.77e6);
  CHECK(m3.R() == approx(6.314486993982627e-08).epsilon(1e-12));
}

TEST_CASE("mode_from_measurement round-trips f and Q") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> logL(-7.0, -2.0), f(10.0, 1e4), logQ(0.1, 7.0);
  for (int i = 0; i < 200; ++i) {
    const double L = std::pow(10.0, logL(rng));
    const double fr = f(rng);
    const double Q = std::pow(10.0, logQ(rng));
    const NormalMode m = mode_from_measurement(L, fr, Q);
    CHECK(std::abs(m.f0() / fr - 1.0) < 1e-12);
    CHECK(std::abs(m.Q() / Q - 1.0) < 1e-12);
  }
}

TEST_CASE("mode_from_measurement rejects bad input, naming the field") {
  auto field_of = [](auto fn) {
    try {
      fn();
    } catch (const ValidationError& e) {
      return e.field();
    }
    return std::string("none");
  };
  CHECK(field_of([] { mode_from_measurement(0.0, 900.0, 1e4); }) == "L");
  CHECK(field_of([] { mode_from_measurement(1e-5, -1.0, 1e4); }) == "f");
  CHECK(field_of([] { mode_from_measurement(1e-5, 900.0, 0.5); }) == "Q");
  CHECK(field_of([] { mode_from_measurement(1e-5, NAN, 1e4); }) == "f");
  CHECK(field_of([] { mode_from_measurement(INFINITY, 900.0, 1e4); }) == "L");
}

TEST_CASE("impedance") {
  const NormalMode m = mode_from_measurement(1.66e-4, 865.0, 1.2e6);
  SUBCASE("real at resonance") {
    const auto z = impedance(m, m.f0());
    CHECK(z.real() == approx(m.R()).epsilon(1e-14));
    CHECK(std::abs(z.imag()) < 1e-12 * m.omega0() * m.L());
  }
  SUBCASE("detuned by 1 Hz") {
    // Direct evaluation 2.0848131e-3; small-detuning estimate 2 L dw = 2.0860e-3.
    const auto z = impedance(m, 866.0);
    CHECK(z.imag() == approx(2.0848131238762058e-03).epsilon(1e-9));
    CHECK(z.imag() == approx(2.0 * m.L() * kTwoPi * 1.0).epsilon(2e-3));
  }
  SUBCASE("lossless branch at twice the resonance") {
    const double w0 = 1.0 / std::sqrt(2e-3 * 5e-4);
    const auto z = series_rlc_impedance(0.0, 2e-3, 5e-4, 2.0 * w0 / kTwoPi);
    CHECK(z.real() == 0.0);
    CHECK(z.imag() == approx(1.5 * w0 * 2e-3).epsilon(1e-13));
  }
  SUBCASE("|Z| is smallest at the resonance on any grid") {
    const double f0 = m.f0();
    double best_f = 0.0, best = 1e300;
    for (int i = -500; i <= 500; ++i) {
      const double f = f0 * (1.0 + 1e-7 * i);
      const double a = std::abs(impedance(m, f));
      if (a < best) {
        best = a;
        best_f = f;
      }
    }
    CHECK(best_f == approx(f0).epsilon(1e-15));
  }
  CHECK_THROWS_AS(impedance(m, 0.0), ValidationError);
}

TEST_CASE("thermal_mean_square_current") {
  const NormalMode m1 = mode_from_measurement(1.66e-4, 865.0, 1.2e6);
  const NormalMode m2 = mode_from_measurement(1.23e-5, 914.0, 0.88e6);
  CHECK(thermal_mean_square_current(m1, 4.2) == approx(3.493208313253013e-19).epsilon(1e-12));
  CHECK(thermal_mean_square_current(m1, 0.0) == 0.0);
  CHECK(thermal_mean_square_current(m2, 1.7e-4) == approx(1.9082140650406505e-22).epsilon(1e-12));
  CHECK_THROWS_AS(thermal_mean_square_current(m1, -1.0), ValidationError);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.1, 10.0);
  for (int i = 0; i < 50; ++i) {
    const double L = 1e-5 * u(rng), T = u(rng), a = u(rng);
    const NormalMode m = mode_from_measurement(L, 900.0, 1e4);
    const NormalMode m_scaled = mode_from_measurement(a * L, 900.0, 1e4);
    CHECK(thermal_mean_square_current(m, a * T) ==
          approx(a * thermal_mean_square_current(m, T)).epsilon(1e-14));
    CHECK(thermal_mean_square_current(m_scaled, T) ==
          approx(thermal_mean_square_current(m, T) / a).epsilon(1e-14));
  }
}

TEST_CASE("rms_displacement") {
  const MechanicalResonator bar{1.1e3, kTwoPi * 900.0};
  CHECK(rms_displacement(bar, 4.2) == approx(4.060201302257443e-17).epsilon(1e-12));
  CHECK(rms_displacement(bar, 0.0) == 0.0);
  const MechanicalResonator mushroom{6.0, kTwoPi * 900.0};
  CHECK(rms_displacement(mushroom, 4.2) == approx(5.497538551682067e-16).epsilon(1e-12));
  CHECK_THROWS_AS(rms_displacement(bar, -1e-3), ValidationError);
  double prev = -1.0;
  for (double T = 0.0; T < 10.0; T += 0.5) {
    const double x = rms_displacement(bar, T);
    CHECK(x > prev);
    prev = x;
  }
}

TEST_CASE("occupation_number") {
  CHECK(occupation_number(1.7e-4, 914.0) == approx(3875.5192980889747).epsilon(1e-12));
  CHECK(occupation_number(2.0e-3, 865.0) == approx(48177.1457117079).epsilon(1e-12));
  const double f = 914.0;
  const double T = PhysicalConstants::hbar * kTwoPi * f / PhysicalConstants::k_B;
  CHECK(occupation_number(T, f) == approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(occupation_number(1.0, 0.0), ValidationError);
  CHECK(occupation_number(2.0, 900.0) > occupation_number(1.0, 900.0));
}

TEST_CASE("ModeSet ordering and degeneracy warning") {
  const ModeSet auriga = auriga_modes();
  REQUIRE(auriga.size() == 3);
  CHECK(auriga[0].f0() == approx(865.0));
  CHECK(auriga[2].f0() == approx(953.0));
  CHECK_FALSE(auriga.near_degenerate());

  CHECK_THROWS_AS(ModeSet({mode_from_measurement(1e-5, 914.0, 1e4),
                           mode_from_measurement(1e-5, 865.0, 1e4)}),
                  ValidationError);

  // 1 Hz apart with 0.5 Hz linewidths: warning, not an error.
  const ModeSet close({mode_from_measurement(1e-5, 100.0, 200.0, 1),
                       mode_from_measurement(1e-5, 101.0, 200.0, 2)});
  CHECK(close.near_degenerate());
  // Closed-loop broadening can bring resolved modes within five linewidths.
  const std::vector<double> q_loaded{10.0, 8.0, 7.0};
  CHECK(auriga.near_degenerate(q_loaded));
}
