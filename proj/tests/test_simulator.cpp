#include <doctest.h>

#include <chrono>
#include <cmath>
#include <complex>
#include <numeric>
#include <vector>

#include "colddamp/errors.hpp"
#include "colddamp/estimation.hpp"
#include "colddamp/philox.hpp"
#include "colddamp/simulator.hpp"
#include "test_util.hpp"

using namespace colddamp;

namespace {
constexpr double kB = PhysicalConstants::k_B;

struct Setup {
  ModeSet modes;
  AmplifierModel amp;
  LoopFilter filter;
  double T0;
};

Setup single(double f, double Q, double g, double T0 = 4.2, double S_In = 0.0,
             double L = 1.23e-6) {
  ModeSet modes({mode_from_measurement(L, f, Q)});
  AmplifierModel amp;
  amp.S_In = S_In;
  const double dc = g == 0.0 ? 0.0 : gain_for_target(modes[0], amp, 200.0, g);
  return {modes, amp, LoopFilter{dc, 200.0}, T0};
}

DiscreteSystem system_of(const Setup& s, double fs) {
  return discretize(build_state_space(s.modes, s.amp, s.filter, s.T0), fs);
}

double mean_square(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / double(x.size());
}

// Closed-form poles of a series RLC branch.
std::complex<double> rlc_pole(const NormalMode& m) {
  const double a = m.R() / (2 * m.L());
  return {-a, std::sqrt(1.0 / (m.L() * m.C()) - a * a)};
}

std::complex<double> nearest(const Eigen::VectorXcd& ev, std::complex<double> z) {
  std::complex<double> best = ev[0];
  for (Eigen::Index i = 1; i < ev.size(); ++i) {
    if (std::abs(ev[i] - z) < std::abs(best - z)) best = ev[i];
  }
  return best;
}
}  // namespace

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using P = Philox4x32;
  CHECK(P::generate({0, 0, 0, 0}, {0, 0}) ==
        P::Counter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(P::generate({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                    {0xffffffff, 0xffffffff}) ==
        P::Counter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(P::generate({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                    {0xa4093822, 0x299f31d0}) ==
        P::Counter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("NormalStream moments and addressing") {
  const NormalStream s(12345, 0);
  std::vector<double> buf(7), all;
  for (std::uint64_t step = 0; step < 40000; ++step) {
    s.fill(step, buf);
    all.insert(all.end(), buf.begin(), buf.end());
  }
  const double n = double(all.size());
  const double mean = std::accumulate(all.begin(), all.end(), 0.0) / n;
  double m2 = 0, m4 = 0;
  for (double v : all) {
    m2 += (v - mean) * (v - mean);
    m4 += std::pow(v - mean, 4);
  }
  m2 /= n;
  m4 /= n;
  CHECK(std::abs(mean) < 5.0 / std::sqrt(n));
  CHECK(std::abs(m2 - 1.0) < 5.0 * std::sqrt(2.0 / n));
  CHECK(m4 / (m2 * m2) == approx(3.0).epsilon(0.05));

  std::vector<double> again(7);
  s.fill(123, again);
  CHECK(std::equal(again.begin(), again.end(), all.begin() + 123 * 7));
  std::vector<double> other(7);
  NormalStream(12345, 1).fill(123, other);
  CHECK(other != again);
  NormalStream(12346, 0).fill(123, other);
  CHECK(other != again);
}

TEST_CASE("build_state_space") {
  SUBCASE("open loop: poles of the bare branches") {
    ModeSet modes({mode_from_measurement(1.66e-4, 865.0, 1.2e3, 1),
                   mode_from_measurement(1.23e-5, 914.0, 8.8e2, 2),
                   mode_from_measurement(8.12e-6, 953.0, 7.7e2, 3)});
    const auto ss = build_state_space(modes, AmplifierModel{}, LoopFilter{0.0, 200.0}, 4.2);
    CHECK(ss.dim() == 7);
    const auto ev = ss.eigenvalues();
    for (const NormalMode& m : modes) {
      const auto p = rlc_pole(m);
      const auto e = nearest(ev, p);
      CHECK(std::abs(e - p) < 1e-9 * std::abs(p));
      CHECK(e.real() == approx(-m.omega0() / (2 * m.Q())).epsilon(1e-9));
    }
    CHECK(std::abs(nearest(ev, {-kTwoPi * 200.0, 0.0}) + kTwoPi * 200.0) < 1e-6);
    // Block structure: no coupling between branches without feedback.
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 3; ++k) {
        if (j == k) continue;
        CHECK(ss.drift(StateSpace::current_index(j), StateSpace::current_index(k)) == 0.0);
        CHECK(ss.drift(StateSpace::current_index(j), StateSpace::charge_index(k)) == 0.0);
      }
    }
  }
  SUBCASE("mode 2 at g = 125") {
    const ModeSet modes = auriga_modes();
    const AmplifierModel amp;
    const double dc = gain_for_target(modes[1], amp, 200.0, 125.0);
    const auto ss = build_state_space(ModeSet({modes[1]}), amp, LoopFilter{dc, 200.0}, 4.2);
    const auto e = nearest(ss.eigenvalues(), {0.0, modes[1].omega0()});
    CHECK(e.real() == approx(-126.0 * modes[1].omega0() / (2 * modes[1].Q())).epsilon(0.02));
  }
  SUBCASE("weak coupling matches close_loop per mode") {
    const ModeSet modes = auriga_modes();
    const AmplifierModel amp;
    const double dc = gain_for_target(modes[0], amp, 200.0, 100.0);
    const LoopFilter filt{dc, 200.0};
    for (const NormalMode& m : modes) {
      const auto clm = close_loop(m, amp, filt);
      REQUIRE(std::abs(clm.loop_gain) < 0.01);
      const double qp = clm.Q_prime;
      const double w = m.omega0() * (1 + clm.f_shift);
      const std::complex<double> expect(-m.omega0() / (2 * qp),
                                        w * std::sqrt(1 - 1 / (4 * qp * qp)));
      const auto alone = build_state_space(ModeSet({m}), amp, filt, 4.2);
      const auto e = nearest(alone.eigenvalues(), expect);
      CHECK(e.real() == approx(expect.real()).epsilon(1e-3));
      CHECK(e.imag() == approx(expect.imag()).epsilon(1e-3));

      // Sharing the loop with the other branches perturbs the damping by
      // about R_D / |Z_other|, here below 2%.
      const auto joint = build_state_space(modes, amp, filt, 4.2);
      const auto ej = nearest(joint.eigenvalues(), expect);
      CHECK(ej.real() == approx(expect.real()).epsilon(0.02));
      CHECK(ej.imag() == approx(expect.imag()).epsilon(1e-3));
    }
    // With a tenfold weaker loop the coupling drops below 0.1%.
    const LoopFilter weak{gain_for_target(modes[0], amp, 200.0, 10.0), 200.0};
    const auto joint = build_state_space(modes, amp, weak, 4.2);
    for (const NormalMode& m : modes) {
      const double qp = close_loop(m, amp, weak).Q_prime;
      const auto ej = nearest(joint.eigenvalues(), {0.0, m.omega0()});
      CHECK(ej.real() == approx(-m.omega0() / (2 * qp)).epsilon(1e-3));
    }
  }
  SUBCASE("dc loop gain above one is unstable") {
    // G = A dc_gain > 1 puts the filter pole in the right half plane.
    const Setup s = single(900.0, 1e3, 0.0);
    CHECK_THROWS_AS(build_state_space(s.modes, s.amp, LoopFilter{1.2, 200.0}, 4.2),
                    StabilityError);
  }
  SUBCASE("anti-damping loop is rejected") {
    const Setup s = single(900.0, 1e4, 0.0);
    AmplifierModel inverted = s.amp;
    inverted.A = -1.0;
    CHECK_THROWS_AS(build_state_space(s.modes, inverted, LoopFilter{1e-2, 200.0}, 4.2),
                    AntiDampingError);
  }
}

TEST_CASE("discretize") {
  const Setup s = single(900.0, 1e4, 0.0);
  const auto d = system_of(s, 8000.0);
  SUBCASE("pole magnitude of the open-loop branch") {
    const Eigen::VectorXcd ev = d.transition_physical().eigenvalues();
    const NormalMode& m = s.modes[0];
    const double expect = std::exp(-m.omega0() / (2 * m.Q()) / 8000.0);
    const auto z = nearest(ev, std::polar(expect, m.omega0() / 8000.0));
    CHECK(std::abs(z) == approx(expect).epsilon(1e-10));
  }
  SUBCASE("stationary equipartition") {
    const Eigen::MatrixXd P = stationary_covariance(d);
    const NormalMode& m = s.modes[0];
    CHECK(P(1, 1) * m.L() / kB == approx(4.2).epsilon(1e-3));
    CHECK(P(0, 0) / (m.C() * kB) == approx(4.2).epsilon(1e-3));
    CHECK(std::abs(P(0, 1)) < 1e-6 * std::sqrt(P(0, 0) * P(1, 1)));
  }
  SUBCASE("stationary temperature under feedback") {
    for (double g : {9.0, 99.0}) {
      const Setup sg = single(900.0, 1e4, g);
      const auto P = stationary_covariance(system_of(sg, 8000.0));
      CHECK(P(1, 1) * sg.modes[0].L() / kB == approx(4.2 / (1 + g)).epsilon(1e-2));
    }
  }
  SUBCASE("covariance is symmetric positive semidefinite") {
    const Eigen::MatrixXd Q = d.process_covariance_physical();
    CHECK((Q - Q.transpose()).norm() <= 1e-14 * Q.norm());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Q);
    CHECK(es.eigenvalues().minCoeff() >= -1e-14 * Q.trace());
  }
  SUBCASE("no noise, no covariance") {
    const Setup cold = single(900.0, 1e4, 9.0, 0.0, 0.0);
    const auto dc = system_of(cold, 8000.0);
    CHECK(dc.process_covariance.norm() == 0.0);
    CHECK(dc.measurement_variance == 0.0);
    CHECK(stationary_covariance(dc).norm() == 0.0);
  }
  SUBCASE("undersampled rate is rejected") {
    CHECK_THROWS_AS(system_of(s, 7000.0), ValidationError);
  }
}

TEST_CASE("simulate") {
  SUBCASE("zero state, zero input") {
    const auto d = system_of(single(900.0, 1e3, 9.0, 0.0, 0.0), 8000.0);
    const auto ts = simulate(d, SimConfig{8000.0, 1.0, 3, 0.0}, true);
    CHECK(ts.size() == 8000);
    for (const auto& ch : ts.channels) {
      for (double v : ch.values) CHECK(v == 0.0);
    }
  }
  SUBCASE("bit-identical for a fixed seed") {
    const auto d = system_of(single(900.0, 1e3, 9.0, 4.2, 6.6e-26), 8000.0);
    const SimConfig cfg{8000.0, 2.0, 77, std::nullopt};
    const auto a = simulate(d, cfg, true);
    const auto b = simulate(d, cfg, true);
    REQUIRE(a.channels.size() == 2);
    for (std::size_t c = 0; c < a.channels.size(); ++c) {
      CHECK(a.channels[c].name == b.channels[c].name);
      CHECK(a.channels[c].values == b.channels[c].values);
    }
    SimConfig other = cfg;
    other.seed = 78;
    CHECK(simulate(d, other).measured() != a.measured());
  }
  SUBCASE("burn-in default") {
    const auto d = system_of(single(900.0, 1e3, 0.0), 8000.0);
    const double tau = 2 * 1e3 / (kTwoPi * 900.0);
    CHECK(d.continuous.slowest_decay_time() == approx(tau).epsilon(1e-6));
    const auto ts = simulate(d, SimConfig{8000.0, 10 * tau + 1.0, 1, std::nullopt});
    CHECK(ts.size() == 8000);
    CHECK(ts.t0 == approx(10 * tau).epsilon(1e-3));
    CHECK_THROWS_AS(simulate(d, SimConfig{8000.0, 5 * tau, 1, std::nullopt}), ValidationError);
  }
  SUBCASE("equipartition at g = 0, 9, 99") {
    for (double g : {0.0, 9.0, 99.0}) {
      const Setup s = single(900.0, 1e3, g);
      const auto d = system_of(s, 7200.0);
      const double tau = 2 * (1e3 / (1 + g)) / (kTwoPi * 900.0);
      const double T_meas = 400 * 2 * 1e3 / (kTwoPi * 900.0);
      const auto ts = simulate(d, SimConfig{7200.0, T_meas, 2024, std::nullopt}, true);
      const double T = s.modes[0].L() * mean_square(ts.channel(mode_channel_name(1))) / kB;
      const double tol = 3 * std::sqrt(2 * tau / (T_meas - ts.t0));
      CHECK(std::abs(T / (4.2 / (1 + g)) - 1.0) < tol);
    }
  }
  SUBCASE("sample covariance matches the stationary solution") {
    ModeSet modes({mode_from_measurement(1.66e-4, 865.0, 1.2e4, 1),
                   mode_from_measurement(1.23e-5, 914.0, 8.8e3, 2),
                   mode_from_measurement(8.12e-6, 953.0, 7.7e3, 3)});
    AmplifierModel amp;
    const double dc = gain_for_target(modes[0], amp, 200.0, 20.0);
    const auto d = discretize(build_state_space(modes, amp, LoopFilter{dc, 200.0}, 4.2), 8000.0);
    const Eigen::MatrixXd P = stationary_covariance(d);
    const auto t0 = std::chrono::steady_clock::now();
    const auto ts = simulate(d, SimConfig{8000.0, 1500.0, 5, std::nullopt}, true);
    MESSAGE("7-state run, 12M steps: ",
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), " s");
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 3; ++k) {
        const auto& a = ts.channel(mode_channel_name(j + 1));
        const auto& b = ts.channel(mode_channel_name(k + 1));
        double s = 0.0;
        for (std::size_t n = 0; n < a.size(); ++n) s += a[n] * b[n];
        s /= double(a.size());
        const double pj = P(StateSpace::current_index(j), StateSpace::current_index(j));
        const double pk = P(StateSpace::current_index(k), StateSpace::current_index(k));
        const double pjk = P(StateSpace::current_index(j), StateSpace::current_index(k));
        CHECK(std::abs(s - pjk) < 0.05 * std::sqrt(pj * pk));
      }
    }
  }
  SUBCASE("joint three-mode run matches separate runs") {
    std::vector<NormalMode> ms{mode_from_measurement(1.66e-4, 865.0, 1.2e4, 1),
                               mode_from_measurement(1.23e-5, 914.0, 8.8e3, 2),
                               mode_from_measurement(8.12e-6, 953.0, 7.7e3, 3)};
    AmplifierModel amp;
    // g1 = 1 keeps |AD| < 0.01 on every mode (g2 ~ 9, g3 ~ 12).
    const LoopFilter filt{gain_for_target(ms[0], amp, 200.0, 1.0), 200.0};
    const double dur = 2000.0;
    const auto joint = simulate(
        discretize(build_state_space(ModeSet(ms), amp, filt, 4.2), 8000.0),
        SimConfig{8000.0, dur, 9, std::nullopt}, true);
    for (std::size_t k = 0; k < 3; ++k) {
      const NormalMode& m = ms[k];
      const auto clm = close_loop(m, amp, filt);
      REQUIRE(std::abs(clm.loop_gain) < 0.01);
      // The exact stationary variance of the mode simulated on its own.
      const auto P = stationary_covariance(
          discretize(build_state_space(ModeSet({m}), amp, filt, 4.2), 8000.0));
      const double Ta = m.L() * P(1, 1) / kB;
      const double Tj = m.L() * mean_square(joint.channel(mode_channel_name(k + 1))) / kB;
      const double tol = 3 * std::sqrt(2 * clm.decay_time() / (dur - joint.t0));
      INFO("mode ", k + 1, " joint ", Tj, " alone ", Ta, " tol ", tol);
      CHECK(Ta == approx(4.2 / (1 + clm.g)).epsilon(2e-3));
      CHECK(std::abs(Tj / Ta - 1.0) < tol);
    }
  }
}

TEST_CASE("ringdown") {
  SUBCASE("starts at I0 and decays at the open-loop rate") {
    const Setup s = single(900.0, 1e3, 0.0, 0.0);
    const auto d = system_of(s, 8000.0);
    const auto ts = ringdown(d, SimConfig{8000.0, 2.0, 0, std::nullopt}, 1, 1e-9);
    CHECK(ts.measured()[0] == approx(1e-9).epsilon(1e-15));
    CHECK(ts.t0 == 0.0);
    const auto fit = ringdown_decay(ts);
    CHECK(fit.tau == approx(2 * 1e3 / s.modes[0].omega0()).epsilon(0.01));
  }
  SUBCASE("g = 99 shortens the decay a hundredfold and shifts the carrier") {
    const Setup s = single(900.0, 1e4, 99.0, 0.0);
    const auto d = system_of(s, 8000.0);
    const auto clm = close_loop(s.modes[0], s.amp, s.filter);
    const auto ts = ringdown(d, SimConfig{8000.0, 0.5, 0, std::nullopt}, 1, 1e-9);
    const auto fit = ringdown_decay(ts);
    const double tau0 = 2 * 1e4 / s.modes[0].omega0();
    CHECK(fit.tau == approx(tau0 / 100).epsilon(0.02));
    CHECK(fit.Q_prime == approx(clm.Q_prime).epsilon(0.02));
    // Damped-oscillator frequency: resonance shift plus the small 1/(8Q'^2) pull.
    const double f_expect = s.modes[0].f0() * (1 + clm.f_shift) *
                            std::sqrt(1 - 1 / (4 * clm.Q_prime * clm.Q_prime));
    const double shift = f_expect - s.modes[0].f0();
    CHECK(std::abs(fit.f - f_expect) < 0.1 * std::abs(shift));
  }
  SUBCASE("mode index is 1-based") {
    const auto d = system_of(single(900.0, 1e3, 0.0, 0.0), 8000.0);
    CHECK_THROWS_AS(ringdown(d, SimConfig{8000.0, 1.0, 0, std::nullopt}, 0, 1e-9),
                    ValidationError);
    CHECK_THROWS_AS(ringdown(d, SimConfig{8000.0, 1.0, 0, std::nullopt}, 2, 1e-9),
                    ValidationError);
  }
}

TEST_CASE("inject_calibration") {
  const ModeSet auriga = auriga_modes();
  ModeSet modes({mode_from_measurement(auriga[1].L(), auriga[1].f0(), 2e3, 2)});
  const AmplifierModel amp{1.0, 1.74e-6, 0.0, 0.0};
  const auto d = discretize(build_state_space(modes, amp, LoopFilter{}, 0.0), 8000.0);
  const NormalMode& m = modes[0];
  const SimConfig cfg{8000.0, 0.0, 0, std::nullopt};
  auto phasor_at = [&](double f) {
    SimConfig c = cfg;
    c.duration = d.continuous.slowest_decay_time() * 10 + 2.0;
    const auto ts = inject_calibration(d, c, 1e-9, f);
    return tone_phasor(ts.channel(mode_channel_name(1)), ts.fs, f, ts.t0);
  };
  SUBCASE("on resonance") {
    const auto I = phasor_at(m.f0());
    CHECK(std::abs(I) == approx(1e-9 / m.R()).epsilon(5e-3));
    CHECK(std::abs(std::arg(I)) < 5e-3);
  }
  SUBCASE("ten linewidths off resonance") {
    const double f = m.f0() + 10 * m.linewidth();
    const auto I = phasor_at(f);
    const auto expect = 1e-9 / impedance(m, f);
    CHECK(std::abs(I - expect) < 5e-3 * std::abs(expect));
  }
  SUBCASE("zero amplitude") {
    SimConfig c = cfg;
    c.duration = d.continuous.slowest_decay_time() * 10 + 1.0;
    const auto ts = inject_calibration(d, c, 0.0, m.f0());
    for (double v : ts.measured()) CHECK(v == 0.0);
  }
}

TEST_CASE("inject_calibration starts in steady state") {
  const NormalMode m = mode_from_measurement(1.23e-5, 914.0, 1e5);
  const AmplifierModel amp{1.0, 1.74e-6, 0.0, 0.0};
  const auto d = discretize(build_state_space(ModeSet({m}), amp, LoopFilter{}, 0.0), 8000.0);
  // Decay time ~35 s; without burn-in the record is already stationary.
  const double f = m.f0() + 2 * m.linewidth();
  const auto ts = inject_calibration(d, SimConfig{8000.0, 0.5, 0, 0.0}, 1e-9, f);
  const auto expect = 1e-9 / impedance(m, f);
  const auto I = tone_phasor(ts.channel(mode_channel_name(1)), ts.fs, f, ts.t0);
  CHECK(std::abs(I - expect) < 1e-6 * std::abs(expect));
}
