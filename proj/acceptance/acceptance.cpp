// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "colddamp/cli.hpp"
#include "colddamp/config.hpp"
#include "colddamp/estimation.hpp"
#include "colddamp/io.hpp"
#include "colddamp/spectra.hpp"

using namespace colddamp;
namespace fs = std::filesystem;

namespace {

constexpr double kB = PhysicalConstants::k_B;
constexpr double T0 = 4.2;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records one comparison; the first few failures are spelled out.
  void expect(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail.str("");
      pass = false;
    }
    if (!ok || pass) {
      if (detail.tellp() > 0) detail << "; ";
      detail << what;
    }
  }
};

std::string g3(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.4g", v);
  return b;
}

std::string pct(double rel) { return g3(100.0 * rel) + "%"; }

double rel_err(double got, double want) { return std::abs(got / want - 1.0); }

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() /
                       ("colddamp_acceptance_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// --- 1 -------------------------------------------------------------------------
// Integral of the closed-loop line over 200 linewidths either side of the
// peak against k_B T0 / (L (1+g)).
void closure(Outcome& o) {
  const ModeSet modes = auriga_modes();
  for (const NormalMode& m : modes) {
    for (double g : {0.0, 1e2, 1e4}) {
      const ClosedLoopMode clm = with_damping(m, g);
      const double lw = clm.linewidth();
      const double f_lo = std::max(m.f0() - 200 * lw, 1e-6 * m.f0());
      const double f_hi = m.f0() + 200 * lw;
      const FrequencyGrid grid(f_lo, f_hi, std::size_t((f_hi - f_lo) / lw * 20) + 1);
      const double P = integrate_psd(mode_current_psd(clm, T0, grid), f_lo, f_hi);
      const double expected = kB * T0 / (m.L() * (1.0 + g));
      const double e = rel_err(P, expected);
      o.expect(e <= 2e-3, "mode " + std::to_string(m.index()) + " g=" + g3(g) + " " + pct(e));
    }
  }
}

// --- 2 -------------------------------------------------------------------------
const char* kDeskConfig = R"({
  "bath": {"t0_kelvin": 4.2},
  "modes": [{"l_henry": 1.23e-5, "f_hz": 900.0, "q": 1.0e4}],
  "amplifier": {"s_in_a2_per_hz": 1e-28},
  "sim": {"fs_hz": 8000.0, "duration_s": 1200.0, "seed": 7},
  "sweep": {"gains": [0, 9, 99], "reference_mode": 1}
})";

struct SweepRun {
  int code;
  std::string err;
};

SweepRun run_sweep(const fs::path& dir) {
  io::write_atomic(dir / "config.json", kDeskConfig);
  std::ostringstream out, err;
  const int code = run_command(
      {"sweep", "--config", (dir / "config.json").string(), "--out", (dir / "run").string()},
      out, err);
  return {code, err.str()};
}

fs::path g_first_sweep;

void desk_law(Outcome& o) {
  // Every point must span at least 300 closed-loop relaxation times.
  const ExperimentConfig cfg = parse_config(kDeskConfig);
  const NormalMode m = cfg.mode_set()[0];
  for (double g : cfg.sweep.gains) {
    const double dc = gain_for_target(m, cfg.amplifier, cfg.filter.f_c, g);
    const ClosedLoopMode clm = close_loop(m, cfg.amplifier, LoopFilter{dc, cfg.filter.f_c});
    const double burn = 10.0 * clm.decay_time();
    const double spans = (cfg.sim.duration - burn) / clm.decay_time();
    if (spans < 300.0) o.expect(false, "g=" + g3(g) + " spans only " + g3(spans) + " tau");
  }

  g_first_sweep = scratch("sweep_a");
  const SweepRun r = run_sweep(g_first_sweep);
  if (r.code != 0) {
    o.expect(false, "sweep failed: " + r.err);
    return;
  }
  const std::string csv = io::read_file(g_first_sweep / "run" / "sweep.csv");
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  const double want[] = {4.2, 0.42, 0.042};
  int row = 0;
  while (std::getline(in, line) && row < 3) {
    double x, t_pred, t_est;
    int k;
    std::sscanf(line.c_str(), "%lf,%lf,%lf,%d", &x, &t_pred, &t_est, &k);
    const double e = rel_err(t_est, want[row]);
    o.expect(e <= 0.10, "T=" + g3(t_est) + " K vs " + g3(want[row]) + " (" + pct(e) + ")");
    ++row;
  }
  o.expect(row == 3, std::to_string(row) + " rows");

  // Operating points quoted for the full-scale system.
  const NormalMode m1 = auriga_modes()[0];
  const AmplifierModel amp;
  const double dc = gain_for_target(m1, amp, 200.0, 2000.0);
  const ClosedLoopMode c1 = close_loop(m1, amp, LoopFilter{dc, 200.0});
  const double T1 = predict_temperature(c1, amp, T0).T_simple;
  o.expect(rel_err(T1, 2.0e-3) <= 0.05, "T1(g=2000)=" + g3(T1 * 1e3) + " mK vs 2.0 mK");
  const double g_for_017 = T0 / 0.17e-3 - 1.0;
  o.expect(g_for_017 >= 2200 && g_for_017 <= 30000, "0.17 mK needs g=" + g3(g_for_017));
}

// --- 3 -------------------------------------------------------------------------
void fit_round_trip(Outcome& o) {
  const ModeSet modes = auriga_modes();
  const AmplifierModel amp;

  // Noiseless: each line damped to Q' = 3000 on a fine grid, plus the floor.
  {
    const FrequencyGrid grid(840.0, 980.0, 28001);
    AnalyticSpectrum total{grid, std::vector<double>(grid.size(), amp.S_In)};
    std::vector<ClosedLoopMode> lines;
    std::vector<double> L;
    for (const NormalMode& m : modes) {
      lines.push_back(with_damping(m, m.Q() / 3000.0 - 1.0));
      const auto s = mode_current_psd(lines.back(), T0, grid);
      for (std::size_t i = 0; i < grid.size(); ++i) total.values[i] += s.values[i];
      L.push_back(m.L());
    }
    const ModeFitResult fit = fit_modes(as_estimate(total), 3, L);
    double worst = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      worst = std::max({worst, rel_err(fit.modes[k].T, T0 / (1.0 + lines[k].g)),
                        rel_err(fit.modes[k].f, modes[k].f0()),
                        rel_err(fit.modes[k].Q_prime, lines[k].Q_prime)});
    }
    o.expect(worst <= 1e-6, "noiseless worst " + g3(worst));
  }

  // Simulated: the three modes on one loop at g1 = 200, where the lines stay
  // resolved.
  {
    const double dc = gain_for_target(modes[0], amp, 200.0, 200.0);
    const LoopFilter filt{dc, 200.0};
    const double fs = 8000.0;
    const DiscreteSystem d = discretize(build_state_space(modes, amp, filt, T0), fs);
    std::vector<ClosedLoopMode> clms;
    double narrowest = INFINITY;
    for (const NormalMode& m : modes) {
      clms.push_back(close_loop(m, amp, filt));
      narrowest = std::min(narrowest, clms.back().linewidth());
    }
    const std::size_t seg = segment_length_for(fs, narrowest, 4.0);
    SimConfig sim{fs, 0.0, 11, std::nullopt};
    const double burn = 10.0 * d.continuous.slowest_decay_time();
    sim.duration = burn + double(seg) * (0.5 * 400 + 1) / fs;
    const TimeSeries ts = simulate(d, sim);
    const PsdEstimate psd = welch_psd(ts, WelchConfig{seg, 0.5, Window::Hann, true});
    std::vector<double> L;
    for (const NormalMode& m : modes) L.push_back(m.L());
    const ModeFitResult fit = fit_modes(psd, 3, L);
    o.expect(psd.n_averages >= 400, std::to_string(psd.n_averages) + " averages");
    for (std::size_t k = 0; k < 3; ++k) {
      const double want = predicted_temperature_refined(modes[k], amp, T0, clms[k].g);
      const double e = rel_err(fit.modes[k].T, want);
      o.expect(e <= 0.05, "T" + std::to_string(k + 1) + "=" + g3(fit.modes[k].T) + " vs " +
                              g3(want) + " (" + pct(e) + ")");
    }
  }
}

// --- 4 -------------------------------------------------------------------------
void optimum(Outcome& o) {
  const NormalMode m = auriga_modes()[1];
  const AmplifierModel amp;  // S_In = 6.6e-26, S_Vn = 0
  const OptimumGain opt = optimum_gain(m, amp, T0);
  // Brute force over g in [1e-2, 1e8], written out from the noise budget.
  const double w = m.omega0(), L = m.L(), Q = m.Q();
  double best = INFINITY;
  for (int i = 0; i < 10000; ++i) {
    const double g = std::pow(10.0, -2.0 + 10.0 * i / 9999.0);
    const double T = T0 / (1 + g) + g * g / (1 + g) * (w * L / (4 * kB * Q)) * amp.S_In;
    best = std::min(best, T);
  }
  o.expect(rel_err(opt.T_min, best) <= 0.05,
           "T_min=" + g3(opt.T_min) + " K vs grid " + g3(best) + " (" +
               pct(rel_err(opt.T_min, best)) + ")");
  o.expect(rel_err(opt.T_min, 4.0e-5) <= 0.05, "vs 4.0e-5 K " + pct(rel_err(opt.T_min, 4.0e-5)));
}

// --- 5 -------------------------------------------------------------------------
void pole_placement(Outcome& o) {
  const ModeSet modes = auriga_modes();
  const AmplifierModel amp;
  const double fs = 8000.0;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const NormalMode& m = modes[k];
    for (double g : {9.0, 99.0}) {
      const double dc = gain_for_target(m, amp, 200.0, g);
      const LoopFilter filt{dc, 200.0};
      const ClosedLoopMode clm = close_loop(m, amp, filt);
      const DiscreteSystem d = discretize(build_state_space(modes, amp, filt, T0), fs);
      const double I0 = 1e4 * std::sqrt(kB * T0 / m.L());
      const SimConfig sim{fs, 4.0 * clm.decay_time(), 3, 0.0};
      const RingdownResult rd = ringdown_decay(ringdown(d, sim, k + 1, I0));
      const double rate = 1.0 / rd.tau;
      const double want = (1.0 + g) * m.omega0() / (2.0 * m.Q());
      const double e = rel_err(rate, want);
      o.expect(e <= 0.02, "mode " + std::to_string(k + 1) + " g=" + g3(g) + " " + pct(e));
    }
  }
}

// --- 6 -------------------------------------------------------------------------
void calibration(Outcome& o) {
  const ModeSet modes = auriga_modes();
  const double V = 1e-9;
  // Synthetic tones straight from the series impedance.
  for (const NormalMode& m : modes) {
    std::vector<ToneResponse> r;
    for (int i = 0; i < 9; ++i) {
      const double f = m.f0() + m.linewidth() * 6.0 * (i / 8.0 - 0.5);
      r.push_back({f, V / impedance(m, f)});
    }
    const CalibrationResult c = estimate_impedance(r, V);
    o.expect(rel_err(c.L, m.L()) <= 1e-3 && rel_err(c.C, m.C()) <= 1e-3 &&
                 rel_err(c.R, m.R()) <= 1e-2,
             "synthetic mode " + std::to_string(m.index()) + " R " + pct(rel_err(c.R, m.R())));
  }
  // Simulated tones through the open loop with the bath at T0.
  const AmplifierModel amp;
  const double fs = 8000.0;
  const DiscreteSystem d = discretize(build_state_space(modes, amp, LoopFilter{}, T0), fs);
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const NormalMode& m = modes[k];
    std::vector<ToneResponse> r;
    for (int i = 0; i < 9; ++i) {
      const double f = m.f0() + m.linewidth() * 6.0 * (i / 8.0 - 0.5);
      const SimConfig sim{fs, 1.0, std::uint64_t(100 + 9 * k + i), 0.0};
      const TimeSeries ts = inject_calibration(d, sim, V, f);
      r.push_back({f, tone_phasor(ts.channel(mode_channel_name(k + 1)), fs, f, ts.t0)});
    }
    const CalibrationResult c = estimate_impedance(r, V);
    const double eL = rel_err(c.L, m.L()), eC = rel_err(c.C, m.C()), eR = rel_err(c.R, m.R());
    o.expect(eL <= 1e-3 && eC <= 1e-3 && eR <= 1e-2,
             "simulated mode " + std::to_string(k + 1) + " L " + pct(eL) + " C " + pct(eC) +
                 " R " + pct(eR));
  }
}

// --- 7 -------------------------------------------------------------------------
void anchors(Outcome& o) {
  const double x = rms_displacement(MechanicalResonator{1.1e3, kTwoPi * 900.0}, T0);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.0e", x);
  o.expect(std::string(buf) == "4e-17", "x_rms=" + g3(x) + " m");
  const double n = occupation_number(1.7e-4, 914.0);
  o.expect(rel_err(n, 4000.0) <= 0.05, "n=" + g3(n));
}

// --- 8 -------------------------------------------------------------------------
std::map<std::string, std::string> artifacts(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "meta.json") continue;
    out[fs::relative(e.path(), root).generic_string()] = io::read_file(e.path());
  }
  return out;
}

void determinism(Outcome& o) {
  if (g_first_sweep.empty() || !fs::exists(g_first_sweep / "run" / "sweep.csv")) {
    g_first_sweep = scratch("sweep_a");
    const SweepRun r = run_sweep(g_first_sweep);
    if (r.code != 0) {
      o.expect(false, "first sweep failed: " + r.err);
      return;
    }
  }
  const fs::path second = scratch("sweep_b");
  const SweepRun r = run_sweep(second);
  if (r.code != 0) {
    o.expect(false, "second sweep failed: " + r.err);
    return;
  }
  const auto a = artifacts(g_first_sweep / "run");
  const auto b = artifacts(second / "run");
  o.expect(a.size() == b.size(), std::to_string(a.size()) + " artifacts");
  int differing = 0;
  for (const auto& [name, content] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != content) {
      o.expect(false, name + " differs");
      ++differing;
    }
  }
  if (differing == 0) o.expect(true, "byte-identical");
}

struct Criterion {
  int id;
  const char* title;
  double budget_s;
  std::function<void(Outcome&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "closure of the closed-loop line", 1.0, closure},
      {2, "T = T0/(1+g) at desk scale", 120.0, desk_law},
      {3, "mode fit round trip", 60.0, fit_round_trip},
      {4, "optimum gain", 1.0, optimum},
      {5, "closed-loop pole placement", 10.0, pole_placement},
      {6, "calibration round trip", 10.0, calibration},
      {7, "scalar anchors", 1.0, anchors},
      {8, "sweep determinism", 300.0, determinism},
  };
  int failures = 0;
  for (const Criterion& c : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.expect(false, std::string("exception: ") + e.what());
    }
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (dt > c.budget_s) o.expect(false, "runtime " + g3(dt) + " s over " + g3(c.budget_s) + " s");
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.title << ": "
              << o.detail.str() << " (" << g3(dt) << " s)" << std::endl;
  }
  fs::remove_all(fs::temp_directory_path() /
                 ("colddamp_acceptance_" + std::to_string(::getpid())));
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
