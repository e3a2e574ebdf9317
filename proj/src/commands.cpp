#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "colddamp/cli.hpp"
#include "colddamp/config.hpp"
#include "colddamp/estimation.hpp"
#include "colddamp/io.hpp"
#include "colddamp/spectra.hpp"

namespace colddamp {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(const Error& e) {
  const std::string k = e.kind();
  if (k == "numerical" || k == "fit" || k == "peak_detection" || k == "conditioning" ||
      k == "length") {
    return 2;
  }
  return 1;
}

namespace {

constexpr const char* kRunSchema = "colddamp-run/1";
constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir = "out";
  int workers = 1;
  std::optional<std::uint64_t> seed;
  std::string series_path;
  std::string format = "csv";
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Per-point seeds: SplitMix64 of (base seed, point index).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

// Everything derived from the configuration alone.
struct Context {
  ExperimentConfig cfg;
  std::string hash;
  ModeSet modes;
  fs::path out;
  json record;  // run.json under construction
};

Context make_context(const Options& opt) {
  ExperimentConfig cfg = opt.config_path.empty() ? default_config() : load_config(opt.config_path);
  if (opt.seed) cfg.sim.seed = *opt.seed;
  cfg.validate();
  Context ctx{cfg, config_hash(cfg), cfg.mode_set(), fs::path(opt.out_dir), json::object()};
  ctx.record["schema"] = kRunSchema;
  ctx.record["command"] = opt.command;
  ctx.record["config_hash"] = ctx.hash;
  ctx.record["config"] = canonical_json(cfg);
  ctx.record["artifacts"] = json::array();
  return ctx;
}

std::vector<ClosedLoopMode> close_all(const ModeSet& modes, const AmplifierModel& amp,
                                      const LoopFilter& filter) {
  std::vector<ClosedLoopMode> out;
  for (const NormalMode& m : modes) out.push_back(close_loop(m, amp, filter));
  return out;
}

json predicted_json(const std::vector<ClosedLoopMode>& clms, const AmplifierModel& amp,
                    double T0) {
  json arr = json::array();
  for (const ClosedLoopMode& c : clms) {
    const TemperaturePrediction p = predict_temperature(c, amp, T0);
    arr.push_back({{"mode_index", c.mode.index()},
                   {"f_hz", c.mode.f0()},
                   {"g", c.g},
                   {"q_prime", c.Q_prime},
                   {"r_d_ohm", c.R_D},
                   {"f_shift", c.f_shift},
                   {"loop_gain_abs", std::abs(c.loop_gain)},
                   {"small_gain_regime", c.small_gain_regime},
                   {"t_simple_k", p.T_simple},
                   {"t_refined_k", p.T_refined}});
  }
  return arr;
}

void print_predictions(std::ostream& out, const std::vector<ClosedLoopMode>& clms,
                       const AmplifierModel& amp, double T0) {
  out << "mode      f_hz           g     q_prime   t_simple_k  t_refined_k\n";
  for (const ClosedLoopMode& c : clms) {
    const TemperaturePrediction p = predict_temperature(c, amp, T0);
    out << std::setw(4) << c.mode.index() << std::setw(10) << fmt(c.mode.f0(), 6)
        << std::setw(12) << fmt(c.g) << std::setw(12) << fmt(c.Q_prime) << std::setw(13)
        << fmt(p.T_simple) << std::setw(13) << fmt(p.T_refined) << "\n";
  }
}

void warn_degenerate(std::ostream& out, const ModeSet& modes,
                     const std::vector<ClosedLoopMode>& clms) {
  std::vector<double> qp;
  for (const auto& c : clms) qp.push_back(c.Q_prime);
  if (modes.near_degenerate(qp)) {
    out << "warning: closed-loop lines lie within 5 linewidths of each other\n";
  }
}

double narrowest_linewidth(const std::vector<ClosedLoopMode>& clms) {
  double lw = INFINITY;
  for (const auto& c : clms) lw = std::min(lw, c.linewidth());
  return lw;
}

WelchConfig welch_for(const ExperimentConfig& cfg, double fs, std::size_t n_samples,
                      double linewidth) {
  WelchConfig w;
  w.overlap = cfg.welch.overlap;
  w.window = cfg.welch.window;
  if (cfg.welch.segment_length) {
    w.segment_length = *cfg.welch.segment_length;
  } else {
    // Resolve the narrowest line, but keep at least a handful of averages.
    w.segment_length = segment_length_for(fs, linewidth);
    w.segment_length = std::min(w.segment_length, std::max<std::size_t>(256, n_samples / 4));
  }
  return w;
}

struct Analysis {
  PsdEstimate psd;
  ModeFitResult fit;
  std::vector<TemperatureEstimate> temperatures;
};

Analysis analyze_series(const ExperimentConfig& cfg, const TimeSeries& ts, double linewidth) {
  Analysis a;
  a.psd = welch_psd(ts, welch_for(cfg, ts.fs, ts.size(), linewidth));
  std::vector<double> L;
  for (const auto& m : cfg.modes) L.push_back(m.l_henry);
  a.fit = fit_modes(a.psd, cfg.modes.size(), L);
  for (std::size_t k = 0; k < a.fit.modes.size(); ++k) {
    a.temperatures.push_back(extract_temperature(a.fit, k + 1, L[k]));
  }
  return a;
}

json estimated_json(const Analysis& a) {
  json arr = json::array();
  for (std::size_t k = 0; k < a.fit.modes.size(); ++k) {
    const FittedMode& m = a.fit.modes[k];
    arr.push_back({{"mode_index", m.index},
                   {"t_kelvin", m.T},
                   {"t_kelvin_stderr", m.T_err},
                   {"f_hz", m.f},
                   {"q_prime", m.Q_prime},
                   {"t_consistent", a.temperatures[k].consistent}});
  }
  return arr;
}

void print_estimates(std::ostream& out, const Analysis& a) {
  out << "fit: " << a.fit.iterations << " iterations, " << a.psd.n_averages
      << " averages, floor " << fmt(a.fit.floor) << " A^2/Hz\n";
  out << "mode      f_hz     q_prime    t_kelvin      stderr\n";
  for (const FittedMode& m : a.fit.modes) {
    out << std::setw(4) << m.index << std::setw(10) << fmt(m.f, 6) << std::setw(12)
        << fmt(m.Q_prime) << std::setw(12) << fmt(m.T) << std::setw(12) << fmt(m.T_err)
        << "\n";
  }
  for (std::size_t k = 0; k < a.temperatures.size(); ++k) {
    if (!a.temperatures[k].consistent) {
      out << "warning: mode " << k + 1
          << " amplitude and integral temperatures differ by "
          << fmt(100 * a.temperatures[k].relative_discrepancy, 3) << "%\n";
    }
  }
}

void add_artifact(Context& ctx, const fs::path& relative) {
  ctx.record["artifacts"].push_back(relative.generic_string());
}

void finish(Context& ctx, const std::string& started, const std::vector<std::string>& args,
            const Options& opt, std::ostream& out) {
  io::write_atomic(ctx.out / "run.json", io::dump(ctx.record));
  json meta{{"command", opt.command},
            {"argv", args},
            {"started_utc", started},
            {"finished_utc", utc_now()},
            {"workers", opt.workers},
            {"version", kVersion},
            {"config_hash", ctx.hash}};
  io::write_atomic(ctx.out / "meta.json", io::dump(meta));
  out << "wrote " << (ctx.out / "run.json").string() << "\n";
}

// --- commands ------------------------------------------------------------------

void cmd_predict(Context& ctx, std::ostream& out) {
  const auto& cfg = ctx.cfg;
  const auto clms = close_all(ctx.modes, cfg.amplifier, cfg.filter);
  print_predictions(out, clms, cfg.amplifier, cfg.t0_kelvin);
  warn_degenerate(out, ctx.modes, clms);
  ctx.record["predicted"] = predicted_json(clms, cfg.amplifier, cfg.t0_kelvin);

  const double f_lo = cfg.psd_grid.f_start_hz.value_or(0.95 * ctx.modes[0].f0());
  const double f_hi = cfg.psd_grid.f_stop_hz.value_or(1.05 * ctx.modes.max_frequency());
  const FrequencyGrid grid(f_lo, f_hi, cfg.psd_grid.n_points);
  const auto spec = total_current_psd(ctx.modes, cfg.amplifier, cfg.filter, cfg.t0_kelvin, grid);
  io::write_spectrum_csv(ctx.out / "predicted_psd.csv", spec);
  add_artifact(ctx, "predicted_psd.csv");
}

void cmd_simulate(Context& ctx, const Options& opt, std::ostream& out) {
  const auto& cfg = ctx.cfg;
  const auto clms = close_all(ctx.modes, cfg.amplifier, cfg.filter);
  print_predictions(out, clms, cfg.amplifier, cfg.t0_kelvin);
  ctx.record["predicted"] = predicted_json(clms, cfg.amplifier, cfg.t0_kelvin);
  const auto dsys = discretize(
      build_state_space(ctx.modes, cfg.amplifier, cfg.filter, cfg.t0_kelvin), cfg.sim.fs);
  const TimeSeries ts = simulate(dsys, cfg.sim, true);
  if (opt.format == "binary") {
    io::write_timeseries_binary(ctx.out / "series.f64", ts, {cfg.sim.seed, ctx.hash});
    add_artifact(ctx, "series.f64");
    add_artifact(ctx, "series.f64.json");
  } else {
    io::write_timeseries_csv(ctx.out / "series.csv", ts);
    add_artifact(ctx, "series.csv");
  }
  ctx.record["series"] = {{"fs_hz", ts.fs},
                          {"t0_s", ts.t0},
                          {"n_samples", ts.size()},
                          {"seed", cfg.sim.seed}};
  out << "simulated " << ts.size() << " samples after " << fmt(ts.t0) << " s burn-in\n";
}

void cmd_analyze(Context& ctx, const Options& opt, std::ostream& out) {
  if (opt.series_path.empty()) throw ValidationError("--series", "analyze needs a series artifact");
  const auto& cfg = ctx.cfg;
  const auto clms = close_all(ctx.modes, cfg.amplifier, cfg.filter);
  ctx.record["predicted"] = predicted_json(clms, cfg.amplifier, cfg.t0_kelvin);
  const TimeSeries ts = io::read_timeseries(opt.series_path);
  const Analysis a = analyze_series(cfg, ts, narrowest_linewidth(clms));
  print_estimates(out, a);
  io::write_spectrum_csv(ctx.out / "measured_psd.csv", a.psd);
  io::write_atomic(ctx.out / "fit.json", io::dump(io::fit_to_json(a.fit, a.temperatures)));
  add_artifact(ctx, "measured_psd.csv");
  add_artifact(ctx, "fit.json");
  ctx.record["series"] = {{"path", fs::path(opt.series_path).filename().generic_string()},
                          {"fs_hz", ts.fs},
                          {"n_samples", ts.size()}};
  ctx.record["estimated"] = estimated_json(a);
}

struct SweepPoint {
  double g_reference = 0.0;
  double dc_gain = 0.0;
  std::uint64_t seed = 0;
  std::vector<ClosedLoopMode> clms;
  Analysis analysis;
};

SweepPoint run_sweep_point(const Context& ctx, std::size_t index) {
  const auto& cfg = ctx.cfg;
  SweepPoint p;
  p.g_reference = cfg.sweep.gains[index];
  const NormalMode& ref = ctx.modes[std::size_t(cfg.sweep.reference_mode - 1)];
  p.dc_gain = gain_for_target(ref, cfg.amplifier, cfg.filter.f_c, p.g_reference);
  const LoopFilter filter{p.dc_gain, cfg.filter.f_c};
  p.clms = close_all(ctx.modes, cfg.amplifier, filter);
  SimConfig sim = cfg.sim;
  p.seed = sim.seed = derive_seed(cfg.sim.seed, index);
  const auto dsys =
      discretize(build_state_space(ctx.modes, cfg.amplifier, filter, cfg.t0_kelvin), sim.fs);
  const TimeSeries ts = simulate(dsys, sim, false);
  p.analysis = analyze_series(cfg, ts, narrowest_linewidth(p.clms));
  return p;
}

void cmd_sweep(Context& ctx, const Options& opt, std::ostream& out) {
  const auto& cfg = ctx.cfg;
  const std::size_t n = cfg.sweep.gains.size();
  if (n == 0) throw ValidationError("sweep.gains", "needs at least one gain");
  std::vector<std::optional<SweepPoint>> points(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        points[i] = run_sweep_point(ctx, i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(std::size_t(opt.workers), 1, n);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::string csv = "one_over_1_plus_g,t_predicted_k,t_estimated_k,mode_index\n";
  json arr = json::array();
  out << "  g_ref  mode   1/(1+g)   t_predicted_k   t_estimated_k\n";
  for (std::size_t i = 0; i < n; ++i) {
    const SweepPoint& p = *points[i];
    char dir[32];
    std::snprintf(dir, sizeof dir, "points/point_%03zu", i);
    const fs::path rel(dir);
    io::write_spectrum_csv(ctx.out / rel / "psd.csv", p.analysis.psd);
    io::write_atomic(ctx.out / rel / "fit.json",
                     io::dump(io::fit_to_json(p.analysis.fit, p.analysis.temperatures)));
    add_artifact(ctx, rel / "psd.csv");
    add_artifact(ctx, rel / "fit.json");
    for (std::size_t k = 0; k < p.clms.size(); ++k) {
      const double x = 1.0 / (1.0 + p.clms[k].g);
      const double t_pred = predicted_temperature_simple(cfg.t0_kelvin, p.clms[k].g);
      const double t_est = p.analysis.fit.modes[k].T;
      csv += io::format_double(x) + "," + io::format_double(t_pred) + "," +
             io::format_double(t_est) + "," + std::to_string(k + 1) + "\n";
      out << std::setw(7) << fmt(p.g_reference) << std::setw(6) << k + 1 << std::setw(10)
          << fmt(x) << std::setw(16) << fmt(t_pred) << std::setw(16) << fmt(t_est) << "\n";
    }
    arr.push_back({{"g_reference", p.g_reference},
                   {"dc_gain", p.dc_gain},
                   {"seed", p.seed},
                   {"predicted", predicted_json(p.clms, cfg.amplifier, cfg.t0_kelvin)},
                   {"estimated", estimated_json(p.analysis)},
                   {"artifacts", {(rel / "psd.csv").generic_string(),
                                  (rel / "fit.json").generic_string()}}});
  }
  io::write_atomic(ctx.out / "sweep.csv", csv);
  add_artifact(ctx, "sweep.csv");
  ctx.record["points"] = std::move(arr);
}

void cmd_optimum(Context& ctx, std::ostream& out) {
  const auto& cfg = ctx.cfg;
  json arr = json::array();
  out << "mode      f_hz        g_opt      t_min_k   g_large_gain\n";
  for (const NormalMode& m : ctx.modes) {
    const OptimumGain o = optimum_gain(m, cfg.amplifier, cfg.t0_kelvin);
    out << std::setw(4) << m.index() << std::setw(10) << fmt(m.f0(), 6) << std::setw(13)
        << fmt(o.g_opt) << std::setw(13) << fmt(o.T_min) << std::setw(15)
        << fmt(o.g_large_gain_estimate) << "\n";
    arr.push_back({{"mode_index", m.index()},
                   {"g_opt", o.g_opt},
                   {"t_min_k", o.T_min},
                   {"g_large_gain_estimate", o.g_large_gain_estimate}});
  }
  ctx.record["optimum"] = std::move(arr);
}

void cmd_calibrate(Context& ctx, std::ostream& out) {
  const auto& cfg = ctx.cfg;
  const auto& cal = cfg.calibration;
  // The circuit is identified open loop, as the calibration coil sees it.
  const LoopFilter open{0.0, cfg.filter.f_c};
  const auto dsys = discretize(
      build_state_space(ctx.modes, cfg.amplifier, open, cfg.t0_kelvin), cfg.sim.fs);
  std::vector<CalibrationResult> results;
  std::vector<int> indices;
  std::uint64_t tone_index = 0;
  for (std::size_t k = 0; k < ctx.modes.size(); ++k) {
    const NormalMode& m = ctx.modes[k];
    std::vector<ToneResponse> tones;
    for (int i = 0; i < cal.n_tones; ++i) {
      const double f =
          m.f0() + m.linewidth() * cal.span_linewidths * (double(i) / (cal.n_tones - 1) - 0.5);
      SimConfig sim{cfg.sim.fs, cal.duration_s, derive_seed(cfg.sim.seed, tone_index++), 0.0};
      const TimeSeries ts = inject_calibration(dsys, sim, cal.v_cal_volt, f);
      tones.push_back({f, tone_phasor(ts.channel(mode_channel_name(k + 1)), ts.fs, f, ts.t0)});
    }
    results.push_back(estimate_impedance(tones, cal.v_cal_volt));
    indices.push_back(m.index());
  }
  out << "mode       l_henry       c_farad         r_ohm      f0_hz          q\n";
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    out << std::setw(4) << indices[k] << std::setw(14) << fmt(r.L, 6) << std::setw(14)
        << fmt(r.C, 6) << std::setw(14) << fmt(r.R, 6) << std::setw(11) << fmt(r.f0(), 6)
        << std::setw(11) << fmt(r.Q(), 5) << "\n";
  }
  const json j = io::calibration_to_json(results, indices);
  io::write_atomic(ctx.out / "calibration.json", io::dump(j));
  add_artifact(ctx, "calibration.json");
  ctx.record["calibration"] = j["calibration"];
}

json error_json(const std::string& kind, const std::string& message, int code,
                const std::string& field = {}) {
  json e{{"kind", kind}, {"message", message}, {"exit_code", code}};
  if (!field.empty()) e["field"] = field;
  return json{{"error", e}};
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options opt;
  CLI::App app{"Feedback cooling of resonator normal modes: predict, simulate, analyze."};
  app.require_subcommand(1);
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "Experiment configuration (JSON)");
    sub->add_option("--out", opt.out_dir, "Output directory")->capture_default_str();
    sub->add_option("--workers", opt.workers, "Concurrent sweep points")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    sub->add_option("--seed", opt.seed, "Override sim.seed");
  };
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {
      {"predict", "Per-mode temperature predictions and the analytic current PSD"},
      {"simulate", "Langevin simulation of the closed loop; writes a time series"},
      {"analyze", "Welch PSD and Lorentzian fit of a series artifact"},
      {"sweep", "Close the loop at each sweep gain, simulate and analyze"},
      {"optimum", "Noise-limited optimum gain and minimum temperature per mode"},
      {"calibrate", "Tone sweep through the calibration coil; fit L, C, R per mode"}};
  for (const Sub& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    common(sub);
    sub->callback([&opt, name = std::string(s.name)] { opt.command = name; });
    if (std::string(s.name) == "analyze") {
      sub->add_option("--series", opt.series_path, "Series artifact (.csv or binary .f64)")
          ->required();
    }
    if (std::string(s.name) == "simulate") {
      sub->add_option("--format", opt.format, "Series format")
          ->check(CLI::IsMember({"csv", "binary"}))
          ->capture_default_str();
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_json("usage", e.what(), 1).dump() << "\n";
    return 1;
  }

  const std::string started = utc_now();
  try {
    Context ctx = make_context(opt);
    if (opt.command == "predict") {
      cmd_predict(ctx, out);
    } else if (opt.command == "simulate") {
      cmd_simulate(ctx, opt, out);
    } else if (opt.command == "analyze") {
      cmd_analyze(ctx, opt, out);
    } else if (opt.command == "sweep") {
      cmd_sweep(ctx, opt, out);
    } else if (opt.command == "optimum") {
      cmd_optimum(ctx, out);
    } else if (opt.command == "calibrate") {
      cmd_calibrate(ctx, out);
    }
    finish(ctx, started, args, opt, out);
    return 0;
  } catch (const ValidationError& e) {
    const int code = exit_code_for(e);
    err << error_json(e.kind(), e.what(), code, e.field()).dump() << "\n";
    return code;
  } catch (const Error& e) {
    const int code = exit_code_for(e);
    err << error_json(e.kind(), e.what(), code).dump() << "\n";
    return code;
  } catch (const std::exception& e) {
    err << error_json("internal", e.what(), 2).dump() << "\n";
    return 2;
  }
}

}  // namespace colddamp
