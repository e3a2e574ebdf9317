#include <algorithm>
#include <sstream>

#include <pybind11/complex.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "colddamp/cli.hpp"
#include "colddamp/config.hpp"
#include "colddamp/estimation.hpp"
#include "colddamp/spectra.hpp"

namespace py = pybind11;
using namespace colddamp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::array_t<double> to_array(const std::vector<double>& v) {
  py::array_t<double> a(py::ssize_t(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

std::span<const double> view(const Array& a) {
  if (a.ndim() != 1) throw ValidationError("samples", "expected a one-dimensional array");
  return {a.data(), std::size_t(a.size())};
}

ModeSet as_mode_set(const std::vector<NormalMode>& modes) { return ModeSet(modes); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Feedback cooling of electromechanical normal modes.";

  auto base = py::register_exception<Error>(m, "ColdDampError", PyExc_RuntimeError);
  py::register_exception<ValidationError>(m, "ValidationError", base);
  py::register_exception<LoopSingularityError>(m, "LoopSingularityError", base);
  py::register_exception<AntiDampingError>(m, "AntiDampingError", base);
  py::register_exception<StabilityError>(m, "StabilityError", base);
  py::register_exception<RangeError>(m, "RangeError", base);
  py::register_exception<NumericalError>(m, "NumericalError", base);
  py::register_exception<FitError>(m, "FitError", base);
  py::register_exception<PeakDetectionError>(m, "PeakDetectionError", base);
  py::register_exception<ConditioningError>(m, "ConditioningError", base);
  py::register_exception<LengthError>(m, "LengthError", base);
  py::register_exception<IoError>(m, "IoError", base);

  m.attr("k_B") = PhysicalConstants::k_B;
  m.attr("hbar") = PhysicalConstants::hbar;

  // --- modes ---
  py::class_<NormalMode>(m, "NormalMode")
      .def(py::init<int, double, double, double>(), py::arg("index"), py::arg("L"), py::arg("C"),
           py::arg("R"))
      .def_property_readonly("index", &NormalMode::index)
      .def_property_readonly("L", &NormalMode::L)
      .def_property_readonly("C", &NormalMode::C)
      .def_property_readonly("R", &NormalMode::R)
      .def_property_readonly("omega0", &NormalMode::omega0)
      .def_property_readonly("f0", &NormalMode::f0)
      .def_property_readonly("Q", &NormalMode::Q)
      .def_property_readonly("linewidth", &NormalMode::linewidth)
      .def("__repr__", [](const NormalMode& n) {
        std::ostringstream os;
        os << "NormalMode(index=" << n.index() << ", f0=" << n.f0() << ", Q=" << n.Q()
           << ", L=" << n.L() << ")";
        return os.str();
      });
  m.def("mode_from_measurement", &mode_from_measurement, py::arg("L"), py::arg("f"),
        py::arg("Q"), py::arg("index") = 1);
  m.def("auriga_modes", [] {
    const ModeSet s = auriga_modes();
    return std::vector<NormalMode>(s.begin(), s.end());
  });
  m.def("impedance", &impedance, py::arg("mode"), py::arg("f"));
  m.def("rms_displacement",
        [](double M, double omega, double T) { return rms_displacement({M, omega}, T); },
        py::arg("M"), py::arg("omega"), py::arg("T"));
  m.def("occupation_number", &occupation_number, py::arg("T"), py::arg("f"));

  // --- feedback ---
  py::class_<AmplifierModel>(m, "AmplifierModel")
      .def(py::init([](double A, double L_in, double S_In, double S_Vn) {
             AmplifierModel a{A, L_in, S_In, S_Vn};
             a.validate();
             return a;
           }),
           py::arg("A") = 1.0, py::arg("L_in") = 1.74e-6, py::arg("S_In") = 6.6e-26,
           py::arg("S_Vn") = 0.0)
      .def_readwrite("A", &AmplifierModel::A)
      .def_readwrite("L_in", &AmplifierModel::L_in)
      .def_readwrite("S_In", &AmplifierModel::S_In)
      .def_readwrite("S_Vn", &AmplifierModel::S_Vn);
  py::class_<LoopFilter>(m, "LoopFilter")
      .def(py::init([](double dc_gain, double f_c) {
             LoopFilter f{dc_gain, f_c};
             f.validate();
             return f;
           }),
           py::arg("dc_gain") = 0.0, py::arg("f_c") = 200.0)
      .def_readwrite("dc_gain", &LoopFilter::dc_gain)
      .def_readwrite("f_c", &LoopFilter::f_c);
  py::class_<ClosedLoopMode>(m, "ClosedLoopMode")
      .def_readonly("mode", &ClosedLoopMode::mode)
      .def_readonly("loop_gain", &ClosedLoopMode::loop_gain)
      .def_readonly("R_D", &ClosedLoopMode::R_D)
      .def_readonly("X_D", &ClosedLoopMode::X_D)
      .def_readonly("g", &ClosedLoopMode::g)
      .def_readonly("Q_prime", &ClosedLoopMode::Q_prime)
      .def_readonly("f_shift", &ClosedLoopMode::f_shift)
      .def_readonly("small_gain_regime", &ClosedLoopMode::small_gain_regime)
      .def_property_readonly("linewidth", &ClosedLoopMode::linewidth)
      .def_property_readonly("decay_time", &ClosedLoopMode::decay_time);
  m.def("close_loop", &close_loop, py::arg("mode"), py::arg("amp"), py::arg("filter"));
  m.def("gain_for_target", &gain_for_target, py::arg("mode"), py::arg("amp"), py::arg("f_c"),
        py::arg("g_target"));
  m.def("with_damping", &with_damping, py::arg("mode"), py::arg("g"));

  // --- spectra ---
  py::class_<TemperaturePrediction>(m, "TemperaturePrediction")
      .def_readonly("mode_index", &TemperaturePrediction::mode_index)
      .def_readonly("g", &TemperaturePrediction::g)
      .def_readonly("T_simple", &TemperaturePrediction::T_simple)
      .def_readonly("T_refined", &TemperaturePrediction::T_refined)
      .def_readonly("mean_square_current", &TemperaturePrediction::mean_square_current);
  py::class_<OptimumGain>(m, "OptimumGain")
      .def_readonly("g_opt", &OptimumGain::g_opt)
      .def_readonly("T_min", &OptimumGain::T_min)
      .def_readonly("g_large_gain_estimate", &OptimumGain::g_large_gain_estimate);
  m.def("predict_temperature", &predict_temperature, py::arg("clm"), py::arg("amp"),
        py::arg("T0"));
  m.def("predicted_temperature_simple", &predicted_temperature_simple, py::arg("T0"),
        py::arg("g"));
  m.def("predicted_temperature_refined", &predicted_temperature_refined, py::arg("mode"),
        py::arg("amp"), py::arg("T0"), py::arg("g"));
  m.def("optimum_gain", &optimum_gain, py::arg("mode"), py::arg("amp"), py::arg("T0"));
  m.def("resonator_psd", py::vectorize(&resonator_psd), py::arg("T_mode"), py::arg("f_mode"),
        py::arg("q_prime"), py::arg("L"), py::arg("f"));
  m.def(
      "total_current_psd",
      [](const std::vector<NormalMode>& modes, const AmplifierModel& amp,
         const LoopFilter& filter, double T0, double f_start, double f_stop, std::size_t n) {
        const auto s =
            total_current_psd(as_mode_set(modes), amp, filter, T0, FrequencyGrid(f_start, f_stop, n));
        return py::make_tuple(to_array(s.grid.frequencies()), to_array(s.values));
      },
      py::arg("modes"), py::arg("amp"), py::arg("filter"), py::arg("T0"), py::arg("f_start"),
      py::arg("f_stop"), py::arg("n_points"), "Returns (frequencies, psd).");

  // --- simulator ---
  m.def(
      "simulate",
      [](const std::vector<NormalMode>& modes, const AmplifierModel& amp,
         const LoopFilter& filter, double T0, double fs, double duration, std::uint64_t seed,
         std::optional<double> burn_in, bool record_modes) {
        TimeSeries ts;
        {
          py::gil_scoped_release release;
          const auto d = discretize(build_state_space(as_mode_set(modes), amp, filter, T0), fs);
          ts = simulate(d, SimConfig{fs, duration, seed, burn_in}, record_modes);
        }
        py::dict channels;
        for (const Channel& c : ts.channels) channels[py::str(c.name)] = to_array(c.values);
        py::dict out;
        out["fs"] = ts.fs;
        out["t0"] = ts.t0;
        out["channels"] = channels;
        return out;
      },
      py::arg("modes"), py::arg("amp"), py::arg("filter"), py::arg("T0"), py::arg("fs"),
      py::arg("duration"), py::arg("seed") = 0, py::arg("burn_in") = py::none(),
      py::arg("record_modes") = false,
      "Langevin run; returns {'fs', 't0', 'channels': {name: array}}.");

  // --- estimation ---
  py::class_<PsdEstimate>(m, "PsdEstimate")
      .def_readonly("fs", &PsdEstimate::fs)
      .def_readonly("df", &PsdEstimate::df)
      .def_readonly("n_averages", &PsdEstimate::n_averages)
      .def_property_readonly("frequencies",
                             [](const PsdEstimate& p) { return to_array(p.frequencies); })
      .def_property_readonly("values", [](const PsdEstimate& p) { return to_array(p.values); });
  m.def(
      "welch_psd",
      [](const Array& samples, double fs, std::size_t segment_length, double overlap,
         const std::string& window, bool detrend) {
        return welch_psd(view(samples), fs,
                         WelchConfig{segment_length, overlap, window_from_name(window), detrend});
      },
      py::arg("samples"), py::arg("fs"), py::arg("segment_length"), py::arg("overlap") = 0.5,
      py::arg("window") = "hann", py::arg("detrend") = true);
  m.def("segment_length_for", &segment_length_for, py::arg("fs"), py::arg("linewidth"),
        py::arg("bins_per_linewidth") = 10.0);

  py::class_<FittedMode>(m, "FittedMode")
      .def_readonly("index", &FittedMode::index)
      .def_readonly("L", &FittedMode::L)
      .def_readonly("T", &FittedMode::T)
      .def_readonly("f", &FittedMode::f)
      .def_readonly("Q_prime", &FittedMode::Q_prime)
      .def_readonly("T_err", &FittedMode::T_err)
      .def_readonly("f_err", &FittedMode::f_err)
      .def_readonly("Q_prime_err", &FittedMode::Q_prime_err);
  py::class_<ModeFitResult>(m, "ModeFitResult")
      .def_readonly("modes", &ModeFitResult::modes)
      .def_readonly("floor", &ModeFitResult::floor)
      .def_readonly("floor_err", &ModeFitResult::floor_err)
      .def_readonly("iterations", &ModeFitResult::iterations)
      .def_readonly("final_residual", &ModeFitResult::final_residual);
  m.def(
      "fit_modes",
      [](const PsdEstimate& psd, std::size_t n_modes, const std::vector<double>& L) {
        return fit_modes(psd, n_modes, L);
      },
      py::arg("psd"), py::arg("n_modes"), py::arg("L_list"));
  py::class_<TemperatureEstimate>(m, "TemperatureEstimate")
      .def_readonly("T", &TemperatureEstimate::T)
      .def_readonly("T_err", &TemperatureEstimate::T_err)
      .def_readonly("T_integral", &TemperatureEstimate::T_integral)
      .def_readonly("relative_discrepancy", &TemperatureEstimate::relative_discrepancy)
      .def_readonly("consistent", &TemperatureEstimate::consistent);
  m.def("extract_temperature", &extract_temperature, py::arg("fit"), py::arg("mode_index"),
        py::arg("L"));

  py::class_<CalibrationResult>(m, "CalibrationResult")
      .def_readonly("L", &CalibrationResult::L)
      .def_readonly("C", &CalibrationResult::C)
      .def_readonly("R", &CalibrationResult::R)
      .def_property_readonly("f0", &CalibrationResult::f0)
      .def_property_readonly("Q", &CalibrationResult::Q);
  m.def(
      "estimate_impedance",
      [](const std::vector<double>& f, const std::vector<std::complex<double>>& current,
         double V_cal) {
        if (f.size() != current.size()) {
          throw ValidationError("current", "one phasor per frequency");
        }
        std::vector<ToneResponse> r;
        for (std::size_t i = 0; i < f.size(); ++i) r.push_back({f[i], current[i]});
        return estimate_impedance(r, V_cal);
      },
      py::arg("f"), py::arg("current"), py::arg("V_cal"));
  py::class_<RingdownResult>(m, "RingdownResult")
      .def_readonly("Q_prime", &RingdownResult::Q_prime)
      .def_readonly("f", &RingdownResult::f)
      .def_readonly("tau", &RingdownResult::tau);
  m.def(
      "ringdown_decay",
      [](const Array& samples, double fs) { return ringdown_decay(view(samples), fs); },
      py::arg("samples"), py::arg("fs"));

  // --- configuration and command line ---
  m.def("config_hash", [](const std::string& path) { return config_hash(load_config(path)); },
        py::arg("path"));
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = run_command(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one command; returns (exit_code, stdout, stderr).");
}
