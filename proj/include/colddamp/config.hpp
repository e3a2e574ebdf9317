#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "colddamp/estimation.hpp"
#include "colddamp/feedback.hpp"
#include "colddamp/modes.hpp"
#include "colddamp/simulator.hpp"

namespace colddamp {

struct ModeSpec {
  double l_henry = 0.0;
  double f_hz = 0.0;
  double q = 0.0;
};

struct WelchSection {
  std::optional<std::size_t> segment_length;  // unset: 10 bins per narrowest linewidth
  double overlap = 0.5;
  Window window = Window::Hann;
};

struct SweepSection {
  std::vector<double> gains;  // g values of the reference mode
  int reference_mode = 1;     // 1-based
};

struct CalibrationSection {
  double v_cal_volt = 1e-9;
  int n_tones = 9;
  double span_linewidths = 6.0;
  double duration_s = 1.0;  // recorded per tone, after burn-in
};

struct PsdGridSection {
  std::optional<double> f_start_hz;
  std::optional<double> f_stop_hz;
  std::size_t n_points = 20001;
};

struct ExperimentConfig {
  double t0_kelvin = 4.2;
  std::vector<ModeSpec> modes;
  AmplifierModel amplifier;
  LoopFilter filter;
  SimConfig sim;
  WelchSection welch;
  SweepSection sweep;
  CalibrationSection calibration;
  PsdGridSection psd_grid;

  ModeSet mode_set() const;
  /// Checks every section; throws ValidationError naming the offending key.
  void validate() const;
};

/// The configuration the tool uses when none is given: bath at 4.2 K, the
/// three measured bar-transducer modes, 200 Hz loop filter.
ExperimentConfig default_config();

/// Applies defaults for missing keys and rejects unknown ones.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);

/// Fully expanded form with sorted keys; every real-valued field is written
/// as a double so `1` and `1.0` hash alike.
nlohmann::json canonical_json(const ExperimentConfig& cfg);
std::string canonical_text(const ExperimentConfig& cfg);
/// Hex SHA-256 of the canonical text.
std::string config_hash(const ExperimentConfig& cfg);

}  // namespace colddamp
