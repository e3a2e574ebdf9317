#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "colddamp/estimation.hpp"
#include "colddamp/simulator.hpp"
#include "colddamp/spectra.hpp"

namespace colddamp::io {

namespace fs = std::filesystem;

/// 17 significant digits, enough to round-trip any double.
std::string format_double(double v);

/// Writes `content` to a sibling temporary and renames it over `path`, so
/// readers never observe a partial file.
void write_atomic(const fs::path& path, std::string_view content);

std::string read_file(const fs::path& path);

// --- spectra -----------------------------------------------------------------

std::string spectrum_csv(std::span<const double> f, std::span<const double> psd);
void write_spectrum_csv(const fs::path& path, const AnalyticSpectrum& spec);
void write_spectrum_csv(const fs::path& path, const PsdEstimate& psd);
PsdEstimate read_spectrum_csv(const fs::path& path);

// --- time series -------------------------------------------------------------

/// Extra fields stored with a binary series.
struct SeriesProvenance {
  std::uint64_t seed = 0;
  std::string config_hash;
};

std::string timeseries_csv(const TimeSeries& ts);
void write_timeseries_csv(const fs::path& path, const TimeSeries& ts);
TimeSeries read_timeseries_csv(const fs::path& path);

/// Raw little-endian float64, channel after channel, plus a JSON sidecar at
/// `path` with ".json" appended. Returns the sidecar path.
fs::path write_timeseries_binary(const fs::path& path, const TimeSeries& ts,
                                 const SeriesProvenance& prov);
TimeSeries read_timeseries_binary(const fs::path& path);

/// Dispatches on the extension: ".csv" or a binary file with its sidecar
/// (either path may be given).
TimeSeries read_timeseries(const fs::path& path);

// --- fit records -------------------------------------------------------------

inline constexpr const char* kFitSchema = "colddamp-fit/1";

nlohmann::json fit_to_json(const ModeFitResult& fit,
                           std::span<const TemperatureEstimate> temperatures);
nlohmann::json calibration_to_json(std::span<const CalibrationResult> results,
                                   std::span<const int> mode_indices);

/// Pretty JSON text with a trailing newline; key order is sorted.
std::string dump(const nlohmann::json& j);

}  // namespace colddamp::io
