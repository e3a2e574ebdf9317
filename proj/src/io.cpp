#include "colddamp/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unistd.h>

#include "colddamp/errors.hpp"

namespace colddamp::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary series are written in native little-endian order");

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res =
      std::to_chars(buf.data(), buf.data() + buf.size(), v, std::chars_format::general, 17);
  return std::string(buf.data(), res.ptr);
}

namespace {

double parse_double(std::string_view s, const fs::path& path, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw IoError(path.string() + ":" + std::to_string(line) + ": not a number '" +
                  std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Rows of a CSV file with a header line; blank lines are skipped.
struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
};

Csv read_csv(const fs::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  Csv csv;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (csv.header.empty()) {
      for (auto c : cells) csv.header.emplace_back(c);
      csv.columns.resize(cells.size());
      continue;
    }
    if (cells.size() != csv.header.size()) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                    std::to_string(csv.header.size()) + " columns");
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      csv.columns[c].push_back(parse_double(cells[c], path, lineno));
    }
  }
  if (csv.header.empty()) throw IoError(path.string() + ": empty CSV file");
  return csv;
}

fs::path sidecar_of(const fs::path& path) {
  fs::path s = path;
  s += ".json";
  return s;
}

}  // namespace

void write_atomic(const fs::path& path, std::string_view content) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp-" + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), std::streamsize(content.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      throw IoError("write failed for " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ignore;
    fs::remove(tmp, ignore);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string spectrum_csv(std::span<const double> f, std::span<const double> psd) {
  if (f.size() != psd.size()) throw ValidationError("psd", "frequency/value length mismatch");
  std::string out = "frequency_hz,psd_a2_per_hz\n";
  out.reserve(out.size() + f.size() * 48);
  for (std::size_t i = 0; i < f.size(); ++i) {
    out += format_double(f[i]);
    out += ',';
    out += format_double(psd[i]);
    out += '\n';
  }
  return out;
}

void write_spectrum_csv(const fs::path& path, const AnalyticSpectrum& spec) {
  const auto f = spec.grid.frequencies();
  write_atomic(path, spectrum_csv(f, spec.values));
}

void write_spectrum_csv(const fs::path& path, const PsdEstimate& psd) {
  write_atomic(path, spectrum_csv(psd.frequencies, psd.values));
}

PsdEstimate read_spectrum_csv(const fs::path& path) {
  Csv csv = read_csv(path);
  if (csv.header != std::vector<std::string>{"frequency_hz", "psd_a2_per_hz"}) {
    throw IoError(path.string() + ": expected header frequency_hz,psd_a2_per_hz");
  }
  PsdEstimate p;
  p.frequencies = std::move(csv.columns[0]);
  p.values = std::move(csv.columns[1]);
  if (p.frequencies.size() >= 2) {
    p.df = (p.frequencies.back() - p.frequencies.front()) / double(p.frequencies.size() - 1);
    p.fs = 2.0 * p.frequencies.back();
  }
  p.n_averages = 0;
  return p;
}

std::string timeseries_csv(const TimeSeries& ts) {
  ts.validate();
  std::string out = "time_s";
  for (const Channel& c : ts.channels) {
    out += ',';
    out += c.name;
  }
  out += '\n';
  const std::size_t n = ts.size();
  out.reserve(out.size() + n * 25 * (ts.channels.size() + 1));
  for (std::size_t i = 0; i < n; ++i) {
    out += format_double(ts.t0 + double(i) / ts.fs);
    for (const Channel& c : ts.channels) {
      out += ',';
      out += format_double(c.values[i]);
    }
    out += '\n';
  }
  return out;
}

void write_timeseries_csv(const fs::path& path, const TimeSeries& ts) {
  write_atomic(path, timeseries_csv(ts));
}

TimeSeries read_timeseries_csv(const fs::path& path) {
  Csv csv = read_csv(path);
  if (csv.header.size() < 2 || csv.header[0] != "time_s") {
    throw IoError(path.string() + ": expected header time_s,<channels...>");
  }
  const auto& t = csv.columns[0];
  if (t.size() < 2) throw IoError(path.string() + ": fewer than two samples");
  TimeSeries ts;
  ts.t0 = t.front();
  // The time column carries rounding from t0 + i/fs; twelve significant
  // digits recover the rate that produced it.
  ts.fs = double(t.size() - 1) / (t.back() - t.front());
  if (std::isfinite(ts.fs)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", ts.fs);
    ts.fs = std::strtod(buf, nullptr);
  }
  if (!(ts.fs > 0.0) || !std::isfinite(ts.fs)) throw IoError(path.string() + ": time column is not increasing");
  for (std::size_t c = 1; c < csv.header.size(); ++c) {
    ts.channels.push_back({csv.header[c], std::move(csv.columns[c])});
  }
  ts.validate();
  return ts;
}

fs::path write_timeseries_binary(const fs::path& path, const TimeSeries& ts,
                                 const SeriesProvenance& prov) {
  ts.validate();
  std::string bytes;
  bytes.resize(ts.size() * ts.channels.size() * sizeof(double));
  char* dst = bytes.data();
  for (const Channel& c : ts.channels) {
    std::memcpy(dst, c.values.data(), c.values.size() * sizeof(double));
    dst += c.values.size() * sizeof(double);
  }
  json side;
  side["format"] = "f64le";
  side["layout"] = "channel-major";
  side["fs_hz"] = ts.fs;
  side["t0_s"] = ts.t0;
  side["n_samples"] = ts.size();
  side["channels"] = json::array();
  for (const Channel& c : ts.channels) side["channels"].push_back(c.name);
  side["seed"] = prov.seed;
  side["config_hash"] = prov.config_hash;
  side["data_file"] = path.filename().string();
  write_atomic(path, bytes);
  const fs::path sc = sidecar_of(path);
  write_atomic(sc, dump(side));
  return sc;
}

TimeSeries read_timeseries_binary(const fs::path& path) {
  fs::path data = path;
  fs::path side_path = sidecar_of(path);
  if (path.extension() == ".json") {
    side_path = path;
    data = path;
    data.replace_extension();
  }
  json side;
  try {
    side = json::parse(read_file(side_path));
  } catch (const json::parse_error& e) {
    throw IoError(side_path.string() + ": " + e.what());
  }
  TimeSeries ts;
  std::size_t n = 0;
  std::vector<std::string> names;
  try {
    if (side.at("format") != "f64le" || side.at("layout") != "channel-major") {
      throw IoError(side_path.string() + ": unsupported binary layout");
    }
    ts.fs = side.at("fs_hz").get<double>();
    ts.t0 = side.at("t0_s").get<double>();
    n = side.at("n_samples").get<std::size_t>();
    names = side.at("channels").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError(side_path.string() + ": " + e.what());
  }
  const std::string bytes = read_file(data);
  if (bytes.size() != n * names.size() * sizeof(double)) {
    throw IoError(data.string() + ": size does not match the sidecar");
  }
  const char* src = bytes.data();
  for (const auto& name : names) {
    Channel c{name, std::vector<double>(n)};
    std::memcpy(c.values.data(), src, n * sizeof(double));
    src += n * sizeof(double);
    ts.channels.push_back(std::move(c));
  }
  ts.validate();
  return ts;
}

TimeSeries read_timeseries(const fs::path& path) {
  if (path.extension() == ".csv") return read_timeseries_csv(path);
  return read_timeseries_binary(path);
}

namespace {
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
}  // namespace

json fit_to_json(const ModeFitResult& fit, std::span<const TemperatureEstimate> temperatures) {
  json j;
  j["schema"] = kFitSchema;
  j["modes"] = json::array();
  for (std::size_t k = 0; k < fit.modes.size(); ++k) {
    const FittedMode& m = fit.modes[k];
    json e{{"mode_index", m.index},
           {"l_henry", m.L},
           {"t_kelvin", m.T},
           {"t_kelvin_stderr", number_or_null(m.T_err)},
           {"f_hz", m.f},
           {"f_hz_stderr", number_or_null(m.f_err)},
           {"q_prime", m.Q_prime},
           {"q_prime_stderr", number_or_null(m.Q_prime_err)}};
    if (k < temperatures.size()) {
      e["t_integral_kelvin"] = temperatures[k].T_integral;
      e["t_consistent"] = temperatures[k].consistent;
    }
    j["modes"].push_back(std::move(e));
  }
  j["floor_a2_per_hz"] = fit.floor;
  j["floor_a2_per_hz_stderr"] = number_or_null(fit.floor_err);
  j["convergence"] = {{"iterations", fit.iterations},
                      {"final_residual", fit.final_residual},
                      {"n_bins", fit.n_bins},
                      {"f_lo_hz", fit.f_lo},
                      {"f_hi_hz", fit.f_hi}};
  return j;
}

json calibration_to_json(std::span<const CalibrationResult> results,
                         std::span<const int> mode_indices) {
  json j;
  j["schema"] = kFitSchema;
  j["calibration"] = json::array();
  for (std::size_t k = 0; k < results.size(); ++k) {
    const CalibrationResult& c = results[k];
    j["calibration"].push_back({{"mode_index", k < mode_indices.size() ? mode_indices[k] : int(k + 1)},
                                {"l_henry", c.L},
                                {"l_henry_stderr", c.L_err},
                                {"c_farad", c.C},
                                {"c_farad_stderr", c.C_err},
                                {"r_ohm", c.R},
                                {"r_ohm_stderr", c.R_err},
                                {"f0_hz", c.f0()},
                                {"q", c.Q()}});
  }
  return j;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace colddamp::io
