#include "colddamp/config.hpp"

#include <openssl/evp.h>

#include <array>
#include <cmath>
#include <set>
#include <sstream>

#include "colddamp/errors.hpp"
#include "colddamp/io.hpp"

namespace colddamp {

using nlohmann::json;

namespace {

// Reads keys of one JSON object, remembering which were consumed so the rest
// can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_.empty() ? "config" : path_, "must be an object");
  }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  void number(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_number(*v, key_path(key));
  }
  void number(const std::string& key, std::optional<double>& out) {
    if (const json* v = find(key)) out = as_number(*v, key_path(key));
  }
  template <class Int>
  void integer(const std::string& key, Int& out) {
    if (const json* v = find(key)) out = as_integer<Int>(*v, key_path(key));
  }
  template <class Int>
  void integer(const std::string& key, std::optional<Int>& out) {
    if (const json* v = find(key)) out = as_integer<Int>(*v, key_path(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ValidationError(key_path(it.key()), "unknown key");
    }
  }

  static double as_number(const json& v, const std::string& where) {
    if (!v.is_number()) throw ValidationError(where, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ValidationError(where, "must be finite");
    return d;
  }

  template <class Int>
  static Int as_integer(const json& v, const std::string& where) {
    if (v.is_number_unsigned()) return Int(v.get<std::uint64_t>());
    if (v.is_number_integer()) {
      const auto i = v.get<std::int64_t>();
      if (i < 0 && std::is_unsigned_v<Int>) throw ValidationError(where, "must be >= 0");
      return Int(i);
    }
    if (v.is_number_float()) {
      const double d = v.get<double>();
      if (d == std::floor(d) && std::abs(d) < 9.0e15) {
        if (d < 0 && std::is_unsigned_v<Int>) throw ValidationError(where, "must be >= 0");
        return Int(d);
      }
    }
    throw ValidationError(where, "must be an integer");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& constraint) {
  if (!ok) throw ValidationError(field, constraint);
}

std::string hex(const unsigned char* p, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s += digits[p[i] >> 4];
    s += digits[p[i] & 15];
  }
  return s;
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.modes = {{1.66e-4, 865.0, 1.2e6}, {1.23e-5, 914.0, 0.88e6}, {8.12e-6, 953.0, 0.77e6}};
  return c;
}

ModeSet ExperimentConfig::mode_set() const {
  std::vector<NormalMode> ms;
  for (std::size_t k = 0; k < modes.size(); ++k) {
    ms.push_back(mode_from_measurement(modes[k].l_henry, modes[k].f_hz, modes[k].q, int(k + 1)));
  }
  return ModeSet(std::move(ms));
}

void ExperimentConfig::validate() const {
  require(t0_kelvin >= 0.0, "bath.t0_kelvin", "must be >= 0");
  require(!modes.empty(), "modes", "needs at least one mode");
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const std::string p = "modes[" + std::to_string(k) + "].";
    require(modes[k].l_henry > 0.0, p + "l_henry", "must be > 0");
    require(modes[k].f_hz > 0.0, p + "f_hz", "must be > 0");
    require(modes[k].q > 1.0, p + "q", "must be > 1");
    if (k > 0) require(modes[k].f_hz > modes[k - 1].f_hz, p + "f_hz", "modes must be ordered by increasing frequency");
  }
  require(std::isfinite(amplifier.A), "amplifier.a_gain", "must be finite");
  require(amplifier.L_in > 0.0, "amplifier.l_in_henry", "must be > 0");
  require(amplifier.S_In >= 0.0, "amplifier.s_in_a2_per_hz", "must be >= 0");
  require(amplifier.S_Vn >= 0.0, "amplifier.s_vn_v2_per_hz", "must be >= 0");
  require(filter.dc_gain >= 0.0, "filter.dc_gain", "must be >= 0");
  require(filter.f_c > 0.0, "filter.f_c_hz", "must be > 0");

  double f_max = 0.0;
  for (const auto& m : modes) f_max = std::max(f_max, m.f_hz);
  require(sim.fs > 0.0, "sim.fs_hz", "must be > 0");
  require(sim.fs >= 8.0 * f_max, "sim.fs_hz", "must be >= 8 x the highest mode frequency");
  require(sim.duration > 0.0, "sim.duration_s", "must be > 0");
  if (sim.burn_in) {
    require(*sim.burn_in >= 0.0, "sim.burn_in_s", "must be >= 0");
    require(sim.duration > *sim.burn_in, "sim.duration_s", "must exceed sim.burn_in_s");
  }
  if (welch.segment_length) require(*welch.segment_length >= 256, "welch.segment_length", "must be >= 256");
  require(welch.overlap >= 0.0 && welch.overlap < 1.0, "welch.overlap", "must lie in [0, 1)");
  for (std::size_t i = 0; i < sweep.gains.size(); ++i) {
    require(sweep.gains[i] >= 0.0, "sweep.gains[" + std::to_string(i) + "]", "must be >= 0");
  }
  require(sweep.reference_mode >= 1 && std::size_t(sweep.reference_mode) <= modes.size(),
          "sweep.reference_mode", "must name a configured mode (1-based)");
  require(calibration.v_cal_volt > 0.0, "calibration.v_cal_volt", "must be > 0");
  require(calibration.n_tones >= 5, "calibration.n_tones", "must be >= 5");
  require(calibration.span_linewidths >= 3.0, "calibration.span_linewidths", "must be >= 3");
  require(calibration.duration_s > 0.0, "calibration.duration_s", "must be > 0");
  if (psd_grid.f_start_hz) require(*psd_grid.f_start_hz > 0.0, "psd_grid.f_start_hz", "must be > 0");
  if (psd_grid.f_stop_hz) {
    const double lo = psd_grid.f_start_hz.value_or(0.0);
    require(*psd_grid.f_stop_hz > lo, "psd_grid.f_stop_hz", "must exceed f_start_hz");
  }
  require(psd_grid.n_points >= 2, "psd_grid.n_points", "must be >= 2");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c = default_config();
  Section root(j, "");

  if (const json* b = root.find("bath")) {
    Section s(*b, "bath");
    s.number("t0_kelvin", c.t0_kelvin);
    s.finish();
  }
  if (const json* m = root.find("modes")) {
    if (!m->is_array()) throw ValidationError("modes", "must be an array");
    c.modes.clear();
    for (std::size_t k = 0; k < m->size(); ++k) {
      const std::string p = "modes[" + std::to_string(k) + "]";
      Section s((*m)[k], p);
      ModeSpec spec;
      for (const char* key : {"l_henry", "f_hz", "q"}) {
        if (!s.find(key)) throw ValidationError(s.key_path(key), "is required");
      }
      s.number("l_henry", spec.l_henry);
      s.number("f_hz", spec.f_hz);
      s.number("q", spec.q);
      s.finish();
      c.modes.push_back(spec);
    }
  }
  if (const json* a = root.find("amplifier")) {
    Section s(*a, "amplifier");
    s.number("a_gain", c.amplifier.A);
    s.number("l_in_henry", c.amplifier.L_in);
    s.number("s_in_a2_per_hz", c.amplifier.S_In);
    s.number("s_vn_v2_per_hz", c.amplifier.S_Vn);
    s.finish();
  }
  if (const json* f = root.find("filter")) {
    Section s(*f, "filter");
    s.number("dc_gain", c.filter.dc_gain);
    s.number("f_c_hz", c.filter.f_c);
    s.finish();
  }
  if (const json* sm = root.find("sim")) {
    Section s(*sm, "sim");
    s.number("fs_hz", c.sim.fs);
    s.number("duration_s", c.sim.duration);
    s.number("burn_in_s", c.sim.burn_in);
    s.integer("seed", c.sim.seed);
    s.finish();
  }
  if (const json* w = root.find("welch")) {
    Section s(*w, "welch");
    s.integer("segment_length", c.welch.segment_length);
    s.number("overlap", c.welch.overlap);
    if (const json* win = s.find("window")) {
      if (!win->is_string()) throw ValidationError("welch.window", "must be a string");
      try {
        c.welch.window = window_from_name(win->get<std::string>());
      } catch (const ValidationError& e) {
        throw ValidationError("welch.window", e.what());
      }
    }
    s.finish();
  }
  if (const json* sw = root.find("sweep")) {
    Section s(*sw, "sweep");
    if (const json* g = s.find("gains")) {
      if (!g->is_array()) throw ValidationError("sweep.gains", "must be an array");
      for (std::size_t i = 0; i < g->size(); ++i) {
        c.sweep.gains.push_back(Section::as_number((*g)[i], "sweep.gains[" + std::to_string(i) + "]"));
      }
    }
    s.integer("reference_mode", c.sweep.reference_mode);
    s.finish();
  }
  if (const json* cal = root.find("calibration")) {
    Section s(*cal, "calibration");
    s.number("v_cal_volt", c.calibration.v_cal_volt);
    s.integer("n_tones", c.calibration.n_tones);
    s.number("span_linewidths", c.calibration.span_linewidths);
    s.number("duration_s", c.calibration.duration_s);
    s.finish();
  }
  if (const json* pg = root.find("psd_grid")) {
    Section s(*pg, "psd_grid");
    s.number("f_start_hz", c.psd_grid.f_start_hz);
    s.number("f_stop_hz", c.psd_grid.f_stop_hz);
    s.integer("n_points", c.psd_grid.n_points);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // Translate the byte offset into line and column.
    std::size_t line = 1, col = 1;
    const std::size_t end = std::min<std::size_t>(e.byte, text.size());
    for (std::size_t i = 0; i + 1 < end; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::ostringstream os;
    os << "JSON parse error at line " << line << ", column " << col << ": " << e.what();
    throw ValidationError("config", os.str());
  }
  return config_from_json(j);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config(io::read_file(path));
}

json canonical_json(const ExperimentConfig& c) {
  json j;
  j["bath"] = {{"t0_kelvin", c.t0_kelvin}};
  j["modes"] = json::array();
  for (const ModeSpec& m : c.modes) {
    j["modes"].push_back({{"l_henry", m.l_henry}, {"f_hz", m.f_hz}, {"q", m.q}});
  }
  j["amplifier"] = {{"a_gain", c.amplifier.A},
                    {"l_in_henry", c.amplifier.L_in},
                    {"s_in_a2_per_hz", c.amplifier.S_In},
                    {"s_vn_v2_per_hz", c.amplifier.S_Vn}};
  j["filter"] = {{"dc_gain", c.filter.dc_gain}, {"f_c_hz", c.filter.f_c}};
  j["sim"] = {{"fs_hz", c.sim.fs},
              {"duration_s", c.sim.duration},
              {"burn_in_s", c.sim.burn_in ? json(*c.sim.burn_in) : json(nullptr)},
              {"seed", c.sim.seed}};
  j["welch"] = {{"segment_length",
                 c.welch.segment_length ? json(*c.welch.segment_length) : json(nullptr)},
                {"overlap", c.welch.overlap},
                {"window", window_name(c.welch.window)}};
  json gains = json::array();
  for (double g : c.sweep.gains) gains.push_back(g);
  j["sweep"] = {{"gains", gains}, {"reference_mode", c.sweep.reference_mode}};
  j["calibration"] = {{"v_cal_volt", c.calibration.v_cal_volt},
                      {"n_tones", c.calibration.n_tones},
                      {"span_linewidths", c.calibration.span_linewidths},
                      {"duration_s", c.calibration.duration_s}};
  j["psd_grid"] = {
      {"f_start_hz", c.psd_grid.f_start_hz ? json(*c.psd_grid.f_start_hz) : json(nullptr)},
      {"f_stop_hz", c.psd_grid.f_stop_hz ? json(*c.psd_grid.f_stop_hz) : json(nullptr)},
      {"n_points", c.psd_grid.n_points}};
  return j;
}

std::string canonical_text(const ExperimentConfig& cfg) { return canonical_json(cfg).dump(); }

std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = canonical_text(cfg);
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 digest failed");
  }
  return hex(md.data(), len);
}

}  // namespace colddamp
