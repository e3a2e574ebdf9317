#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "colddamp/cli.hpp"
#include "colddamp/io.hpp"
#include "test_util.hpp"

using namespace colddamp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  const int code = run_command(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() /
                       ("colddamp_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  io::write_atomic(dir / "config.json", text);
  return dir / "config.json";
}

// One mode, short decay time: every command finishes in well under a second.
const char* kSmall = R"({
  "modes": [{"l_henry": 1.23e-6, "f_hz": 900.0, "q": 1000.0}],
  "amplifier": {"s_in_a2_per_hz": 1e-28},
  "sim": {"fs_hz": 8000.0, "duration_s": 120.0, "seed": 5},
  "sweep": {"gains": [0, 9, 99]}
})";

}  // namespace

TEST_CASE("predict with the loop open gives the bath temperature") {
  const fs::path dir = scratch("predict_open");
  const Run r = run({"predict", "--config", write_config(dir, kSmall).string(), "--out",
                     (dir / "out").string()});
  REQUIRE(r.code == 0);
  const json j = json::parse(io::read_file(dir / "out" / "run.json"));
  CHECK(j["predicted"][0]["t_simple_k"].get<double>() == 4.2);
  CHECK(j["predicted"][0]["t_refined_k"].get<double>() == approx(4.2).epsilon(1e-6));
  CHECK(fs::exists(dir / "out" / "predicted_psd.csv"));
  CHECK(fs::exists(dir / "out" / "meta.json"));
}

TEST_CASE("predict on the default three-mode set lists every line") {
  const fs::path dir = scratch("predict_default");
  const Run r = run({"predict", "--out", dir.string()});
  REQUIRE(r.code == 0);
  const json j = json::parse(io::read_file(dir / "run.json"));
  REQUIRE(j["predicted"].size() == 3);
  CHECK(j["predicted"][0]["f_hz"].get<double>() == approx(865.0).epsilon(1e-12));
  CHECK(j["predicted"][1]["f_hz"].get<double>() == approx(914.0).epsilon(1e-12));
  CHECK(j["predicted"][2]["f_hz"].get<double>() == approx(953.0).epsilon(1e-12));
  CHECK(r.out.find("953") != std::string::npos);
  const PsdEstimate psd = io::read_spectrum_csv(dir / "predicted_psd.csv");
  CHECK(psd.frequencies.size() == 20001);
}

TEST_CASE("run.json is free of timestamps and identical across runs") {
  const fs::path dir = scratch("predict_repeat");
  const std::string cfg = write_config(dir, kSmall).string();
  REQUIRE(run({"predict", "--config", cfg, "--out", (dir / "a").string()}).code == 0);
  REQUIRE(run({"predict", "--config", cfg, "--out", (dir / "b").string()}).code == 0);
  CHECK(io::read_file(dir / "a" / "run.json") == io::read_file(dir / "b" / "run.json"));
  const json meta = json::parse(io::read_file(dir / "a" / "meta.json"));
  CHECK(meta.contains("started_utc"));
}

TEST_CASE("sweep writes one row per mode and gain and is reproducible") {
  const fs::path dir = scratch("sweep");
  const std::string cfg = write_config(dir, kSmall).string();
  const Run a = run({"sweep", "--config", cfg, "--out", (dir / "a").string(), "--workers", "2"});
  REQUIRE_MESSAGE(a.code == 0, a.err);
  const Run b = run({"sweep", "--config", cfg, "--out", (dir / "b").string(), "--workers", "1"});
  REQUIRE(b.code == 0);
  const std::string csv = io::read_file(dir / "a" / "sweep.csv");
  CHECK(csv == io::read_file(dir / "b" / "sweep.csv"));
  CHECK(io::read_file(dir / "a" / "run.json") == io::read_file(dir / "b" / "run.json"));
  CHECK(csv.rfind("one_over_1_plus_g,t_predicted_k,t_estimated_k,mode_index\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  const json j = json::parse(io::read_file(dir / "a" / "run.json"));
  REQUIRE(j["points"].size() == 3);
  // Distinct derived seeds per point.
  CHECK(j["points"][0]["seed"] != j["points"][1]["seed"]);
  for (const auto& p : j["points"]) {
    const double t_pred = p["predicted"][0]["t_simple_k"];
    const double t_est = p["estimated"][0]["t_kelvin"];
    const double t_err = p["estimated"][0]["t_kelvin_stderr"];
    CHECK(std::abs(t_est - t_pred) < 4.0 * t_err);
  }
  CHECK(fs::exists(dir / "a" / "points" / "point_002" / "fit.json"));

  // A different seed changes the estimates.
  REQUIRE(run({"sweep", "--config", cfg, "--out", (dir / "c").string(), "--seed", "6"}).code == 0);
  CHECK(io::read_file(dir / "c" / "sweep.csv") != csv);
}

TEST_CASE("simulate then analyze recovers the bath temperature") {
  const fs::path dir = scratch("sim_analyze");
  const std::string cfg = write_config(dir, kSmall).string();
  REQUIRE(run({"simulate", "--config", cfg, "--out", (dir / "sim").string(), "--format",
               "binary"})
              .code == 0);
  CHECK(fs::exists(dir / "sim" / "series.f64.json"));
  const Run r = run({"analyze", "--config", cfg, "--series",
                     (dir / "sim" / "series.f64").string(), "--out", (dir / "an").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json fit = json::parse(io::read_file(dir / "an" / "fit.json"));
  CHECK(fit["schema"] == io::kFitSchema);
  CHECK(fit["modes"][0]["t_kelvin"].get<double>() == approx(4.2).epsilon(0.1));
  CHECK(fs::exists(dir / "an" / "measured_psd.csv"));
}

TEST_CASE("calibrate recovers the configured circuit") {
  const fs::path dir = scratch("calibrate");
  const Run r = run({"calibrate", "--config", write_config(dir, kSmall).string(), "--out",
                     dir.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json j = json::parse(io::read_file(dir / "calibration.json"));
  CHECK(j["calibration"][0]["l_henry"].get<double>() == approx(1.23e-6).epsilon(1e-3));
  CHECK(j["calibration"][0]["f0_hz"].get<double>() == approx(900.0).epsilon(1e-4));
  CHECK(j["calibration"][0]["q"].get<double>() == approx(1000.0).epsilon(1e-2));
}

TEST_CASE("optimum reports one row per mode") {
  const fs::path dir = scratch("optimum");
  REQUIRE(run({"optimum", "--out", dir.string()}).code == 0);
  const json j = json::parse(io::read_file(dir / "run.json"));
  REQUIRE(j["optimum"].size() == 3);
  CHECK(j["optimum"][0]["g_opt"].get<double>() > 0.0);
}

TEST_CASE("errors are reported as JSON with the documented exit codes") {
  const fs::path dir = scratch("errors");
  SUBCASE("invalid field") {
    const Run r = run({"predict", "--config",
                       write_config(dir, R"({"modes":[{"l_henry":1e-5,"f_hz":900,"q":-1}]})")
                           .string(),
                       "--out", dir.string()});
    CHECK(r.code == 1);
    const json e = json::parse(r.err)["error"];
    CHECK(e["kind"] == "validation");
    CHECK(e["field"] == "modes[0].q");
    CHECK(e["exit_code"] == 1);
  }
  SUBCASE("missing config file") {
    const Run r = run({"predict", "--config", (dir / "nope.json").string()});
    CHECK(r.code == 1);
    CHECK(json::parse(r.err)["error"]["kind"] == "io");
  }
  SUBCASE("usage") {
    CHECK(run({}).code == 1);
    CHECK(run({"frobnicate"}).code == 1);
    CHECK(run({"analyze"}).code == 1);
    CHECK(run({"simulate", "--format", "xml"}).code == 1);
  }
  SUBCASE("series too short for the requested segment") {
    const std::string cfg = write_config(
        dir, R"({"modes":[{"l_henry":1.23e-5,"f_hz":900,"q":1000}],
                 "sim":{"duration_s":5, "burn_in_s": 0}, "welch":{"segment_length":1000000}})")
                                .string();
    REQUIRE(run({"simulate", "--config", cfg, "--out", (dir / "s").string()}).code == 0);
    const Run r = run({"analyze", "--config", cfg, "--series", (dir / "s" / "series.csv").string(),
                       "--out", (dir / "a").string()});
    CHECK(r.code == 2);
    CHECK(json::parse(r.err)["error"]["kind"] == "length");
  }
  SUBCASE("help") {
    const Run r = run({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("sweep") != std::string::npos);
  }
}

TEST_CASE("exit code classes") {
  CHECK(exit_code_for(ValidationError("x", "y")) == 1);
  CHECK(exit_code_for(AntiDampingError("x")) == 1);
  CHECK(exit_code_for(StabilityError("x")) == 1);
  CHECK(exit_code_for(FitError("x", 1.0)) == 2);
  CHECK(exit_code_for(PeakDetectionError("x")) == 2);
  CHECK(exit_code_for(LengthError("x")) == 2);
}
