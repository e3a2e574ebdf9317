#include <fftw3.h>

#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>

#include "colddamp/errors.hpp"
#include "colddamp/estimation.hpp"
#include "validate.hpp"

namespace colddamp {

namespace {

// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))) {
    std::lock_guard lock(planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(int(n), in_.get(), out_.get(), FFTW_ESTIMATE);
    if (plan_ == nullptr) throw NumericalError("FFTW planning failed");
  }
  ~RealFft() {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_.get(); }
  const fftw_complex* output() const { return out_.get(); }
  void execute() { fftw_execute(plan_); }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  fftw_plan plan_ = nullptr;
};

std::vector<double> make_window(Window w, std::size_t n) {
  std::vector<double> out(n, 1.0);
  if (w == Window::Hann) {
    // Periodic raised cosine.
    for (std::size_t i = 0; i < n; ++i) {
      out[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
    }
  }
  return out;
}

}  // namespace

Window window_from_name(const std::string& name) {
  if (name == "hann") return Window::Hann;
  if (name == "rectangular") return Window::Rectangular;
  throw ValidationError("window", "unknown window '" + name + "' (hann, rectangular)");
}

std::string window_name(Window w) {
  return w == Window::Hann ? "hann" : "rectangular";
}

std::size_t segment_length_for(double fs, double linewidth, double bins_per_linewidth) {
  detail::require_positive(fs, "fs");
  detail::require_positive(linewidth, "linewidth");
  const double n = std::ceil(bins_per_linewidth * fs / linewidth);
  return std::max<std::size_t>(256, std::size_t(n));
}

PsdEstimate welch_psd(std::span<const double> samples, double fs,
                      const WelchConfig& cfg) {
  detail::require_positive(fs, "fs");
  const std::size_t n = cfg.segment_length;
  if (n < 256) throw ValidationError("segment_length", "must be >= 256");
  if (!(cfg.overlap >= 0.0 && cfg.overlap < 1.0)) {
    throw ValidationError("overlap", "must lie in [0, 1)");
  }
  if (samples.size() < n) {
    throw LengthError("series has " + std::to_string(samples.size()) +
                      " samples, fewer than segment_length " + std::to_string(n));
  }
  const std::size_t hop =
      std::max<std::size_t>(1, std::size_t(std::llround(double(n) * (1.0 - cfg.overlap))));
  const std::size_t n_seg = 1 + (samples.size() - n) / hop;

  const std::vector<double> win = make_window(cfg.window, n);
  double win_power = 0.0;
  for (double w : win) win_power += w * w;

  RealFft fft(n);
  const std::size_t n_bins = n / 2 + 1;
  std::vector<double> acc(n_bins, 0.0);
  for (std::size_t s = 0; s < n_seg; ++s) {
    const double* seg = samples.data() + s * hop;
    double mean = 0.0;
    if (cfg.detrend) {
      for (std::size_t i = 0; i < n; ++i) mean += seg[i];
      mean /= double(n);
    }
    double* in = fft.input();
    for (std::size_t i = 0; i < n; ++i) in[i] = (seg[i] - mean) * win[i];
    fft.execute();
    const fftw_complex* out = fft.output();
    for (std::size_t k = 0; k < n_bins; ++k) {
      acc[k] += out[k][0] * out[k][0] + out[k][1] * out[k][1];
    }
  }

  PsdEstimate est;
  est.fs = fs;
  est.df = fs / double(n);
  est.n_averages = n_seg;
  est.window_corrected = true;
  est.frequencies.resize(n_bins);
  est.values.resize(n_bins);
  const double norm = 1.0 / (fs * win_power * double(n_seg));
  for (std::size_t k = 0; k < n_bins; ++k) {
    const bool edge = k == 0 || (n % 2 == 0 && k == n / 2);
    est.frequencies[k] = double(k) * est.df;
    est.values[k] = (edge ? 1.0 : 2.0) * acc[k] * norm;
  }
  return est;
}

PsdEstimate welch_psd(const TimeSeries& series, const WelchConfig& cfg,
                      const std::string& channel) {
  return welch_psd(series.channel(channel), series.fs, cfg);
}

PsdEstimate as_estimate(const AnalyticSpectrum& spec) {
  PsdEstimate est;
  est.frequencies = spec.grid.frequencies();
  est.values = spec.values;
  est.df = spec.grid.step();
  est.n_averages = 0;
  return est;
}

}  // namespace colddamp
