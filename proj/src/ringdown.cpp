#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>

#include "colddamp/errors.hpp"
#include "colddamp/estimation.hpp"
#include "validate.hpp"

namespace colddamp {

namespace {

struct LineFit {
  double intercept;
  double slope;
  double slope_err;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  const double n = double(x.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  double ssr = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - intercept - slope * x[i];
    ssr += e * e;
  }
  const double err = x.size() > 2 ? std::sqrt(ssr / (n - 2.0) / sxx) : 0.0;
  return {intercept, slope, err};
}

// Carrier from positive-going zero crossings while the signal is strong.
double crossing_frequency(std::span<const double> x, double fs) {
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  std::size_t end = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(x[i]) > 0.1 * peak) end = i + 1;
  }
  double first = -1.0;
  double last = -1.0;
  std::size_t count = 0;
  for (std::size_t i = 1; i < end; ++i) {
    if (x[i - 1] < 0.0 && x[i] >= 0.0) {
      const double t = (double(i - 1) + x[i - 1] / (x[i - 1] - x[i])) / fs;
      if (first < 0.0) first = t;
      last = t;
      ++count;
    }
  }
  if (count < 3) throw FitError("ringdown: fewer than 3 carrier cycles resolved", 0.0);
  return double(count - 1) / (last - first);
}

// Boxcar length near `periods` carrier cycles that best cancels the 2f image.
std::size_t boxcar_length(double f, double fs, double periods) {
  const std::size_t centre = std::max<std::size_t>(4, std::size_t(periods * fs / f));
  std::size_t best = centre;
  double best_leak = 1e300;
  for (std::size_t n = centre / 2 + 1; n <= centre + centre / 2; ++n) {
    const double leak = std::abs(std::sin(std::numbers::pi * double(n) * 2.0 * f / fs)) / double(n);
    if (leak < best_leak) {
      best_leak = leak;
      best = n;
    }
  }
  return best;
}

std::vector<std::complex<double>> boxcar(const std::vector<std::complex<double>>& z,
                                         std::size_t n) {
  std::vector<std::complex<double>> out(z.size() >= n ? z.size() - n + 1 : 0);
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    acc += z[i];
    if (i >= n) acc -= z[i - n];
    if (i + 1 >= n) out[i + 1 - n] = acc / double(n);
  }
  return out;
}

}  // namespace

RingdownResult ringdown_decay(std::span<const double> x, double fs) {
  detail::require_positive(fs, "fs");
  if (x.size() < 64) throw LengthError("ringdown record shorter than 64 samples");
  const double f_c = crossing_frequency(x, fs);
  const double w_c = kTwoPi * f_c;

  // Quadrature demodulation, then two boxcars of ~4 carrier cycles.
  std::vector<std::complex<double>> z(x.size());
  for (std::size_t n = 0; n < x.size(); ++n) {
    const double t = double(n) / fs;
    z[n] = 2.0 * x[n] * std::polar(1.0, -w_c * t);
  }
  const std::size_t box = boxcar_length(f_c, fs, 4.0);
  const std::vector<std::complex<double>> env = boxcar(boxcar(z, box), box);
  if (env.size() < 16) throw LengthError("ringdown record too short for demodulation");
  const double delay = double(box - 1) / fs;  // centre of the two windows

  double peak = 0.0;
  for (const auto& v : env) peak = std::max(peak, std::abs(v));
  // Stop where the envelope sinks toward whatever level the tail settles at.
  std::vector<double> tail;
  for (std::size_t i = env.size() - env.size() / 10; i < env.size(); ++i) {
    tail.push_back(std::abs(env[i]));
  }
  std::nth_element(tail.begin(), tail.begin() + std::ptrdiff_t(tail.size() / 2), tail.end());
  const double tail_level = tail[tail.size() / 2];
  if (tail_level > 0.5 * peak) {
    throw FitError("ringdown: envelope is not decaying over the record", 0.0);
  }
  const double cutoff = std::max(1e-6 * peak, 3.0 * tail_level);
  std::vector<double> t;
  std::vector<double> log_amp;
  std::vector<double> phase;
  double unwrap = 0.0;
  double prev = std::arg(env.front());
  for (std::size_t i = 0; i < env.size(); ++i) {
    const double a = std::abs(env[i]);
    if (a < cutoff) break;
    const double ph = std::arg(env[i]);
    double d = ph - prev;
    d -= kTwoPi * std::round(d / kTwoPi);
    unwrap += d;
    prev = ph;
    t.push_back(double(i) / fs + delay);
    log_amp.push_back(std::log(a));
    phase.push_back(unwrap);
  }
  if (t.size() < 16) throw FitError("ringdown: envelope vanishes immediately", 0.0);

  const LineFit amp = fit_line(t, log_amp);
  const double span = t.back() - t.front();
  if (!(amp.slope < 0.0) || -1.0 / amp.slope > 5.0 * span) {
    throw FitError("ringdown: envelope is not decaying over the record", amp.slope);
  }
  const LineFit ph = fit_line(t, phase);

  RingdownResult out;
  out.tau = -1.0 / amp.slope;
  out.tau_err = amp.slope_err / (amp.slope * amp.slope);
  out.f = f_c + ph.slope / kTwoPi;
  out.f_err = ph.slope_err / kTwoPi;
  out.Q_prime = std::numbers::pi * out.f * out.tau;
  out.Q_prime_err = out.Q_prime * std::hypot(out.tau_err / out.tau, out.f_err / out.f);
  return out;
}

RingdownResult ringdown_decay(const TimeSeries& series, const std::string& channel) {
  return ringdown_decay(series.channel(channel), series.fs);
}

}  // namespace colddamp
