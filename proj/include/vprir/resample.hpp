#pragma once

// Rational sample-rate conversion with a Kaiser-windowed sinc, evaluated in
// polyphase form (only the taps that meet an input sample are computed).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vprir/errors.hpp"

namespace vprir {

inline bool supported_rate(int rate) { return rate == 8000 || rate == 16000 || rate == 44100 || rate == 48000; }

namespace detail {

// Zeroth-order modified Bessel function, power series.
inline double bessel_i0(double x) {
  double sum = 1.0, term = 1.0;
  for (int k = 1; k < 200; ++k) {
    term *= (x / (2.0 * k)) * (x / (2.0 * k));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return sum;
}

}  // namespace detail

struct ResampleDesign {
  double passband = 0.8;      // fraction of the lower Nyquist kept flat
  double stopband = 1.0;      // fraction of the lower Nyquist where attenuation starts
  double attenuation_db = 90.0;
};

inline std::vector<double> resample(std::span<const double> x, int from_rate, int to_rate,
                                    const ResampleDesign& design = {}) {
  if (!supported_rate(from_rate) || !supported_rate(to_rate))
    throw UnsupportedError("resample: rates " + std::to_string(from_rate) + " -> " + std::to_string(to_rate) +
                           " are outside {8000, 16000, 44100, 48000}");
  if (from_rate == to_rate) return {x.begin(), x.end()};
  const int g = std::gcd(from_rate, to_rate);
  const auto up = static_cast<std::size_t>(to_rate / g);
  const auto down = static_cast<std::size_t>(from_rate / g);
  const auto grid = static_cast<double>(std::max(up, down));

  // Prototype at the upsampled rate, frequencies in cycles per grid sample.
  const double f_pass = 0.5 * design.passband / grid;
  const double f_stop = 0.5 * design.stopband / grid;
  const double fc = 0.5 * (f_pass + f_stop);
  const double a = design.attenuation_db;
  const double beta = a > 50.0 ? 0.1102 * (a - 8.7) : 0.5842 * std::pow(a - 21.0, 0.4) + 0.07886 * (a - 21.0);
  const auto half = static_cast<std::size_t>(
      std::ceil((a - 8.0) / (2.285 * 2.0 * std::numbers::pi * (f_stop - f_pass)) / 2.0));
  const std::size_t taps = 2 * half + 1;
  std::vector<double> h(taps);
  const double norm = detail::bessel_i0(beta);
  for (std::size_t k = 0; k < taps; ++k) {
    const double m = static_cast<double>(k) - static_cast<double>(half);
    const double r = m / static_cast<double>(half);
    const double window = detail::bessel_i0(beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
    const double sinc = m == 0.0 ? 2.0 * fc : std::sin(2.0 * std::numbers::pi * fc * m) / (std::numbers::pi * m);
    h[k] = static_cast<double>(up) * sinc * window;
  }

  const std::size_t n_out = (x.size() * up + down - 1) / down;
  std::vector<double> y(n_out, 0.0);
  const auto n_in = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t m = 0; m < n_out; ++m) {
    // Output m sits at grid position m * down; input n at n * up.
    const auto centre = static_cast<std::ptrdiff_t>(m * down);
    const auto lo_grid = centre - static_cast<std::ptrdiff_t>(half);
    std::ptrdiff_t n = lo_grid <= 0 ? 0 : (lo_grid + static_cast<std::ptrdiff_t>(up) - 1) / static_cast<std::ptrdiff_t>(up);
    double acc = 0.0;
    for (; n < n_in; ++n) {
      const std::ptrdiff_t k = n * static_cast<std::ptrdiff_t>(up) - lo_grid;
      if (k >= static_cast<std::ptrdiff_t>(taps)) break;
      acc += h[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(n)];
    }
    y[m] = acc;
  }
  return y;
}

}  // namespace vprir
