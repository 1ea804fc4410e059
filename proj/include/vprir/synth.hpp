#pragma once

// Synthetic stand-ins for recorded material: RIRs drawn from the structured
// prior with randomized physical parameters, speech-shaped noise and white
// sensor noise.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "vprir/errors.hpp"
#include "vprir/metrics.hpp"
#include "vprir/model.hpp"

namespace vprir {

// Real polynomial 1 + c1 z^-1 + ... from roots given as one member of each
// conjugate pair (imag > 0) or real roots (imag == 0).
inline std::vector<double> poly_from_roots(const std::vector<std::complex<double>>& roots) {
  std::vector<double> c{1.0};
  auto mul = [&c](std::vector<double> f) {
    std::vector<double> out(c.size() + f.size() - 1, 0.0);
    for (std::size_t i = 0; i < c.size(); ++i)
      for (std::size_t j = 0; j < f.size(); ++j) out[i + j] += c[i] * f[j];
    c = std::move(out);
  };
  for (const auto& z : roots) {
    if (z.imag() == 0.0)
      mul({1.0, -z.real()});
    else
      mul({1.0, -2.0 * z.real(), std::norm(z)});
  }
  return c;
}

// Order-8 all-pole envelope with four resonances at typical formant
// positions.
inline std::vector<double> speech_envelope_filter(double sample_rate) {
  const double formants[] = {500.0, 1500.0, 2500.0, 3400.0};
  const double radii[] = {0.97, 0.93, 0.88, 0.80};
  std::vector<std::complex<double>> poles;
  for (int k = 0; k < 4; ++k) {
    const double f = std::min(formants[k], 0.45 * sample_rate);
    poles.push_back(std::polar(radii[k], 2.0 * std::numbers::pi * f / sample_rate));
  }
  return poly_from_roots(poles);
}

// Active speech level of -26 dBFS.
inline constexpr double kSpeechRms = 0.05;

// White noise through the formant envelope, then band-limited by the fixed
// FIR [1, 0, -1] (nulls at DC and Nyquist as in a band-limited capture
// chain), scaled to the requested RMS.
inline std::vector<double> speech_shaped_noise(std::size_t n, double sample_rate, std::uint64_t seed,
                                               double rms = kSpeechRms) {
  if (!(rms > 0.0)) throw InvalidArgument("speech_shaped_noise: rms must be positive");
  const auto a = speech_envelope_filter(sample_rate);
  const auto voiced = toeplitz_solve(a, white_noise(n + 2, 1.0, seed));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = voiced[i + 2] - voiced[i];
  double e = 0.0;
  for (double v : x) e += v * v;
  const double scale = e > 0.0 ? rms / std::sqrt(e / static_cast<double>(n)) : 1.0;
  for (auto& v : x) v *= scale;
  return x;
}

struct RirDraw {
  double rt60_min_s = 0.06;
  double rt60_max_s = 0.25;
  std::size_t g_length = 3;      // microphone coloring taps
  double g_root_radius = 0.6;
  double p_tail_fraction = 0.5;  // p = [1, -rho] with rho <= fraction * a
  std::size_t max_attempts = 20;
};

struct SyntheticRir {
  std::vector<double> h;  // truncated to the requested length, unit energy
  ModelParams params;
  double rt30_s = 0.0;    // of the untruncated draw
  std::size_t attempts = 0;
};

// Draws RIR parameters and a realization, keeping only draws whose measured
// RT30 lies in [rt60_min_s, rt60_max_s]. The fixed [1, 0, -1] factor is not
// applied: its poles at +-1 would prevent the sampled tail from decaying.
inline SyntheticRir synth_rir(std::size_t length, double sample_rate, std::uint64_t seed, const RirDraw& draw = {}) {
  if (length == 0) throw InvalidArgument("synth_rir: length must be positive");
  if (!(draw.rt60_min_s > 0.0) || draw.rt60_max_s <= draw.rt60_min_s)
    throw ConfigError("synth_rir: need 0 < rt60_min_s < rt60_max_s");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Long enough for the slowest decay to pass -35 dB with margin.
  const auto full = std::max(length, static_cast<std::size_t>(std::ceil(1.2 * draw.rt60_max_s * sample_rate)));

  for (std::size_t attempt = 1; attempt <= draw.max_attempts; ++attempt) {
    const double rt60 = draw.rt60_min_s + (draw.rt60_max_s - draw.rt60_min_s) * unit(rng);
    ModelParams t;
    t.a = 3.0 * std::numbers::ln10 / (rt60 * sample_rate);
    std::vector<std::complex<double>> roots;
    for (std::size_t k = 0; k + 1 < draw.g_length; k += 2) {
      const double r = draw.g_root_radius * unit(rng);
      roots.push_back(std::polar(r, std::numbers::pi * (0.05 + 0.9 * unit(rng))));
    }
    if ((draw.g_length - 1) % 2 == 1) roots.emplace_back(draw.g_root_radius * (2.0 * unit(rng) - 1.0), 0.0);
    t.g = poly_from_roots(roots);
    t.p = {1.0, -draw.p_tail_fraction * t.a * unit(rng)};
    const std::uint64_t noise_seed = rng();
    if (!is_stable(t.g)) continue;

    const RirOperator op(full, t, false);
    auto h = sample_rir(op, noise_seed);
    double rt = 0.0;
    try {
      rt = rt30(h, sample_rate);
    } catch (const InsufficientDecay&) {
      continue;
    }
    if (rt < draw.rt60_min_s || rt > draw.rt60_max_s) continue;
    h.resize(length);
    double e = 0.0;
    for (double v : h) e += v * v;
    for (auto& v : h) v /= std::sqrt(e);
    return SyntheticRir{std::move(h), std::move(t), rt, attempt};
  }
  throw InstabilityError("synth_rir: no admissible draw after " + std::to_string(draw.max_attempts) +
                         " attempts (seed " + std::to_string(seed) + ")");
}

}  // namespace vprir
