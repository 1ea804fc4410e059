#pragma once

// Room-acoustic comparison metrics between a reference and an estimated RIR.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vprir/errors.hpp"
#include "vprir/stft.hpp"

namespace vprir {

struct MetricReport {
  double delta_rt30_percent = 0.0;
  double delta_edc = 0.0;
  double delta_edr = 0.0;
  double mse_percent = 0.0;
};

namespace detail {

inline double energy(std::span<const double> h) {
  double e = 0.0;
  for (double v : h) e += v * v;
  return e;
}

inline void require_nonzero(std::span<const double> h, const char* who) {
  if (h.empty() || energy(h) == 0.0) throw InvalidArgument(std::string(who) + ": all-zero or empty input");
}

}  // namespace detail

// Schroeder backward integration, normalized to EDC[0] = 1.
inline std::vector<double> edc(std::span<const double> h) {
  detail::require_nonzero(h, "edc");
  std::vector<double> out(h.size());
  double acc = 0.0;
  for (std::size_t i = h.size(); i-- > 0;) {
    acc += h[i] * h[i];
    out[i] = acc;
  }
  const double total = out[0];
  for (auto& v : out) v /= total;
  return out;
}

enum class DecayTail {
  strict,     // the curve itself must fall to -35 dB
  terminated  // the energy past the last sample counts as zero
};

// Reverberation time in seconds from a least-squares line through the
// [-5, -35] dB part of the EDC, extrapolated to 60 dB.
inline double rt30(std::span<const double> h, double sample_rate, DecayTail tail = DecayTail::strict) {
  if (!(sample_rate > 0.0)) throw InvalidArgument("rt30: sample rate must be positive");
  const auto curve = edc(h);
  const std::size_t n = curve.size();
  std::size_t begin = n, end = n;
  bool reached = false;
  for (std::size_t i = 0; i < n; ++i) {
    const double db = 10.0 * std::log10(curve[i]);
    if (begin == n && db <= -5.0) begin = i;
    if (db < -35.0) {
      end = i;
      reached = true;
      break;
    }
  }
  if (!reached && tail == DecayTail::strict)
    throw InsufficientDecay("rt30: energy decay curve never reaches -35 dB");
  if (begin >= end || end - begin < 2)
    throw InsufficientDecay("rt30: fewer than two EDC points in the [-5, -35] dB range");

  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const auto count = static_cast<double>(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const auto x = static_cast<double>(i);
    const double y = 10.0 * std::log10(curve[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  if (!(slope < 0.0)) throw InsufficientDecay("rt30: non-negative decay slope");
  return -60.0 / slope / sample_rate;
}

struct EnergyDecayRelief {
  Eigen::MatrixXd values;   // bins x frames, linear, 1 at frame 0 for valid bins
  std::vector<bool> valid;  // false for bins without energy
};

inline StftConfig default_edr_config() { return StftConfig{256, 128, Window::hann, true}; }

// Per-bin Schroeder integration over STFT frames of |X|^2.
inline EnergyDecayRelief edr(std::span<const double> h, const StftConfig& cfg = default_edr_config()) {
  if (h.size() < cfg.n_fft) throw InvalidArgument("edr: RIR shorter than one STFT frame");
  const auto X = stft(h, cfg);
  EnergyDecayRelief out;
  out.values = Eigen::MatrixXd::Zero(X.rows(), X.cols());
  out.valid.assign(static_cast<std::size_t>(X.rows()), false);
  for (Eigen::Index f = 0; f < X.rows(); ++f) {
    double acc = 0.0;
    for (Eigen::Index t = X.cols(); t-- > 0;) {
      acc += std::norm(X(f, t));
      out.values(f, t) = acc;
    }
    const double total = out.values(f, 0);
    if (total > 0.0) {
      out.values.row(f) /= total;
      out.valid[static_cast<std::size_t>(f)] = true;
    }
  }
  return out;
}

inline constexpr double kEdrFloorDb = -80.0;
inline constexpr double kEdrRegionDb = -30.0;

inline double to_db_floored(double v) {
  return v > 0.0 ? std::max(10.0 * std::log10(v), kEdrFloorDb) : kEdrFloorDb;
}

// Mean absolute dB difference over reference-valid bins, restricted to the
// cells where the reference relief is above -30 dB.
inline double edr_distance(const EnergyDecayRelief& ref, const EnergyDecayRelief& est) {
  double sum = 0.0;
  std::size_t count = 0;
  for (Eigen::Index f = 0; f < ref.values.rows(); ++f) {
    if (!ref.valid[static_cast<std::size_t>(f)]) continue;
    for (Eigen::Index t = 0; t < ref.values.cols(); ++t) {
      const double r = to_db_floored(ref.values(f, t));
      if (r < kEdrRegionDb) continue;
      sum += std::abs(r - to_db_floored(est.values(f, t)));
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

inline MetricReport compare(std::span<const double> h_ref, std::span<const double> h_est, double sample_rate,
                            const StftConfig& edr_cfg = default_edr_config()) {
  detail::require_nonzero(h_ref, "compare (reference)");
  detail::require_nonzero(h_est, "compare (estimate)");
  const std::size_t n = std::max(h_ref.size(), h_est.size());
  std::vector<double> ref(h_ref.begin(), h_ref.end()), est(h_est.begin(), h_est.end());
  ref.resize(n, 0.0);
  est.resize(n, 0.0);

  MetricReport m;
  const double rt_ref = rt30(ref, sample_rate, DecayTail::terminated);
  const double rt_est = rt30(est, sample_rate, DecayTail::terminated);
  m.delta_rt30_percent = std::abs(rt_est - rt_ref) / rt_ref * 100.0;

  const auto e_ref = edc(ref), e_est = edc(est);
  double d = 0.0;
  for (std::size_t i = 0; i < n; ++i) d += std::abs(e_ref[i] - e_est[i]);
  m.delta_edc = d / static_cast<double>(n);

  m.delta_edr = edr_distance(edr(ref, edr_cfg), edr(est, edr_cfg));

  double err = 0.0, pow = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    err += (ref[i] - est[i]) * (ref[i] - est[i]);
    pow += ref[i] * ref[i];
  }
  m.mse_percent = err / pow * 100.0;
  return m;
}

struct MixResult {
  std::vector<double> noisy;
  double scale = 1.0;
};

// Adds `noise` scaled so that 10 log10(P_clean / P_noise) == snr_db, powers
// taken as mean squares over the clean support.
inline MixResult mix_at_snr(std::span<const double> clean, std::span<const double> noise, double snr_db) {
  if (!std::isfinite(snr_db)) throw InvalidArgument("mix_at_snr: SNR must be finite");
  if (noise.size() < clean.size()) throw InvalidArgument("mix_at_snr: noise shorter than clean signal");
  const auto n = clean.size();
  const double p_clean = detail::energy(clean) / static_cast<double>(n);
  const double p_noise = detail::energy(noise.first(n)) / static_cast<double>(n);
  if (!(p_clean > 0.0) || !(p_noise > 0.0)) throw InvalidArgument("mix_at_snr: zero-power clean or noise");
  MixResult out;
  out.scale = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  out.noisy.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.noisy[i] = clean[i] + out.scale * noise[i];
  return out;
}

inline double measured_snr_db(std::span<const double> clean, std::span<const double> noisy) {
  double pc = 0.0, pn = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    pc += clean[i] * clean[i];
    const double d = noisy[i] - clean[i];
    pn += d * d;
  }
  return 10.0 * std::log10(pc / pn);
}

}  // namespace vprir
