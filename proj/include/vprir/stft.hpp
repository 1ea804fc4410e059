#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vprir/errors.hpp"
#include "vprir/fft.hpp"

namespace vprir {

enum class Window { hann, rect };

struct StftConfig {
  std::size_t n_fft = 512;
  std::size_t hop = 256;
  Window window = Window::hann;
  bool center = true;

  std::size_t bins() const { return n_fft / 2 + 1; }

  void validate() const {
    if (n_fft < 2 || n_fft % 2 != 0) throw ConfigError("StftConfig: n_fft must be even and >= 2");
    if (hop == 0 || n_fft % hop != 0)
      throw ConfigError("StftConfig: hop must divide n_fft (n_fft=" + std::to_string(n_fft) +
                        ", hop=" + std::to_string(hop) + ")");
  }
};

using Spectrogram = Eigen::MatrixXcd;  // bins x frames

// Periodic Hann window (overlap-adds to a constant at 50% overlap) or a
// rectangular one.
inline std::vector<double> analysis_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.n_fft, 1.0);
  if (cfg.window == Window::rect) return w;
  const double n = static_cast<double>(cfg.n_fft);
  for (std::size_t i = 0; i < cfg.n_fft; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / n);
  return w;
}

inline std::size_t stft_frames(std::size_t length, const StftConfig& cfg) {
  const std::size_t padded = cfg.center ? length + cfg.n_fft : length;
  if (padded < cfg.n_fft) return 0;
  return 1 + (padded - cfg.n_fft) / cfg.hop;
}

// Frame t covers samples [t hop - pad, t hop - pad + n_fft), pad = n_fft/2
// when centered.
inline Spectrogram stft(std::span<const double> x, const StftConfig& cfg) {
  cfg.validate();
  const std::size_t pad = cfg.center ? cfg.n_fft / 2 : 0;
  if (x.size() + 2 * pad < cfg.n_fft)
    throw InvalidArgument("stft: signal shorter than one frame");
  const std::size_t frames = stft_frames(x.size(), cfg);
  const auto w = analysis_window(cfg);
  Spectrogram out(static_cast<Eigen::Index>(cfg.bins()), static_cast<Eigen::Index>(frames));
  std::vector<double> frame(cfg.n_fft);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < cfg.n_fft; ++i) {
      const auto pos = static_cast<std::ptrdiff_t>(t * cfg.hop + i) - static_cast<std::ptrdiff_t>(pad);
      frame[i] = (pos >= 0 && pos < static_cast<std::ptrdiff_t>(x.size()))
                     ? w[i] * x[static_cast<std::size_t>(pos)]
                     : 0.0;
    }
    const auto spec = fft::rfft(frame, cfg.n_fft);
    for (std::size_t f = 0; f < spec.size(); ++f)
      out(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t)) = spec[f];
  }
  return out;
}

// Overlap-add synthesis normalized by the summed analysis window, so that
// istft(stft(x)) == x wherever the window sum is nonzero.
inline std::vector<double> istft(const Spectrogram& spec, const StftConfig& cfg, std::size_t length) {
  cfg.validate();
  if (static_cast<std::size_t>(spec.rows()) != cfg.bins())
    throw InvalidArgument("istft: spectrogram has the wrong number of bins");
  const std::size_t pad = cfg.center ? cfg.n_fft / 2 : 0;
  const auto frames = static_cast<std::size_t>(spec.cols());
  const std::size_t total = frames == 0 ? 0 : (frames - 1) * cfg.hop + cfg.n_fft;
  std::vector<double> acc(std::max(total, length + pad), 0.0);
  std::vector<double> norm(acc.size(), 0.0);
  const auto w = analysis_window(cfg);
  std::vector<fft::Complex> col(cfg.bins());
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t f = 0; f < col.size(); ++f)
      col[f] = spec(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t));
    const auto frame = fft::irfft(col, cfg.n_fft);
    for (std::size_t i = 0; i < cfg.n_fft; ++i) {
      acc[t * cfg.hop + i] += frame[i];
      norm[t * cfg.hop + i] += w[i];
    }
  }
  std::vector<double> out(length, 0.0);
  for (std::size_t n = 0; n < length; ++n) {
    const double d = norm[n + pad];
    out[n] = d > 1e-10 ? acc[n + pad] / d : 0.0;
  }
  return out;
}

}  // namespace vprir
