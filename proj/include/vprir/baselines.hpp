#pragma once

// Classical STFT-domain deconvolution baselines:
//  - spectral deconvolution, H = Y / S per bin and frame, averaged over frames
//  - cross-band filtering, per-bin least-squares system identification

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vprir/errors.hpp"
#include "vprir/fft.hpp"
#include "vprir/stft.hpp"

namespace vprir {

struct DeconvolutionResult {
  std::vector<double> rir;
  std::size_t zeroed_bins = 0;  // bins dropped for lack of source energy
  std::size_t ridge_raised = 0; // bins whose ridge had to be increased
};

namespace detail {

// Pads the source with zeros to the length of the observation.
inline std::vector<double> pad_to(std::span<const double> x, std::size_t n) {
  std::vector<double> out(x.begin(), x.end());
  out.resize(std::max(n, x.size()), 0.0);
  return out;
}

inline double max_norm(const Spectrogram& S) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < S.size(); ++i) m = std::max(m, std::norm(S.data()[i]));
  return m;
}

}  // namespace detail

// Ratio H_{f,t} = Y S* / (|S|^2 + eps) averaged over frames with weights
// |S_{f,t}|^2, then an inverse DFT truncated to rir_length.
inline DeconvolutionResult spectral_deconvolution(std::span<const double> y, std::span<const double> s,
                                                  std::size_t rir_length, const StftConfig& cfg = {}) {
  cfg.validate();
  if (rir_length == 0) throw InvalidArgument("spectral_deconvolution: L_h must be positive");
  const std::size_t n = std::max(y.size(), s.size());
  const auto Y = stft(detail::pad_to(y, n), cfg);
  const auto S = stft(detail::pad_to(s, n), cfg);
  const double peak = detail::max_norm(S);
  if (peak == 0.0) throw InvalidArgument("spectral_deconvolution: source is identically zero");
  const double floor = 1e-10 * peak;

  DeconvolutionResult out;
  std::vector<fft::Complex> H(cfg.bins(), 0.0);
  for (Eigen::Index f = 0; f < Y.rows(); ++f) {
    fft::Complex num = 0.0;
    double den = 0.0;
    for (Eigen::Index t = 0; t < Y.cols(); ++t) {
      const double w = std::norm(S(f, t));
      if (w <= floor) continue;
      num += w * (Y(f, t) * std::conj(S(f, t)) / (w + floor));
      den += w;
    }
    if (den > 0.0) {
      H[static_cast<std::size_t>(f)] = num / den;
    } else {
      ++out.zeroed_bins;
    }
  }
  auto h = fft::irfft(H, cfg.n_fft);
  h.resize(rir_length, 0.0);
  out.rir = std::move(h);
  return out;
}

// Per-bin filters of the cross-band model
//   Y_{f,t} ~ sum_{f' in band(f)} sum_{tau < taps} H_{f,f',tau} S_{f',t-tau}
// with band(f) = {f' : |f' - f| < bands}. Coefficients of bin f are stored
// band-major: index (f' - first_band(f)) * taps + tau.
struct BandFilters {
  std::size_t taps = 0;
  std::size_t bands = 1;
  std::vector<Eigen::VectorXcd> coefficients;
  std::size_t zeroed_bins = 0;
  std::size_t ridge_raised = 0;

  std::size_t first_band(std::size_t f) const { return f >= bands - 1 ? f - (bands - 1) : 0; }
  std::size_t last_band(std::size_t f, std::size_t bins) const { return std::min(bins - 1, f + bands - 1); }
};

// Applies identified band filters to a source spectrogram.
inline Spectrogram apply_band_filters(const BandFilters& filters, const Spectrogram& S) {
  const auto bins = static_cast<std::size_t>(S.rows());
  Spectrogram out = Spectrogram::Zero(S.rows(), S.cols());
  for (std::size_t f = 0; f < bins; ++f) {
    const auto& c = filters.coefficients[f];
    const std::size_t lo = filters.first_band(f), hi = filters.last_band(f, bins);
    for (Eigen::Index t = 0; t < S.cols(); ++t) {
      fft::Complex acc = 0.0;
      for (std::size_t b = lo; b <= hi; ++b)
        for (std::size_t tau = 0; tau < filters.taps && static_cast<Eigen::Index>(tau) <= t; ++tau)
          acc += c(static_cast<Eigen::Index>((b - lo) * filters.taps + tau)) *
                 S(static_cast<Eigen::Index>(b), t - static_cast<Eigen::Index>(tau));
      out(static_cast<Eigen::Index>(f), t) = acc;
    }
  }
  return out;
}

// Ridge-regularized least squares per bin. The ridge is relative to the mean
// diagonal of the normal matrix; on a failed factorization it is raised 10x
// up to three times before the bin is zeroed.
inline BandFilters identify_band_filters(const Spectrogram& Y, const Spectrogram& S, std::size_t taps,
                                         std::size_t bands, double ridge) {
  if (Y.rows() != S.rows() || Y.cols() != S.cols())
    throw InvalidArgument("identify_band_filters: spectrogram shapes differ");
  if (taps == 0 || bands == 0) throw InvalidArgument("identify_band_filters: taps and bands must be positive");
  if (!(ridge >= 0.0)) throw InvalidArgument("identify_band_filters: ridge must be >= 0");
  const auto bins = static_cast<std::size_t>(S.rows());
  const auto frames = S.cols();
  BandFilters out;
  out.taps = taps;
  out.bands = bands;
  out.coefficients.resize(bins);
  const std::size_t unknowns_max = taps * (2 * bands - 1);
  if (static_cast<std::size_t>(frames) < 2 * unknowns_max)
    throw InvalidArgument("identify_band_filters: " + std::to_string(frames) + " frames cannot determine " +
                          std::to_string(unknowns_max) + " coefficients per bin");

  for (std::size_t f = 0; f < bins; ++f) {
    const std::size_t lo = out.first_band(f), hi = out.last_band(f, bins);
    const auto unknowns = static_cast<Eigen::Index>((hi - lo + 1) * taps);
    Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(frames, unknowns);
    for (std::size_t b = lo; b <= hi; ++b)
      for (std::size_t tau = 0; tau < taps; ++tau) {
        const auto col = static_cast<Eigen::Index>((b - lo) * taps + tau);
        for (Eigen::Index t = static_cast<Eigen::Index>(tau); t < frames; ++t)
          A(t, col) = S(static_cast<Eigen::Index>(b), t - static_cast<Eigen::Index>(tau));
      }
    const Eigen::MatrixXcd gram = A.adjoint() * A;
    const Eigen::VectorXcd rhs = A.adjoint() * Y.row(static_cast<Eigen::Index>(f)).transpose();
    const double scale = gram.diagonal().real().mean();

    Eigen::VectorXcd solution;
    bool solved = false;
    double lambda = ridge;
    for (int attempt = 0; attempt < 4 && scale > 0.0; ++attempt) {
      Eigen::MatrixXcd reg = gram;
      reg.diagonal().array() += lambda * scale;
      Eigen::LLT<Eigen::MatrixXcd> llt(reg);
      if (llt.info() == Eigen::Success) {
        solution = llt.solve(rhs);
        if (solution.allFinite()) {
          solved = true;
          break;
        }
      }
      lambda = lambda > 0.0 ? lambda * 10.0 : 1e-12;
      ++out.ridge_raised;
    }
    if (!solved) {
      solution = Eigen::VectorXcd::Zero(unknowns);
      ++out.zeroed_bins;
    }
    out.coefficients[f] = std::move(solution);
  }
  return out;
}

// Cross-band deconvolution. The time-domain RIR is read off by driving the
// identified STFT-domain system with a unit impulse and resynthesizing.
inline DeconvolutionResult crossband_deconvolution(std::span<const double> y, std::span<const double> s,
                                                   std::size_t rir_length, const StftConfig& cfg = {},
                                                   std::size_t bands = 1, double ridge = 1e-10) {
  cfg.validate();
  if (rir_length == 0) throw InvalidArgument("crossband_deconvolution: L_h must be positive");
  const std::size_t n = std::max(y.size(), s.size());
  const auto Y = stft(detail::pad_to(y, n), cfg);
  const auto S = stft(detail::pad_to(s, n), cfg);
  if (detail::max_norm(S) == 0.0) throw InvalidArgument("crossband_deconvolution: source is identically zero");
  const std::size_t taps = (rir_length + cfg.hop - 1) / cfg.hop + 1;
  const auto filters = identify_band_filters(Y, S, taps, bands, ridge);

  const std::size_t delay = cfg.n_fft;
  const std::size_t probe_len = delay + rir_length + cfg.n_fft;
  std::vector<double> probe(probe_len, 0.0);
  probe[delay] = 1.0;
  const auto response = istft(apply_band_filters(filters, stft(probe, cfg)), cfg, probe_len);

  DeconvolutionResult out;
  out.rir.assign(response.begin() + static_cast<std::ptrdiff_t>(delay),
                 response.begin() + static_cast<std::ptrdiff_t>(delay + rir_length));
  out.zeroed_bins = filters.zeroed_bins;
  out.ridge_raised = filters.ridge_raised;
  return out;
}

}  // namespace vprir
