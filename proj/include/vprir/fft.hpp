#pragma once

// Real FFT helpers on top of FFTW3. Plans are created once per size under a
// mutex and then executed with the new-array interface, which FFTW documents
// as thread-safe.

#include <fftw3.h>

#include <algorithm>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

namespace vprir::fft {

using Complex = std::complex<double>;

namespace detail {

struct PlanPair {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
};

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  PlanPair get(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    std::vector<double> real(n);
    std::vector<Complex> spec(n / 2 + 1);
    auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    PlanPair p;
    p.forward = fftw_plan_dft_r2c_1d(static_cast<int>(n), real.data(), cplx, flags);
    p.backward = fftw_plan_dft_c2r_1d(static_cast<int>(n), cplx, real.data(), flags);
    plans_.emplace(n, p);
    return p;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

 private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [n, p] : plans_) {
      fftw_destroy_plan(p.forward);
      fftw_destroy_plan(p.backward);
    }
  }

  std::mutex mutex_;
  std::map<std::size_t, PlanPair> plans_;
};

}  // namespace detail

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Forward real DFT of x zero-padded (or truncated) to n points; n/2+1 bins.
inline std::vector<Complex> rfft(std::span<const double> x, std::size_t n) {
  std::vector<double> in(n, 0.0);
  std::copy_n(x.begin(), std::min(n, x.size()), in.begin());
  std::vector<Complex> out(n / 2 + 1);
  fftw_execute_dft_r2c(detail::PlanCache::instance().get(n).forward, in.data(),
                       reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

// Inverse of rfft, including the 1/n scaling.
inline std::vector<double> irfft(std::span<const Complex> spec, std::size_t n) {
  std::vector<Complex> in(spec.begin(), spec.end());
  in.resize(n / 2 + 1);
  std::vector<double> out(n);
  fftw_execute_dft_c2r(detail::PlanCache::instance().get(n).backward,
                       reinterpret_cast<fftw_complex*>(in.data()), out.data());
  const double scale = 1.0 / static_cast<double>(n);
  for (auto& v : out) v *= scale;
  return out;
}

// Full linear convolution, length a.size() + b.size() - 1.
inline std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(len);
  auto fa = rfft(a, n);
  const auto fb = rfft(b, n);
  for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
  auto out = irfft(fa, n);
  out.resize(len);
  return out;
}

// Caches the spectrum of one fixed signal so that repeated convolutions and
// correlations against it cost one forward and one inverse transform each.
class FixedConvolver {
 public:
  FixedConvolver() = default;

  // max_other is the longest signal that will be convolved with `kernel`.
  FixedConvolver(std::span<const double> kernel, std::size_t max_other)
      : kernel_len_(kernel.size()),
        n_(next_pow2(kernel.size() + max_other - 1)),
        spectrum_(rfft(kernel, n_)) {}

  std::size_t kernel_size() const { return kernel_len_; }

  // kernel * x, full length.
  std::vector<double> convolve(std::span<const double> x) const {
    auto fx = rfft(x, n_);
    for (std::size_t k = 0; k < fx.size(); ++k) fx[k] *= spectrum_[k];
    auto out = irfft(fx, n_);
    out.resize(kernel_len_ + x.size() - 1);
    return out;
  }

  // out[u] = sum_j kernel[j] * x[j + u] for u in [0, lags).
  std::vector<double> correlate(std::span<const double> x, std::size_t lags) const {
    auto fx = rfft(x, n_);
    for (std::size_t k = 0; k < fx.size(); ++k) fx[k] *= std::conj(spectrum_[k]);
    auto out = irfft(fx, n_);
    out.resize(lags);
    return out;
  }

 private:
  std::size_t kernel_len_ = 0;
  std::size_t n_ = 0;
  std::vector<Complex> spectrum_;
};

}  // namespace vprir::fft
