#pragma once

// Structured RIR prior: h = G^-1 E^-1 P^-1 eps with
//   G = Toep(g * [1, 0, -1])   lower-triangular Toeplitz (microphone filter)
//   E = Diag(exp(a u))          mean absorption
//   P = columns of convolution powers p^{*u}, shifted down by u
// All operators are applied as recursions or filters; nothing here builds a
// dense L_h x L_h matrix.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <iostream>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vprir/errors.hpp"

namespace vprir {

struct ModelParams {
  std::vector<double> g{1.0};  // g[0] == 1
  double a = 1e-8;             // per-sample decay rate
  std::vector<double> p{1.0};  // p[0] == 1
  double sigma_eps = 1.0;
  double sigma_w = 1.0;

  void validate() const {
    if (g.empty() || g[0] != 1.0) throw InvalidArgument("ModelParams: g[0] must be 1");
    if (p.empty() || p[0] != 1.0) throw InvalidArgument("ModelParams: p[0] must be 1");
    if (!(a >= 0.0) || !std::isfinite(a)) throw DomainError("ModelParams: a must be finite and >= 0");
    if (!(sigma_eps > 0.0)) throw DomainError("ModelParams: sigma_eps must be > 0");
    if (!(sigma_w > 0.0)) throw DomainError("ModelParams: sigma_w must be > 0");
  }
};

// Mean-field Gaussian posterior q(h[u]) = N(mu_h[u], r_h[u]).
struct VariationalParams {
  std::vector<double> mu_h;
  std::vector<double> r_h;

  static VariationalParams initial(std::size_t length) {
    VariationalParams z;
    z.mu_h.assign(length, 0.0);
    z.mu_h[0] = 1.0;
    z.r_h.assign(length, 1.0);
    return z;
  }

  std::size_t size() const { return mu_h.size(); }

  void validate() const {
    if (mu_h.size() != r_h.size() || mu_h.empty())
      throw InvalidArgument("VariationalParams: mu_h and r_h must be non-empty and equally long");
    for (double r : r_h)
      if (!(r > 0.0)) throw DomainError("VariationalParams: r_h must be strictly positive");
  }
};

// ---------------------------------------------------------------------------
// Lower-triangular Toeplitz operators

// Causal FIR filter: y[t] = sum_{k <= t} b[k] x[t-k].
inline std::vector<double> toeplitz_apply(std::span<const double> b, std::span<const double> x) {
  if (b.empty() || x.empty()) throw InvalidArgument("toeplitz_apply: empty kernel or input");
  const std::size_t n = x.size();
  std::vector<double> y(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t kmax = std::min(t + 1, b.size());
    double acc = 0.0;
    for (std::size_t k = 0; k < kmax; ++k) acc += b[k] * x[t - k];
    y[t] = acc;
  }
  return y;
}

// Transposed (anti-causal) filter: y[s] = sum_k b[k] x[s+k].
inline std::vector<double> toeplitz_transpose_apply(std::span<const double> b,
                                                    std::span<const double> x) {
  if (b.empty() || x.empty()) throw InvalidArgument("toeplitz_transpose_apply: empty kernel or input");
  const std::size_t n = x.size();
  std::vector<double> y(n, 0.0);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t kmax = std::min(b.size(), n - s);
    double acc = 0.0;
    for (std::size_t k = 0; k < kmax; ++k) acc += b[k] * x[s + k];
    y[s] = acc;
  }
  return y;
}

// IIR recursion inverting toeplitz_apply.
inline std::vector<double> toeplitz_solve(std::span<const double> b, std::span<const double> y) {
  if (b.empty() || y.empty()) throw InvalidArgument("toeplitz_solve: empty kernel or input");
  if (b[0] == 0.0) throw SingularOperator("toeplitz_solve: leading coefficient is zero");
  const std::size_t n = y.size();
  std::vector<double> x(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t kmax = std::min(t + 1, b.size());
    double acc = y[t];
    for (std::size_t k = 1; k < kmax; ++k) acc -= b[k] * x[t - k];
    x[t] = acc / b[0];
  }
  return x;
}

// ---------------------------------------------------------------------------
// Diagonal exponential decay

enum class Direction { forward, inverse };

inline std::vector<double> exp_decay_apply(double a, std::span<const double> x,
                                           Direction dir = Direction::forward) {
  if (!std::isfinite(a)) throw InvalidArgument("exp_decay_apply: non-finite rate");
  const double rate = dir == Direction::forward ? a : -a;
  std::vector<double> y(x.size());
  for (std::size_t u = 0; u < x.size(); ++u) y[u] = std::exp(rate * static_cast<double>(u)) * x[u];
  return y;
}

// Largest a with exp(a (L_h - 1)) representable in double precision.
inline double max_decay_rate(std::size_t length) {
  return length > 1 ? 700.0 / static_cast<double>(length - 1) : 700.0;
}

// ---------------------------------------------------------------------------
// Convolution-power matrix

// Column u of the matrix holds p^{*u}[: L_h - u] starting at row u. Columns
// are stored without trailing zeros.
class PowerColumns {
 public:
  PowerColumns(std::span<const double> p, std::size_t length) : length_(length) {
    if (p.empty() || p[0] != 1.0) throw InvalidArgument("p_matrix_columns: p[0] must be 1");
    if (length == 0) throw InvalidArgument("p_matrix_columns: L_h must be positive");
    columns_.resize(length);
    columns_[0] = {1.0};
    for (std::size_t u = 1; u < length; ++u) {
      const auto& prev = columns_[u - 1];
      const std::size_t cap = length - u;
      const std::size_t full = prev.size() + p.size() - 1;
      std::vector<double> col(std::min(cap, full), 0.0);
      for (std::size_t i = 0; i < prev.size() && i < col.size(); ++i) {
        const std::size_t kmax = std::min(p.size(), col.size() - i);
        for (std::size_t k = 0; k < kmax; ++k) col[i + k] += prev[i] * p[k];
      }
      columns_[u] = std::move(col);
    }
  }

  std::size_t size() const { return length_; }
  std::span<const double> column(std::size_t u) const { return columns_[u]; }

  // y = P x
  std::vector<double> apply(std::span<const double> x) const {
    check(x.size());
    std::vector<double> y(length_, 0.0);
    for (std::size_t u = 0; u < length_; ++u) {
      const double xu = x[u];
      if (xu == 0.0) continue;
      const auto& col = columns_[u];
      for (std::size_t j = 0; j < col.size(); ++j) y[u + j] += xu * col[j];
    }
    return y;
  }

  // y = P^T x
  std::vector<double> transpose_apply(std::span<const double> x) const {
    check(x.size());
    std::vector<double> y(length_, 0.0);
    for (std::size_t u = 0; u < length_; ++u) y[u] = column_dot(u, x, u);
    return y;
  }

  // sum_j column(u)[j] * x[offset + j], stopping at the end of x.
  double column_dot(std::size_t u, std::span<const double> x, std::size_t offset) const {
    if (offset >= x.size()) return 0.0;
    const auto& col = columns_[u];
    const std::size_t jmax = std::min(col.size(), x.size() - offset);
    double acc = 0.0;
    for (std::size_t j = 0; j < jmax; ++j) acc += col[j] * x[offset + j];
    return acc;
  }

  // Forward substitution for P x = y; the diagonal is all ones.
  std::vector<double> solve(std::span<const double> y) const {
    check(y.size());
    std::vector<double> work(y.begin(), y.end());
    for (std::size_t u = 0; u < length_; ++u) {
      const double xu = work[u];
      if (xu == 0.0) continue;
      const auto& col = columns_[u];
      for (std::size_t j = 1; j < col.size(); ++j) work[u + j] -= col[j] * xu;
    }
    return work;
  }

 private:
  void check(std::size_t n) const {
    if (n != length_) throw InvalidArgument("PowerColumns: vector length does not match L_h");
  }

  std::size_t length_;
  std::vector<std::vector<double>> columns_;
};

inline PowerColumns p_matrix_columns(std::span<const double> p, std::size_t length) {
  return PowerColumns(p, length);
}

inline std::vector<double> p_apply(std::span<const double> p, std::span<const double> x) {
  return PowerColumns(p, x.size()).apply(x);
}

inline std::vector<double> p_solve(std::span<const double> p, std::span<const double> y) {
  return PowerColumns(p, y.size()).solve(y);
}

// ---------------------------------------------------------------------------
// Microphone filter

// Trainable g convolved with the fixed [1, 0, -1] factor, which puts zeros at
// DC and Nyquist.
inline std::vector<double> g_effective(std::span<const double> g) {
  if (g.empty() || g[0] != 1.0) throw InvalidArgument("g_effective: g[0] must be 1");
  std::vector<double> out(g.size() + 2, 0.0);
  for (std::size_t k = 0; k < g.size(); ++k) {
    out[k] += g[k];
    out[k + 2] -= g[k];
  }
  return out;
}

namespace detail {

inline std::string echo(std::span<const double> v) {
  std::ostringstream os;
  os.precision(17);
  os << '[';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ']';
  return os.str();
}

}  // namespace detail

// Roots in z of sum_k g[k] z^{-k}, i.e. of z^n + g[1] z^{n-1} + ... + g[n].
inline std::vector<std::complex<double>> filter_roots(std::span<const double> g) {
  if (g.empty() || g[0] == 0.0) throw InvalidArgument("filter_roots: leading coefficient is zero");
  for (double c : g)
    if (!std::isfinite(c)) throw NumericError("filter_roots: non-finite coefficient in " + detail::echo(g));
  const auto n = static_cast<Eigen::Index>(g.size() - 1);
  if (n == 0) return {};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) companion(0, j) = -g[static_cast<std::size_t>(j) + 1] / g[0];
  for (Eigen::Index i = 1; i < n; ++i) companion(i, i - 1) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  if (solver.info() != Eigen::Success)
    throw NumericError("filter_roots: eigenvalue iteration did not converge for " + detail::echo(g));
  std::vector<std::complex<double>> roots(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) roots[static_cast<std::size_t>(i)] = solver.eigenvalues()(i);
  return roots;
}

inline constexpr double kStableRadius = 1.0 + 1e-9;

inline bool is_stable(std::span<const double> g) {
  for (const auto& z : filter_roots(g))
    if (std::abs(z) > kStableRadius) return false;
  return true;
}

// Reflects every root outside the unit circle to 1/conj(z). The overall gain
// is left as is, so g[0] stays 1.
inline std::vector<double> stabilize_filter(std::span<const double> g) {
  if (g.empty() || g[0] != 1.0) throw InvalidArgument("stabilize_filter: g[0] must be 1");
  auto roots = filter_roots(g);
  bool changed = false;
  for (auto& z : roots) {
    if (std::abs(z) > kStableRadius) {
      z = 1.0 / std::conj(z);
      changed = true;
    }
  }
  if (!changed) return {g.begin(), g.end()};

  std::sort(roots.begin(), roots.end(),
            [](const auto& l, const auto& r) { return std::abs(l) < std::abs(r); });
  std::vector<std::complex<double>> poly{1.0};
  for (const auto& z : roots) {
    std::vector<std::complex<double>> next(poly.size() + 1, 0.0);
    for (std::size_t k = 0; k < poly.size(); ++k) {
      next[k] += poly[k];
      next[k + 1] -= z * poly[k];
    }
    poly = std::move(next);
  }
  std::vector<double> out(poly.size());
  double scale = 1.0;
  for (const auto& c : poly) scale = std::max(scale, std::abs(c));
  for (std::size_t k = 0; k < poly.size(); ++k) {
    if (std::abs(poly[k].imag()) > 1e-8 * scale)
      throw NumericError("stabilize_filter: complex residue in reconstructed coefficients for " +
                         detail::echo(g));
    out[k] = poly[k].real();
  }
  out[0] = 1.0;
  return out;
}

// ---------------------------------------------------------------------------
// Composite whitening operator V = P E G

class RirOperator {
 public:
  // With with_prefilter == false the fixed [1, 0, -1] factor is left out of G.
  RirOperator(std::size_t length, ModelParams params, bool with_prefilter = true)
      : length_(length),
        params_(std::move(params)),
        with_prefilter_(with_prefilter),
        powers_((params_.validate(), params_.p), length),
        kernel_(with_prefilter ? g_effective(params_.g) : params_.g),
        decay_(params_.a),
        cache_(std::make_shared<Cache>()) {
    if (length == 0) throw InvalidArgument("RirOperator: L_h must be positive");
    const double cap = max_decay_rate(length);
    if (decay_ > cap) {
      std::clog << "vprir: warning: decay rate " << decay_ << " clamped to " << cap
                << " to avoid overflow\n";
      decay_ = cap;
    }
  }

  std::size_t size() const { return length_; }
  const ModelParams& params() const { return params_; }
  bool with_prefilter() const { return with_prefilter_; }
  // Kernel of G actually applied (includes the fixed factor when enabled).
  std::span<const double> kernel() const { return kernel_; }
  const PowerColumns& powers() const { return powers_; }
  // Decay rate after the overflow guard.
  double decay() const { return decay_; }

  // V x = P (E (G x))
  std::vector<double> apply(std::span<const double> x) const {
    check(x);
    return powers_.apply(exp_decay_apply(decay_, toeplitz_apply(kernel_, x)));
  }

  // V^T x = G^T (E (P^T x))
  std::vector<double> transpose_apply(std::span<const double> x) const {
    check(x);
    return toeplitz_transpose_apply(kernel_, exp_decay_apply(decay_, powers_.transpose_apply(x)));
  }

  // V^-1 x = G^-1 (E^-1 (P^-1 x))
  std::vector<double> solve(std::span<const double> x) const {
    check(x);
    return toeplitz_solve(kernel_, exp_decay_apply(decay_, powers_.solve(x), Direction::inverse));
  }

  // Entry u is ||V delta_u||^2. Computed once and shared between copies.
  const std::vector<double>& column_energies() const {
    std::call_once(cache_->once, [this] { cache_->energies = compute_column_energies(); });
    return cache_->energies;
  }

  // ln det V = a L_h (L_h - 1) / 2; G and P have unit diagonals.
  double log_det() const {
    const auto n = static_cast<double>(length_);
    return decay_ * n * (n - 1.0) / 2.0;
  }

 private:
  struct Cache {
    std::once_flag once;
    std::vector<double> energies;
  };

  void check(std::span<const double> x) const {
    if (x.size() != length_) throw InvalidArgument("RirOperator: vector length does not match L_h");
  }

  std::vector<double> compute_column_energies() const {
    std::vector<double> out(length_, 0.0);
    std::vector<double> v(length_);
    for (std::size_t u = 0; u < length_; ++u) {
      std::fill(v.begin() + static_cast<std::ptrdiff_t>(u), v.end(), 0.0);
      const std::size_t kmax = std::min(kernel_.size(), length_ - u);
      for (std::size_t k = 0; k < kmax; ++k) {
        const std::size_t t = u + k;
        const double b = kernel_[k] * std::exp(decay_ * static_cast<double>(t));
        const auto col = powers_.column(t);
        for (std::size_t j = 0; j < col.size(); ++j) v[t + j] += b * col[j];
      }
      double e = 0.0;
      for (std::size_t t = u; t < length_; ++t) e += v[t] * v[t];
      out[u] = e;
    }
    return out;
  }

  std::size_t length_;
  ModelParams params_;
  bool with_prefilter_;
  PowerColumns powers_;
  std::vector<double> kernel_;
  double decay_;
  std::shared_ptr<Cache> cache_;
};

inline std::vector<double> v_apply(const RirOperator& op, std::span<const double> x) {
  return op.apply(x);
}

inline std::vector<double> v_column_energies(const RirOperator& op) { return op.column_energies(); }

inline double log_det_v(const RirOperator& op) { return op.log_det(); }

// Seeded white noise eps ~ N(0, sigma^2 I).
inline std::vector<double> white_noise(std::size_t n, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> out(n);
  for (auto& v : out) v = dist(rng);
  return out;
}

// Draws h = V^-1 eps with eps the seeded noise from white_noise().
inline std::vector<double> sample_rir(const RirOperator& op, std::uint64_t seed) {
  if (!is_stable(op.params().g))
    throw InstabilityError("sample_rir: g has roots outside the unit disk: " +
                           detail::echo(op.params().g));
  return op.solve(white_noise(op.size(), op.params().sigma_eps, seed));
}

}  // namespace vprir
