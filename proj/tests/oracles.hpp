#pragma once

// Reference constructions used only by the tests: dense matrices, naive
// convolution, an independent polynomial root finder and random generators.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace oracle {

inline std::vector<double> naive_convolve(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

inline Eigen::MatrixXd toeplitz(const std::vector<double>& b, std::size_t n) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < b.size() && k <= i; ++k) m(i, i - k) = b[k];
  return m;
}

inline Eigen::MatrixXd decay(double a, std::size_t n) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t u = 0; u < n; ++u) m(u, u) = std::exp(a * static_cast<double>(u));
  return m;
}

// Column u is the untruncated p^{*u}, cut off by the matrix border.
inline Eigen::MatrixXd power_matrix(const std::vector<double>& p, std::size_t n) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
  std::vector<double> power{1.0};
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t j = 0; j < power.size() && u + j < n; ++j) m(u + j, u) = power[j];
    power = naive_convolve(power, p);
  }
  return m;
}

inline Eigen::MatrixXd whitening(const std::vector<double>& g, double a, const std::vector<double>& p,
                                 std::size_t n, bool prefilter = true) {
  const auto kernel = prefilter ? naive_convolve(g, {1.0, 0.0, -1.0}) : g;
  return power_matrix(p, n) * decay(a, n) * toeplitz(kernel, n);
}

inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Durand-Kerner iteration on the monic polynomial z^n + g1 z^{n-1} + ... + gn.
inline std::vector<std::complex<double>> durand_kerner(const std::vector<double>& g) {
  const std::size_t n = g.size() - 1;
  std::vector<std::complex<double>> z(n);
  const std::complex<double> seed(0.4, 0.9);
  for (std::size_t i = 0; i < n; ++i) z[i] = std::pow(seed, static_cast<double>(i));
  auto eval = [&](std::complex<double> x) {
    std::complex<double> acc = 1.0;
    for (std::size_t k = 1; k <= n; ++k) acc = acc * x + g[k];
    return acc;
  };
  for (int it = 0; it < 2000; ++it) {
    double delta = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::complex<double> den = 1.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) den *= z[i] - z[j];
      const auto step = eval(z[i]) / den;
      z[i] -= step;
      delta = std::max(delta, std::abs(step));
    }
    if (delta < 1e-15) break;
  }
  return z;
}

inline double max_root_modulus(const std::vector<double>& g) {
  double m = 0.0;
  for (const auto& z : durand_kerner(g)) m = std::max(m, std::abs(z));
  return m;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Monic polynomial coefficients from roots drawn inside radius `radius`,
// complex roots in conjugate pairs.
inline std::vector<double> random_filter(std::mt19937_64& rng, std::size_t length, double radius) {
  std::uniform_real_distribution<double> mod(0.05, radius);
  std::uniform_real_distribution<double> ang(0.1, std::numbers::pi - 0.1);
  std::vector<std::complex<double>> roots;
  while (roots.size() + 1 < length) {
    if (roots.size() + 2 < length) {
      const auto z = std::polar(mod(rng), ang(rng));
      roots.push_back(z);
      roots.push_back(std::conj(z));
    } else {
      roots.emplace_back((rng() % 2 ? 1.0 : -1.0) * mod(rng), 0.0);
    }
  }
  std::vector<std::complex<double>> poly{1.0};
  for (const auto& z : roots) {
    std::vector<std::complex<double>> next(poly.size() + 1, 0.0);
    for (std::size_t k = 0; k < poly.size(); ++k) {
      next[k] += poly[k];
      next[k + 1] -= z * poly[k];
    }
    poly = next;
  }
  std::vector<double> out(poly.size());
  for (std::size_t k = 0; k < poly.size(); ++k) out[k] = poly[k].real();
  return out;
}

// Dense "textbook" free energy:
//   E_q[ln N(y; s*h, sw2 I)] + E_q[ln N(h; 0, se2 (V^T V)^-1)] - E_q[ln q(h)]
// with Gaussian moment identities and dense matrices throughout.
inline double dense_free_energy(const std::vector<double>& y, const std::vector<double>& s,
                                const std::vector<double>& mu, const std::vector<double>& r,
                                const Eigen::MatrixXd& V, double se2, double sw2) {
  const auto T = static_cast<Eigen::Index>(y.size());
  const auto L = static_cast<Eigen::Index>(mu.size());
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(T, L);
  for (Eigen::Index t = 0; t < T; ++t)
    for (Eigen::Index u = 0; u < L; ++u) {
      const Eigen::Index j = t - u;
      if (j >= 0 && j < static_cast<Eigen::Index>(s.size())) S(t, u) = s[static_cast<std::size_t>(j)];
    }
  const Eigen::VectorXd Y = to_eigen(y), M = to_eigen(mu), R = to_eigen(r);
  const Eigen::MatrixXd Rm = R.asDiagonal();
  const double two_pi = 2.0 * std::numbers::pi;
  const double resid = (Y - S * M).squaredNorm() + (S * Rm * S.transpose()).trace();
  const double like = -0.5 * (static_cast<double>(T) * std::log(two_pi * sw2) + resid / sw2);
  const Eigen::MatrixXd prec = V.transpose() * V / se2;
  const double logdet_prec = std::log(prec.determinant());
  const double prior = -0.5 * static_cast<double>(L) * std::log(two_pi) + 0.5 * logdet_prec -
                       0.5 * (M.dot(prec * M) + (prec * Rm).trace());
  double ent = 0.0;
  for (double v : r) ent += 0.5 * std::log(two_pi * std::numbers::e * v);
  return like + prior + ent;
}

}  // namespace oracle
