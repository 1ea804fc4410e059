#pragma once

// Variational free energy of the structured RIR model, its analytic
// gradient, Adam, and the estimation loop.
//
// Cost minimized: -2 L with
//   -2 L = T ln(2 pi sw2) + E_q||y - s*h||^2 / sw2
//        + L_h ln se2 - 2 ln det V
//        + (||V mu||^2 + sum_u r_u ||V e_u||^2) / se2
//        - sum_u ln r_u - L_h

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vprir/errors.hpp"
#include "vprir/fft.hpp"
#include "vprir/model.hpp"

namespace vprir {

struct VfeBreakdown {
  double likelihood_term = 0.0;
  double prior_logdet_term = 0.0;
  double prior_quadratic_term = 0.0;
  double entropy_term = 0.0;
  double total = 0.0;

  bool finite() const { return std::isfinite(total); }

  // Name of the first non-finite term, or an empty string.
  std::string offending_term() const {
    if (!std::isfinite(likelihood_term)) return "likelihood_term";
    if (!std::isfinite(prior_logdet_term)) return "prior_logdet_term";
    if (!std::isfinite(prior_quadratic_term)) return "prior_quadratic_term";
    if (!std::isfinite(entropy_term)) return "entropy_term";
    if (!std::isfinite(total)) return "total";
    return {};
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(12);
    os << "likelihood=" << likelihood_term << " prior_logdet=" << prior_logdet_term
       << " prior_quadratic=" << prior_quadratic_term << " entropy=" << entropy_term
       << " total=" << total;
    return os.str();
  }
};

// Dry/reverberant pair with the transforms reused across iterations.
class Observation {
 public:
  Observation(std::span<const double> y, std::span<const double> s, std::size_t rir_length)
      : y_(y.begin(), y.end()), s_(s.begin(), s.end()), rir_length_(rir_length) {
    if (s.empty() || rir_length == 0) throw InvalidArgument("Observation: empty source or L_h == 0");
    if (y.size() != s.size() + rir_length - 1)
      throw InvalidArgument("Observation: expected T == L_s + L_h - 1, got T=" +
                            std::to_string(y.size()) + " L_s=" + std::to_string(s.size()) +
                            " L_h=" + std::to_string(rir_length));
    std::vector<double> s2(s_.size());
    for (std::size_t i = 0; i < s_.size(); ++i) s2[i] = s_[i] * s_[i];
    source_ = fft::FixedConvolver(s_, rir_length);
    source_sq_ = fft::FixedConvolver(s2, rir_length);
    for (double v : y_) y_norm2_ += v * v;
    for (double v : s2) s_norm2_ += v;
  }

  std::span<const double> y() const { return y_; }
  std::span<const double> s() const { return s_; }
  std::size_t rir_length() const { return rir_length_; }
  std::size_t length() const { return y_.size(); }
  double y_norm2() const { return y_norm2_; }
  double s_norm2() const { return s_norm2_; }
  const fft::FixedConvolver& source() const { return source_; }
  const fft::FixedConvolver& source_squared() const { return source_sq_; }

 private:
  std::vector<double> y_;
  std::vector<double> s_;
  std::size_t rir_length_;
  fft::FixedConvolver source_;
  fft::FixedConvolver source_sq_;
  double y_norm2_ = 0.0;
  double s_norm2_ = 0.0;
};

// E_q||y - s*h||^2 = ||y||^2 - 2 sum y (mu*s) + sum (r*s^2) + sum (mu*s)^2
inline double expected_residual(const Observation& obs, std::span<const double> mu,
                                std::span<const double> r) {
  if (mu.size() != obs.rir_length() || r.size() != obs.rir_length())
    throw InvalidArgument("expected_residual: posterior length does not match L_h");
  const auto m = obs.source().convolve(mu);
  const auto rs = obs.source_squared().convolve(r);
  const auto y = obs.y();
  double cross = 0.0, var = 0.0, fit = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    cross += y[t] * m[t];
    var += rs[t];
    fit += m[t] * m[t];
  }
  return obs.y_norm2() - 2.0 * cross + var + fit;
}

inline double expected_residual(std::span<const double> y, std::span<const double> s,
                                const VariationalParams& z) {
  if (z.mu_h.size() != z.r_h.size()) throw InvalidArgument("expected_residual: mu_h/r_h size mismatch");
  return expected_residual(Observation(y, s, z.size()), z.mu_h, z.r_h);
}

namespace detail {

inline VfeBreakdown assemble(std::size_t T, std::size_t L, double residual, double se2, double sw2,
                             double log_det, double quad, std::span<const double> r) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const auto n = static_cast<double>(L);
  VfeBreakdown out;
  out.likelihood_term = -0.5 * (static_cast<double>(T) * std::log(two_pi * sw2) + residual / sw2);
  out.prior_logdet_term = -0.5 * (n * std::log(se2) - 2.0 * log_det);
  out.prior_quadratic_term = -quad / (2.0 * se2);
  double log_r = 0.0;
  for (double v : r) log_r += std::log(v);
  out.entropy_term = 0.5 * (log_r + n);
  out.total = out.likelihood_term + out.prior_logdet_term + out.prior_quadratic_term + out.entropy_term;
  return out;
}

}  // namespace detail

inline VfeBreakdown free_energy(const ModelParams& theta, const VariationalParams& z,
                                const Observation& obs) {
  theta.validate();
  z.validate();
  if (z.size() != obs.rir_length()) throw InvalidArgument("free_energy: posterior length does not match L_h");
  const RirOperator op(obs.rir_length(), theta);
  const auto vmu = op.apply(z.mu_h);
  double quad = 0.0;
  for (double v : vmu) quad += v * v;
  const auto& energies = op.column_energies();
  for (std::size_t u = 0; u < energies.size(); ++u) quad += energies[u] * z.r_h[u];
  const double residual = expected_residual(obs, z.mu_h, z.r_h);
  return detail::assemble(obs.length(), obs.rir_length(), residual, theta.sigma_eps * theta.sigma_eps,
                          theta.sigma_w * theta.sigma_w, op.log_det(), quad, z.r_h);
}

inline VfeBreakdown free_energy(const ModelParams& theta, const VariationalParams& z,
                                std::span<const double> y, std::span<const double> s) {
  return free_energy(theta, z, Observation(y, s, z.size()));
}

// ---------------------------------------------------------------------------
// Trainable parameterization

// Flat layout: g[1:], p[1:], log a, log se2, log sw2, mu_h, log r_h.
struct ParamLayout {
  std::size_t rir_length = 0;
  std::size_t g_length = 1;
  std::size_t p_length = 1;

  std::size_t g_offset() const { return 0; }
  std::size_t p_offset() const { return g_length - 1; }
  std::size_t log_a() const { return p_offset() + p_length - 1; }
  std::size_t log_sigma_eps2() const { return log_a() + 1; }
  std::size_t log_sigma_w2() const { return log_a() + 2; }
  std::size_t mu_offset() const { return log_a() + 3; }
  std::size_t log_r_offset() const { return mu_offset() + rir_length; }
  std::size_t size() const { return log_r_offset() + rir_length; }
};

inline constexpr double kMinDecay = 1e-8;

struct InferenceConfig {
  std::size_t iterations = 5000;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t rir_length = 1000;  // L_h
  std::size_t g_length = 8;       // L_g, trainable taps (the fixed factor adds 2)
  std::size_t p_length = 4;       // L_p
  bool early_stop = false;
  bool train_noise = true;
  double sigma_w = 1.0;           // initial (or fixed) observation noise std
};

struct OptimState {
  ParamLayout layout;
  std::vector<double> values;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::size_t step_count = 0;
  std::vector<double> loss_history;
  bool train_noise = true;

  // g = [1], p = [1], a = 1e-8, so the trainable part of V is the identity;
  // R_h = I, mu_h = delta, sigma_eps = 1, sigma_w as configured.
  static OptimState initial(const InferenceConfig& cfg) {
    if (cfg.rir_length == 0 || cfg.g_length == 0 || cfg.p_length == 0)
      throw InvalidArgument("OptimState: lengths must be positive");
    OptimState st;
    st.layout = {cfg.rir_length, cfg.g_length, cfg.p_length};
    st.values.assign(st.layout.size(), 0.0);
    st.values[st.layout.log_a()] = std::log(kMinDecay);
    st.values[st.layout.log_sigma_eps2()] = 0.0;
    st.values[st.layout.log_sigma_w2()] = 2.0 * std::log(cfg.sigma_w);
    st.values[st.layout.mu_offset()] = 1.0;
    st.first_moment.assign(st.values.size(), 0.0);
    st.second_moment.assign(st.values.size(), 0.0);
    st.train_noise = cfg.train_noise;
    return st;
  }

  ModelParams theta() const {
    ModelParams t;
    t.g.assign(layout.g_length, 0.0);
    t.g[0] = 1.0;
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(layout.g_offset()), layout.g_length - 1,
                t.g.begin() + 1);
    t.p.assign(layout.p_length, 0.0);
    t.p[0] = 1.0;
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(layout.p_offset()), layout.p_length - 1,
                t.p.begin() + 1);
    t.a = std::exp(values[layout.log_a()]);
    t.sigma_eps = std::exp(0.5 * values[layout.log_sigma_eps2()]);
    t.sigma_w = std::exp(0.5 * values[layout.log_sigma_w2()]);
    return t;
  }

  VariationalParams z() const {
    VariationalParams out;
    const auto mu = values.begin() + static_cast<std::ptrdiff_t>(layout.mu_offset());
    out.mu_h.assign(mu, mu + static_cast<std::ptrdiff_t>(layout.rir_length));
    out.r_h.resize(layout.rir_length);
    for (std::size_t u = 0; u < layout.rir_length; ++u)
      out.r_h[u] = std::exp(values[layout.log_r_offset() + u]);
    return out;
  }

  void set_g(std::span<const double> g) {
    if (g.size() != layout.g_length) throw InvalidArgument("OptimState::set_g: wrong length");
    std::copy(g.begin() + 1, g.end(), values.begin() + static_cast<std::ptrdiff_t>(layout.g_offset()));
  }
};

// ---------------------------------------------------------------------------
// Objective and gradient

struct Evaluation {
  VfeBreakdown breakdown;
  double loss = 0.0;  // -2 * breakdown.total
  std::vector<double> gradient;
};

namespace detail {

// Accumulates d/d(kernel), d/d(decay), d/dp of weight * ||V x||^2 for an x
// supported on [lo, hi). Returns ||V x||^2.
class EnergyBackprop {
 public:
  explicit EnergyBackprop(const RirOperator& op)
      : op_(op),
        n_(op.size()),
        kernel_(op.kernel().begin(), op.kernel().end()),
        exp_decay_(n_),
        b_(n_, 0.0),
        w_(n_, 0.0),
        gamma_(n_, 0.0),
        d_kernel(kernel_.size(), 0.0),
        d_p(op.params().p.size(), 0.0) {
    for (std::size_t t = 0; t < n_; ++t) exp_decay_[t] = std::exp(op.decay() * static_cast<double>(t));
  }

  double run(std::span<const double> x, std::size_t lo, std::size_t hi, double weight,
             std::span<double> dx = {}) {
    const std::size_t K = kernel_.size();
    const std::size_t hb = std::min(n_, hi + K - 1);
    const auto& powers = op_.powers();

    for (std::size_t t = lo; t < hb; ++t) {
      double acc = 0.0;
      const std::size_t kmin = t >= hi ? t - hi + 1 : 0;
      const std::size_t kmax = std::min(K, t - lo + 1);
      for (std::size_t k = kmin; k < kmax; ++k) acc += kernel_[k] * x[t - k];
      b_[t] = exp_decay_[t] * acc;
    }
    std::fill(w_.begin() + static_cast<std::ptrdiff_t>(lo), w_.end(), 0.0);
    for (std::size_t t = lo; t < hb; ++t) {
      const double bt = b_[t];
      if (bt == 0.0) continue;
      const auto col = powers.column(t);
      for (std::size_t j = 0; j < col.size(); ++j) w_[t + j] += bt * col[j];
    }
    double energy = 0.0;
    for (std::size_t t = lo; t < n_; ++t) {
      energy += w_[t] * w_[t];
      w_[t] *= 2.0;
    }

    for (std::size_t t = lo; t < hb; ++t) {
      const double beta = powers.column_dot(t, w_, t);
      d_decay += weight * beta * static_cast<double>(t) * b_[t];
      gamma_[t] = exp_decay_[t] * beta;
    }
    for (std::size_t k = 0; k < K; ++k) {
      double acc = 0.0;
      const std::size_t tmin = std::max(lo + k, lo);
      const std::size_t tmax = std::min(hb, hi + k);
      for (std::size_t t = tmin; t < tmax; ++t) acc += gamma_[t] * x[t - k];
      d_kernel[k] += weight * acc;
    }
    if (!dx.empty()) {
      for (std::size_t s = lo; s < hi; ++s) {
        double acc = 0.0;
        const std::size_t kmax = std::min(K, hb - s);
        for (std::size_t k = 0; k < kmax; ++k) acc += kernel_[k] * gamma_[s + k];
        dx[s] += weight * acc;
      }
    }
    for (std::size_t m = 1; m < d_p.size(); ++m) {
      double acc = 0.0;
      for (std::size_t t = std::max<std::size_t>(lo, 1); t < hb; ++t) {
        if (b_[t] == 0.0) continue;
        acc += static_cast<double>(t) * b_[t] * powers.column_dot(t - 1, w_, t + m);
      }
      d_p[m] += weight * acc;
    }
    return energy;
  }

 private:
  const RirOperator& op_;
  std::size_t n_;
  std::vector<double> kernel_;
  std::vector<double> exp_decay_;
  std::vector<double> b_;
  std::vector<double> w_;
  std::vector<double> gamma_;

 public:
  std::vector<double> d_kernel;
  std::vector<double> d_p;
  double d_decay = 0.0;
};

}  // namespace detail

// -2 L and its gradient with respect to every entry of state.values.
inline Evaluation evaluate(const OptimState& state, const Observation& obs) {
  const auto& lay = state.layout;
  if (lay.rir_length != obs.rir_length())
    throw InvalidArgument("evaluate: state L_h does not match the observation");
  const std::size_t L = lay.rir_length;
  const std::size_t T = obs.length();
  const ModelParams theta = state.theta();
  const double se2 = std::exp(state.values[lay.log_sigma_eps2()]);
  const double sw2 = std::exp(state.values[lay.log_sigma_w2()]);
  const std::span<const double> mu(state.values.data() + lay.mu_offset(), L);
  std::vector<double> r(L);
  for (std::size_t u = 0; u < L; ++u) r[u] = std::exp(state.values[lay.log_r_offset() + u]);

  const RirOperator op(L, theta);
  detail::EnergyBackprop prior(op);

  Evaluation ev;
  ev.gradient.assign(lay.size(), 0.0);
  const std::span<double> grad(ev.gradient);
  const std::span<double> d_mu = grad.subspan(lay.mu_offset(), L);

  // ||V mu||^2 and its gradients (d_mu receives 2 V^T V mu).
  double quad = prior.run(mu, 0, L, 1.0, d_mu);
  for (auto& v : d_mu) v /= se2;

  // Trace term: sum_u r_u ||V e_u||^2.
  std::vector<double> energies(L);
  std::vector<double> unit(L, 0.0);
  for (std::size_t u = 0; u < L; ++u) {
    unit[u] = 1.0;
    energies[u] = prior.run(unit, u, u + 1, r[u]);
    unit[u] = 0.0;
    quad += r[u] * energies[u];
  }

  // Likelihood.
  const auto m = obs.source().convolve(mu);
  const auto rs = obs.source_squared().convolve(r);
  const auto y = obs.y();
  double cross = 0.0, var = 0.0, fit = 0.0;
  std::vector<double> resid(T);
  for (std::size_t t = 0; t < T; ++t) {
    cross += y[t] * m[t];
    var += rs[t];
    fit += m[t] * m[t];
    resid[t] = y[t] - m[t];
  }
  const double residual = obs.y_norm2() - 2.0 * cross + var + fit;
  const auto corr = obs.source().correlate(resid, L);
  for (std::size_t u = 0; u < L; ++u) d_mu[u] += -2.0 * corr[u] / sw2;

  ev.breakdown = detail::assemble(T, L, residual, se2, sw2, op.log_det(), quad, r);
  ev.loss = -2.0 * ev.breakdown.total;

  for (std::size_t u = 0; u < L; ++u)
    grad[lay.log_r_offset() + u] = r[u] * (obs.s_norm2() / sw2 + energies[u] / se2) - 1.0;
  grad[lay.log_sigma_w2()] = state.train_noise ? static_cast<double>(T) - residual / sw2 : 0.0;
  grad[lay.log_sigma_eps2()] = static_cast<double>(L) - quad / se2;
  if (op.decay() == theta.a) {
    const auto n = static_cast<double>(L);
    grad[lay.log_a()] = theta.a * (-n * (n - 1.0) + prior.d_decay / se2);
  }
  // Kernel = g * [1, 0, -1]; only g[1:] is trainable.
  const auto& dk = prior.d_kernel;
  for (std::size_t k = 1; k < lay.g_length; ++k)
    grad[lay.g_offset() + k - 1] = (dk[k] - dk[k + 2]) / se2;
  for (std::size_t k = 1; k < lay.p_length; ++k) grad[lay.p_offset() + k - 1] = prior.d_p[k] / se2;
  return ev;
}

inline std::pair<double, std::vector<double>> loss_and_gradient(const OptimState& state,
                                                                std::span<const double> y,
                                                                std::span<const double> s) {
  auto ev = evaluate(state, Observation(y, s, state.layout.rir_length));
  if (!ev.breakdown.finite())
    throw NumericError("loss_and_gradient: non-finite " + ev.breakdown.offending_term() + " (" +
                       ev.breakdown.describe() + ")");
  return {ev.loss, std::move(ev.gradient)};
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_update(OptimState& state, std::span<const double> gradient, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0) || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 || cfg.beta2 >= 1.0)
    throw InvalidArgument("adam_update: need lr > 0 and 0 <= beta1, beta2 < 1");
  if (gradient.size() != state.values.size()) throw InvalidArgument("adam_update: gradient size mismatch");
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < state.values.size(); ++i) {
    const double g = gradient[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    state.values[i] -= cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps);
  }
}

// Projection applied between steps, outside the differentiated graph:
// stabilizes g and floors a. Positivity of the variances is structural.
inline void normalize(OptimState& state) {
  auto theta = state.theta();
  if (!is_stable(theta.g)) state.set_g(stabilize_filter(theta.g));
  auto& log_a = state.values[state.layout.log_a()];
  log_a = std::max(log_a, std::log(kMinDecay));
}

// ---------------------------------------------------------------------------
// Estimation loop

struct EstimateResult {
  OptimState state;
  std::vector<double> rir;  // posterior mean mu_h
  VfeBreakdown final_breakdown;
};

inline EstimateResult estimate_rir(std::span<const double> y, std::span<const double> s,
                                   const InferenceConfig& cfg) {
  const Observation obs(y, s, cfg.rir_length);
  OptimState state = OptimState::initial(cfg);
  const AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};
  constexpr std::size_t kMaxNonFinite = 10;
  constexpr std::size_t kEarlyStopWindow = 200;
  std::size_t bad_run = 0;
  VfeBreakdown last;

  for (std::size_t i = 0; i < cfg.iterations; ++i) {
    normalize(state);
    auto ev = evaluate(state, obs);
    last = ev.breakdown;
    if (!ev.breakdown.finite()) {
      if (++bad_run >= kMaxNonFinite)
        throw NumericError("estimate_rir: non-finite cost for " + std::to_string(kMaxNonFinite) +
                           " consecutive iterations; " + ev.breakdown.offending_term() + " (" +
                           ev.breakdown.describe() + ")");
      continue;
    }
    bad_run = 0;
    adam_update(state, ev.gradient, adam);
    state.loss_history.push_back(ev.loss);

    const auto& h = state.loss_history;
    if (cfg.early_stop && h.size() > kEarlyStopWindow) {
      const double before = h[h.size() - 1 - kEarlyStopWindow];
      if (std::abs(h.back() - before) <= 1e-9 * std::abs(before)) break;
    }
  }
  normalize(state);
  EstimateResult out{state, state.z().mu_h, last};
  return out;
}

}  // namespace vprir
