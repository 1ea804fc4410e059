#pragma once

// Random model and optimizer states shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "oracles.hpp"
#include "vprir/inference.hpp"

namespace oracle {

inline vprir::ModelParams random_params(std::mt19937_64& rng, std::size_t lg, std::size_t lp) {
  vprir::ModelParams t;
  t.g = random_filter(rng, lg, 0.9);
  t.p = {1.0};
  auto tail = random_vector(rng, lp - 1, 0.3);
  t.p.insert(t.p.end(), tail.begin(), tail.end());
  t.a = std::uniform_real_distribution<double>(0.0, 0.05)(rng);
  t.sigma_eps = 0.7;
  return t;
}

struct Instance {
  std::vector<double> y, s;
  vprir::OptimState state;
};

// Random state of the given shape with a stable g and moderate scales.
inline Instance random_instance(std::mt19937_64& rng, std::size_t lh, std::size_t lg, std::size_t lp,
                                std::size_t ls = 20) {
  Instance in;
  in.s = random_vector(rng, ls);
  in.y = random_vector(rng, ls + lh - 1);
  vprir::InferenceConfig cfg;
  cfg.rir_length = lh;
  cfg.g_length = lg;
  cfg.p_length = lp;
  in.state = vprir::OptimState::initial(cfg);
  auto& v = in.state.values;
  const auto& lay = in.state.layout;
  const auto g = random_filter(rng, lg, 0.8);
  in.state.set_g(g);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t k = 1; k < lp; ++k) v[lay.p_offset() + k - 1] = 0.3 * n01(rng);
  v[lay.log_a()] = std::uniform_real_distribution<double>(-6.0, -3.0)(rng);
  v[lay.log_sigma_eps2()] = 0.5 * n01(rng);
  v[lay.log_sigma_w2()] = 0.5 * n01(rng);
  for (std::size_t u = 0; u < lh; ++u) {
    v[lay.mu_offset() + u] = n01(rng);
    v[lay.log_r_offset() + u] = 0.5 * n01(rng) - 1.0;
  }
  return in;
}

// Largest |analytic - central difference| / max(1, |central difference|).
inline double fd_max_error(const Instance& in, double step = 1e-5) {
  const vprir::Observation obs(in.y, in.s, in.state.layout.rir_length);
  const auto ev = vprir::evaluate(in.state, obs);
  double worst = 0.0;
  for (std::size_t i = 0; i < in.state.values.size(); ++i) {
    auto plus = in.state, minus = in.state;
    plus.values[i] += step;
    minus.values[i] -= step;
    const double fd = (vprir::evaluate(plus, obs).loss - vprir::evaluate(minus, obs).loss) / (2.0 * step);
    worst = std::max(worst, std::abs(ev.gradient[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace oracle
