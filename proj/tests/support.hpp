// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Fixtures shared by the unit suites and the acceptance runner.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <vector>

#include "edm/edm.hpp"

namespace edm::testing {

/// Random centered point set.
inline Matrix centered_points(std::size_t m, Rng& rng, double scale = 1.0) {
  return geometry::remove_cog(scale * standard_normal(m, 3, rng));
}

inline DynamicsConfig tiny_config(int layers, int nf, int features, int condition_dim = 0, bool equivariant = true) {
  DynamicsConfig c;
  c.n_layers = layers;
  c.nf = nf;
  c.features = features;
  c.condition_dim = condition_dim;
  c.equivariant = equivariant;
  return c;
}

/// Dynamics with every parameter drawn uniformly from [-scale, scale], so
/// no layer (including the zero-initialized coordinate head) is degenerate.
inline Dynamics random_dynamics(const DynamicsConfig& cfg, Rng& rng, double scale = 0.5) {
  auto params = init_dynamics_params(cfg, rng);
  randomize_params(params, rng, scale);
  return Dynamics(cfg, std::move(params));
}

/// Dynamics whose every parameter is zero; it predicts eps_hat = 0.
inline Dynamics zero_dynamics(const DynamicsConfig& cfg) {
  Rng rng(0);
  auto params = init_dynamics_params(cfg, rng);
  for (auto& [_, t] : params)
    for (double& v : t.mutable_values()) v = 0.0;
  return Dynamics(cfg, std::move(params));
}

/// Random molecule with centered positions, K types and charges in [0, 3).
inline Molecule random_molecule(std::size_t m, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> type(0, k - 1);
  std::uniform_int_distribution<int> charge(0, 2);
  std::vector<std::size_t> types(m);
  std::vector<int> charges(m);
  for (std::size_t i = 0; i < m; ++i) {
    types[i] = type(rng);
    charges[i] = charge(rng);
  }
  return Molecule::from_types(centered_points(m, rng), types, k, charges);
}

/// Methane in Angstrom: C at the origin, four H at 1.09 on tetrahedral directions.
inline Matrix methane_positions() {
  const double d = 1.09 / std::sqrt(3.0);
  return Matrix(5, 3, {0, 0, 0, d, d, d, d, -d, -d, -d, d, -d, -d, -d, d});
}

/// Sample mean and its standard error.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSe mean_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

/// Central finite-difference gradient of f over every parameter value,
/// compared against the recorded-graph gradient. Returns the worst relative
/// error, using max(|a|, |n|, floor) as the denominator.
inline double worst_gradient_error(ParameterSet& params, const std::function<ad::Tensor()>& loss_fn,
                                   double step = 1e-5, double floor = 1e-6) {
  params.zero_grad();
  auto loss = loss_fn();
  ad::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& [_, t] : params) {
    if (t.has_grad()) {
      analytic.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      analytic.emplace_back(t.numel(), 0.0);
    }
  }
  double worst = 0.0;
  std::size_t p = 0;
  for (auto& [_, t] : params) {
    auto w = t.mutable_values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double orig = w[k];
      w[k] = orig + step;
      const double up = loss_fn().item();
      w[k] = orig - step;
      const double down = loss_fn().item();
      w[k] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[p][k];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    ++p;
  }
  return worst;
}

}  // namespace edm::testing
