// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Joint diffusion over positions (zero-CoG subspace) and node features:
// noising, training objective, ancestral sampling, the zeroth likelihood
// decoders and the variational log-likelihood estimator.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edm/distributions.hpp"
#include "edm/egnn.hpp"
#include "edm/errors.hpp"
#include "edm/geometry.hpp"
#include "edm/matrix.hpp"
#include "edm/molecule.hpp"
#include "edm/normal.hpp"
#include "edm/schedule.hpp"
#include "edm/tensor.hpp"

namespace edm {

/// z_t = [z_x, z_h] for one molecule.
struct LatentState {
  Matrix zx;  // M x 3, zero CoG
  Matrix zh;  // M x F
  int t = 0;
};

/// One draw of epsilon = [eps_x (zero CoG), eps_h].
struct NoiseDraw {
  Matrix x;
  Matrix h;
};

inline NoiseDraw draw_noise(std::size_t m, std::size_t features, Rng& rng) {
  NoiseDraw n;
  n.x = geometry::sample_subspace_noise(m, rng);
  n.h = standard_normal(m, features, rng);
  return n;
}

/// Supplies every random quantity consumed by the sampler, so chains can be
/// replayed, rotated or logged.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual NoiseDraw draw(std::size_t m, std::size_t features) = 0;
  virtual double uniform() = 0;
};

class RngNoise final : public NoiseSource {
 public:
  explicit RngNoise(Rng& rng) : rng_(rng) {}
  NoiseDraw draw(std::size_t m, std::size_t features) override { return draw_noise(m, features, rng_); }
  double uniform() override { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_); }

 private:
  Rng& rng_;
};

/// Applies a fixed orthogonal matrix to the positional part of every draw.
class RotatedNoise final : public NoiseSource {
 public:
  RotatedNoise(NoiseSource& inner, Matrix rotation) : inner_(inner), rotation_(std::move(rotation)) {}
  NoiseDraw draw(std::size_t m, std::size_t features) override {
    auto n = inner_.draw(m, features);
    n.x = apply_rotation(rotation_, n.x);
    return n;
  }
  double uniform() override { return inner_.uniform(); }

 private:
  NoiseSource& inner_;
  Matrix rotation_;
};

/// Passes draws through and keeps a copy of each.
class RecordingNoise final : public NoiseSource {
 public:
  explicit RecordingNoise(NoiseSource& inner) : inner_(inner) {}
  NoiseDraw draw(std::size_t m, std::size_t features) override {
    auto n = inner_.draw(m, features);
    draws_.push_back(n);
    return n;
  }
  double uniform() override {
    double u = inner_.uniform();
    uniforms_.push_back(u);
    return u;
  }
  const std::vector<NoiseDraw>& draws() const { return draws_; }
  const std::vector<double>& uniforms() const { return uniforms_; }

 private:
  NoiseSource& inner_;
  std::vector<NoiseDraw> draws_;
  std::vector<double> uniforms_;
};

/// z_t = alpha_t [x, h] + sigma_t eps. Positions must already be centered.
inline LatentState q_sample(const ScaledMolecule& data, int t, const NoiseSchedule& schedule, const NoiseDraw& eps) {
  geometry::require_zero_cog(data.x, "q_sample");
  if (eps.x.rows() != data.x.rows() || eps.h.rows() != data.h.rows() || eps.h.cols() != data.h.cols()) {
    throw std::invalid_argument("q_sample: noise shape does not match the molecule");
  }
  const double a = schedule.alpha(t), s = schedule.sigma(t);
  return {a * data.x + s * eps.x, a * data.h + s * eps.h, t};
}

// ---------------------------------------------------------------------------
// Training objective

enum class LossWeighting { kSimplified, kVariational };

/// Molecules plus per-molecule condition vectors (condition_dim values each).
struct DiffusionBatch {
  std::vector<ScaledMolecule> molecules;
  std::vector<double> conditions;
};

/// Mean over the batch of 1/2 w(t) ||eps - eps_hat||^2, summed jointly over
/// position and feature components. `ts` and `noise` fix the per-molecule
/// timestep and draw. For the variational weighting the weight is the KL
/// weight SNR(t-1)/SNR(t) - 1 and t must be >= 1.
inline ad::Tensor training_loss(const DiffusionBatch& batch, std::span<const int> ts, std::span<const NoiseDraw> noise,
                                const NoiseSchedule& schedule, const Dynamics& dynamics, LossWeighting weighting) {
  const std::size_t n_mol = batch.molecules.size();
  if (n_mol == 0) throw std::invalid_argument("training_loss: empty batch");
  if (ts.size() != n_mol || noise.size() != n_mol) throw std::invalid_argument("training_loss: ts/noise size mismatch");
  const std::size_t f = static_cast<std::size_t>(dynamics.config().features);

  std::vector<std::size_t> sizes;
  for (const auto& m : batch.molecules) sizes.push_back(m.size());
  auto graph = GraphBatch::fully_connected(sizes);

  Matrix zx(graph.n_nodes, 3), zh(graph.n_nodes, f), ex(graph.n_nodes, 3), eh(graph.n_nodes, f);
  std::vector<double> frac(n_mol), node_weight(graph.n_nodes);
  for (std::size_t b = 0; b < n_mol; ++b) {
    const auto& mol = batch.molecules[b];
    if (mol.h.cols() != f) throw std::invalid_argument("training_loss: feature width mismatch");
    auto z = q_sample(mol, ts[b], schedule, noise[b]);
    double w = 1.0;
    if (weighting == LossWeighting::kVariational) w = schedule.kl_weight(ts[b]);
    frac[b] = static_cast<double>(ts[b]) / schedule.steps();
    for (std::size_t i = 0; i < mol.size(); ++i) {
      const std::size_t n = graph.offsets[b] + i;
      for (std::size_t a = 0; a < 3; ++a) {
        zx(n, a) = z.zx(i, a);
        ex(n, a) = noise[b].x(i, a);
      }
      for (std::size_t k = 0; k < f; ++k) {
        zh(n, k) = z.zh(i, k);
        eh(n, k) = noise[b].h(i, k);
      }
      node_weight[n] = 0.5 * w / static_cast<double>(n_mol);
    }
  }
  auto pred = dynamics.forward(graph, ad::Tensor::from_matrix(zx), ad::Tensor::from_matrix(zh), frac, batch.conditions);
  auto err_x = ad::sum_last(ad::square(ad::Tensor::from_matrix(ex) - pred.eps_x));
  auto err_h = ad::sum_last(ad::square(ad::Tensor::from_matrix(eh) - pred.eps_h));
  auto per_node = (err_x + err_h) * ad::Tensor::constant({graph.n_nodes, 1}, std::move(node_weight));
  return ad::sum(per_node);
}

/// Draws t per molecule (uniform over {0..T} for the simplified weighting,
/// {1..T} for the variational one) and fresh noise, then evaluates the loss.
inline ad::Tensor training_loss(const DiffusionBatch& batch, const NoiseSchedule& schedule, const Dynamics& dynamics,
                                Rng& rng, LossWeighting weighting = LossWeighting::kSimplified) {
  const int t_min = weighting == LossWeighting::kSimplified ? 0 : 1;
  std::uniform_int_distribution<int> pick(t_min, schedule.steps());
  std::vector<int> ts;
  std::vector<NoiseDraw> noise;
  for (const auto& m : batch.molecules) {
    ts.push_back(pick(rng));
    noise.push_back(draw_noise(m.size(), m.h.cols(), rng));
  }
  return training_loss(batch, ts, noise, schedule, dynamics, weighting);
}

// ---------------------------------------------------------------------------
// Zeroth-step decoders p(x, h | z_0)

/// Normalized log-probabilities of each atom type given the type channels of
/// z_0 (scaled units). Class k gets mass proportional to the N(z_0k, sigma_0)
/// integral over [1 - 1/2, 1 + 1/2] in unscaled units.
inline std::vector<double> type_log_probs(std::span<const double> z_types, double sigma0, double onehot_scale) {
  const double sigma = sigma0 / onehot_scale;
  std::vector<double> lp(z_types.size());
  for (std::size_t k = 0; k < z_types.size(); ++k) {
    const double u = z_types[k] / onehot_scale;
    lp[k] = stats::log_normal_interval((0.5 - u) / sigma, (1.5 - u) / sigma);
  }
  const double norm = stats::log_sum_exp(lp);
  for (double& v : lp) v -= norm;
  return lp;
}

/// log of the N(z_0, sigma_0) mass on [c - 1/2, c + 1/2] in unscaled charge units.
inline double charge_log_prob(double z_charge, int charge, double sigma0, double charge_scale) {
  const double sigma = sigma0 / charge_scale;
  const double u = z_charge / charge_scale;
  return stats::log_normal_interval((charge - 0.5 - u) / sigma, (charge + 0.5 - u) / sigma);
}

enum class DecodeMode { kSample, kMode };

/// Decodes z_0 given the network's eps_hat_0 for it.
inline Molecule decode_with_prediction(const LatentState& z0, const Matrix& eps_hat_x, const NoiseSchedule& schedule,
                                       const FeatureLayout& layout, NoiseSource& noise, DecodeMode mode) {
  const std::size_t m = z0.zx.rows();
  const double a0 = schedule.alpha(0), s0 = schedule.sigma(0);
  Matrix x = (1.0 / a0) * z0.zx - (s0 / a0) * eps_hat_x;
  std::optional<NoiseDraw> draw;
  if (mode == DecodeMode::kSample) {
    draw = noise.draw(m, layout.width());
    x = x + (s0 / a0) * draw->x;
  }
  Molecule mol;
  mol.positions = (1.0 / layout.scaling.x_scale) * x;
  mol.onehot = Matrix(m, layout.n_types);
  mol.charges.assign(m, 0);
  for (std::size_t i = 0; i < m; ++i) {
    auto row = z0.zh.row(i);
    auto lp = type_log_probs(row.subspan(0, layout.n_types), s0, layout.scaling.onehot_scale);
    std::size_t pick = 0;
    if (mode == DecodeMode::kMode) {
      for (std::size_t k = 1; k < lp.size(); ++k)
        if (lp[k] > lp[pick]) pick = k;
    } else {
      double u = noise.uniform(), acc = 0.0;
      pick = lp.size() - 1;
      for (std::size_t k = 0; k < lp.size(); ++k) {
        acc += std::exp(lp[k]);
        if (u < acc) {
          pick = k;
          break;
        }
      }
    }
    mol.onehot(i, pick) = 1.0;
    if (layout.include_charges) {
      double u = row[layout.n_types] / layout.scaling.charge_scale;
      // Rounding a draw from N(u, sigma) lands in bin c with exactly the
      // integer likelihood's probability.
      if (mode == DecodeMode::kSample) u += (s0 / layout.scaling.charge_scale) * draw->h(i, layout.n_types);
      mol.charges[i] = static_cast<int>(std::lround(u));
    }
  }
  return mol;
}

inline Molecule decode_z0(const LatentState& z0, const Dynamics& dynamics, const NoiseSchedule& schedule,
                          const FeatureLayout& layout, NoiseSource& noise, DecodeMode mode,
                          std::span<const double> condition = {}) {
  auto [eps_x, eps_h] = dynamics.predict(z0.zx, z0.zh, 0, schedule.steps(), condition);
  return decode_with_prediction(z0, eps_x, schedule, layout, noise, mode);
}

// ---------------------------------------------------------------------------
// Ancestral sampling

struct SampleOptions {
  DecodeMode mode = DecodeMode::kSample;
  /// Called with (molecule index, latent) after z_T and after every step.
  std::function<void(std::size_t, const LatentState&)> observer;
};

/// Runs the reverse chain for every molecule of the batch in lockstep.
/// `conditions` holds condition_dim normalized values per molecule.
inline std::vector<Molecule> sample_batch(std::span<const std::size_t> sizes, const NoiseSchedule& schedule,
                                          const Dynamics& dynamics, const FeatureLayout& layout, NoiseSource& noise,
                                          std::span<const double> conditions = {}, const SampleOptions& opts = {}) {
  const std::size_t n_mol = sizes.size();
  if (n_mol == 0) return {};
  const std::size_t f = layout.width();
  if (static_cast<std::size_t>(dynamics.config().features) != f) {
    throw std::invalid_argument("sample: dynamics feature width does not match the layout");
  }
  auto graph = GraphBatch::fully_connected(sizes);
  std::vector<LatentState> z(n_mol);
  const int steps = schedule.steps();
  for (std::size_t b = 0; b < n_mol; ++b) {
    auto d = noise.draw(sizes[b], f);
    z[b] = {std::move(d.x), std::move(d.h), steps};
    if (opts.observer) opts.observer(b, z[b]);
  }

  auto predict = [&](int t) {
    Matrix zx(graph.n_nodes, 3), zh(graph.n_nodes, f);
    for (std::size_t b = 0; b < n_mol; ++b)
      for (std::size_t i = 0; i < sizes[b]; ++i) {
        const std::size_t n = graph.offsets[b] + i;
        for (std::size_t a = 0; a < 3; ++a) zx(n, a) = z[b].zx(i, a);
        for (std::size_t k = 0; k < f; ++k) zh(n, k) = z[b].zh(i, k);
      }
    std::vector<double> frac(n_mol, static_cast<double>(t) / steps);
    auto out = dynamics.forward(graph, ad::Tensor::from_matrix(zx), ad::Tensor::from_matrix(zh), frac, conditions);
    return std::make_pair(out.eps_x.to_matrix(), out.eps_h.to_matrix());
  };
  auto slice = [&](const Matrix& all, std::size_t b) {
    Matrix part(sizes[b], all.cols());
    for (std::size_t i = 0; i < sizes[b]; ++i)
      for (std::size_t c = 0; c < all.cols(); ++c) part(i, c) = all(graph.offsets[b] + i, c);
    return part;
  };

  for (int t = steps; t >= 1; --t) {
    const int s = t - 1;
    auto [alpha_ts, sigma2_ts] = schedule.transition(t, s);
    const double sigma_t = schedule.sigma(t);
    const double sigma_ts_post = std::sqrt(sigma2_ts) * schedule.sigma(s) / sigma_t;
    const double c_eps = sigma2_ts / (alpha_ts * sigma_t);
    auto [ex, eh] = predict(t);
    for (std::size_t b = 0; b < n_mol; ++b) {
      auto fresh = noise.draw(sizes[b], f);
      auto& zb = z[b];
      zb.zx = (1.0 / alpha_ts) * zb.zx - c_eps * slice(ex, b) + sigma_ts_post * fresh.x;
      zb.zh = (1.0 / alpha_ts) * zb.zh - c_eps * slice(eh, b) + sigma_ts_post * fresh.h;
      zb.t = s;
      for (double v : zb.zx.data())
        if (!std::isfinite(v)) throw NumericalError("sampling diverged at step t=" + std::to_string(t));
      if (opts.observer) opts.observer(b, zb);
    }
  }

  auto [ex0, eh0] = predict(0);
  std::vector<Molecule> out;
  out.reserve(n_mol);
  for (std::size_t b = 0; b < n_mol; ++b) {
    out.push_back(decode_with_prediction(z[b], slice(ex0, b), schedule, layout, noise, opts.mode));
  }
  return out;
}

inline Molecule sample(std::size_t m, const NoiseSchedule& schedule, const Dynamics& dynamics,
                       const FeatureLayout& layout, NoiseSource& noise, std::span<const double> condition = {},
                       const SampleOptions& opts = {}) {
  if (m == 0) throw std::invalid_argument("sample: M must be >= 1");
  return sample_batch(std::span<const std::size_t>(&m, 1), schedule, dynamics, layout, noise, condition, opts)[0];
}

// ---------------------------------------------------------------------------
// Log-likelihood terms (all in log-likelihood sign: larger is better)

struct ZerothTerms {
  double x = 0.0;
  double h = 0.0;
};

/// L_0 = log p(x, h | z_0) for z_0 = alpha_0 [x, h] + sigma_0 eps0.
inline ZerothTerms zeroth_terms(const ScaledMolecule& data, const NoiseDraw& eps0, const NoiseSchedule& schedule,
                                const Dynamics& dynamics, const FeatureLayout& layout,
                                std::span<const double> condition = {}) {
  auto z0 = q_sample(data, 0, schedule, eps0);
  auto [eps_x, eps_h] = dynamics.predict(z0.zx, z0.zh, 0, schedule.steps(), condition);
  const double a0 = schedule.alpha(0), s0 = schedule.sigma(0);
  const double dof = static_cast<double>((data.size() - 1) * 3);
  ZerothTerms out;
  out.x = -dof * std::log(std::sqrt(2.0 * std::numbers::pi) * s0 / a0) - 0.5 * squared_norm(eps0.x - eps_x);
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = z0.zh.row(i);
    auto lp = type_log_probs(row.subspan(0, layout.n_types), s0, layout.scaling.onehot_scale);
    std::size_t k_true = 0;
    for (std::size_t k = 0; k < layout.n_types; ++k)
      if (data.h(i, k) > data.h(i, k_true)) k_true = k;
    out.h += lp[k_true];
    if (layout.include_charges) {
      const int charge = static_cast<int>(std::lround(data.h(i, layout.n_types) / layout.scaling.charge_scale));
      out.h += charge_log_prob(row[layout.n_types], charge, s0, layout.scaling.charge_scale);
    }
  }
  return out;
}

/// L_t = -KL(q(z_{t-1} | x, z_t) || p(z_{t-1} | z_t)) for the given draw, t >= 1.
inline double denoising_term(const ScaledMolecule& data, int t, const NoiseDraw& eps, const NoiseSchedule& schedule,
                             const Dynamics& dynamics, std::span<const double> condition = {}) {
  auto z = q_sample(data, t, schedule, eps);
  auto [ex, eh] = dynamics.predict(z.zx, z.zh, t, schedule.steps(), condition);
  return -0.5 * schedule.kl_weight(t) * (squared_norm(eps.x - ex) + squared_norm(eps.h - eh));
}

/// L_base = -KL(q(z_T | x, h) || N_xh(0, I)), with subspace dimension
/// (M-1)*3 for positions and M*F for features.
inline double prior_term(const ScaledMolecule& data, const NoiseSchedule& schedule) {
  const int T = schedule.steps();
  const double a = schedule.alpha(T), s = schedule.sigma(T);
  const long m = static_cast<long>(data.size());
  double kl = geometry::kl_isotropic(a * a * squared_norm(data.h), s, 1.0, m * static_cast<long>(data.h.cols()));
  if (m > 1) kl += geometry::kl_isotropic(a * a * squared_norm(data.x), s, 1.0, (m - 1) * 3);
  return -kl;
}

struct NllTerms {
  std::size_t atoms = 0;
  double nll_total = 0.0;  // -log p(x, h, M)
  double base = 0.0;       // L_base
  double zeroth_x = 0.0;   // L0_x
  double zeroth_h = 0.0;   // L0_h
  double diffusion = 0.0;  // T * L_t
  double log_p_size = 0.0;
};

/// One unbiased draw of the negative variational bound on -log p(x, h, M):
/// t ~ U{1..T} for the diffusion term, a separate z_0 draw for L_0.
inline NllTerms nll_estimate(const ScaledMolecule& data, const NoiseSchedule& schedule, const Dynamics& dynamics,
                             const FeatureLayout& layout, double log_p_size, Rng& rng,
                             std::span<const double> condition = {}) {
  const int T = schedule.steps();
  std::uniform_int_distribution<int> pick(1, T);
  const int t = pick(rng);
  auto eps_t = draw_noise(data.size(), data.h.cols(), rng);
  auto eps_0 = draw_noise(data.size(), data.h.cols(), rng);

  NllTerms out;
  out.atoms = data.size();
  out.diffusion = T * denoising_term(data, t, eps_t, schedule, dynamics, condition);
  auto z = zeroth_terms(data, eps_0, schedule, dynamics, layout, condition);
  out.zeroth_x = z.x;
  out.zeroth_h = z.h;
  out.base = prior_term(data, schedule);
  out.log_p_size = log_p_size;
  const double x_correction = static_cast<double>((data.size() - 1) * 3) * std::log(layout.scaling.x_scale);
  out.nll_total = -(out.diffusion + out.zeroth_x + out.zeroth_h + out.base + log_p_size) - x_correction;
  return out;
}

}  // namespace edm
