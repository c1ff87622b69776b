// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Denoising dynamics: E(3)-equivariant graph network (EGNN) and the
// non-equivariant message-passing baseline (GDM). Molecules in a batch are
// laid out as one disconnected graph so every layer runs as a few large
// matrix products.

#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edm/geometry.hpp"
#include "edm/matrix.hpp"
#include "edm/params.hpp"
#include "edm/tensor.hpp"

namespace edm {

struct DynamicsConfig {
  int n_layers = 9;
  int nf = 256;
  int features = 6;  // F: one-hot width plus optional charge channel
  int condition_dim = 0;
  bool equivariant = true;

  void validate() const {
    if (n_layers < 1) throw std::invalid_argument("DynamicsConfig: n_layers must be >= 1");
    if (nf < 1) throw std::invalid_argument("DynamicsConfig: nf must be >= 1");
    if (features < 1) throw std::invalid_argument("DynamicsConfig: features must be >= 1");
    if (condition_dim < 0) throw std::invalid_argument("DynamicsConfig: condition_dim must be >= 0");
  }
  /// Width of the node input: latent features, t/T, condition.
  int input_width() const { return features + 1 + condition_dim + (equivariant ? 0 : 3); }
  int output_width() const { return equivariant ? features : features + 3; }
};

/// Fully connected graphs (no self loops) over a batch of molecules.
struct GraphBatch {
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> offsets;     // first node of each molecule
  std::vector<std::size_t> node_graph;  // molecule of each node
  std::vector<std::size_t> src;         // receiving node i of edge (i, j)
  std::vector<std::size_t> dst;         // sending node j
  std::size_t n_nodes = 0;

  static GraphBatch fully_connected(std::span<const std::size_t> molecule_sizes) {
    GraphBatch g;
    g.sizes.assign(molecule_sizes.begin(), molecule_sizes.end());
    for (std::size_t b = 0; b < g.sizes.size(); ++b) {
      const std::size_t m = g.sizes[b];
      if (m == 0) throw std::invalid_argument("GraphBatch: molecule " + std::to_string(b) + " has no atoms");
      g.offsets.push_back(g.n_nodes);
      for (std::size_t i = 0; i < m; ++i) g.node_graph.push_back(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j)
          if (i != j) {
            g.src.push_back(g.n_nodes + i);
            g.dst.push_back(g.n_nodes + j);
          }
      g.n_nodes += m;
    }
    return g;
  }

  std::size_t n_graphs() const { return sizes.size(); }
  std::size_t n_edges() const { return src.size(); }
};

namespace nn {

inline std::string layer_prefix(int layer, const char* mlp) {
  return "layer" + std::to_string(layer) + "." + mlp;
}

inline void add_linear(ParameterSet& p, const std::string& prefix, int k, std::size_t in, std::size_t out, Rng& rng,
                       bool zero = false) {
  // Uniform fan-in scaling for both weights and biases.
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  std::vector<double> w(in * out), b(out);
  for (double& v : w) v = zero ? 0.0 : u(rng);
  for (double& v : b) v = zero ? 0.0 : u(rng);
  p.add(prefix + ".w" + std::to_string(k), {in, out}, std::move(w));
  p.add(prefix + ".b" + std::to_string(k), {out}, std::move(b));
}

inline ad::Tensor linear(const ParameterSet& p, const std::string& prefix, int k, const ad::Tensor& x) {
  const auto ks = std::to_string(k);
  return ad::matmul(x, p.at(prefix + ".w" + ks)) + p.at(prefix + ".b" + ks);
}

/// Squared distances |x_i - x_j|^2 per edge, shape [E, 1].
inline ad::Tensor edge_sq_dist(const GraphBatch& g, const ad::Tensor& x) {
  auto diff = ad::gather_rows(x, g.src) - ad::gather_rows(x, g.dst);
  return ad::sum_last(ad::square(diff));
}

/// Subtract each molecule's mean from its rows of an [N, 3] tensor.
inline ad::Tensor remove_cog(const GraphBatch& g, const ad::Tensor& x) {
  std::vector<double> inv(g.n_graphs());
  for (std::size_t b = 0; b < g.n_graphs(); ++b) inv[b] = 1.0 / static_cast<double>(g.sizes[b]);
  auto totals = ad::scatter_add_rows(x, g.node_graph, g.n_graphs());
  auto means = totals * ad::Tensor::constant({g.n_graphs(), 1}, std::move(inv));
  return x - ad::gather_rows(means, g.node_graph);
}

}  // namespace nn

/// Parameters for an EGNN (or GDM) stack with the configured widths.
/// Paths: "embed.{w,b}0", "layer{i}.phi_{e,inf,h,x}.{w,b}{k}", "decode.{w,b}0".
inline ParameterSet init_dynamics_params(const DynamicsConfig& cfg, Rng& rng) {
  cfg.validate();
  ParameterSet p;
  const std::size_t nf = static_cast<std::size_t>(cfg.nf);
  nn::add_linear(p, "embed", 0, static_cast<std::size_t>(cfg.input_width()), nf, rng);
  const std::size_t edge_in = cfg.equivariant ? 2 * nf + 2 : 2 * nf + 1;
  for (int l = 0; l < cfg.n_layers; ++l) {
    nn::add_linear(p, nn::layer_prefix(l, "phi_e"), 0, edge_in, nf, rng);
    nn::add_linear(p, nn::layer_prefix(l, "phi_e"), 1, nf, nf, rng);
    nn::add_linear(p, nn::layer_prefix(l, "phi_inf"), 0, nf, 1, rng);
    nn::add_linear(p, nn::layer_prefix(l, "phi_h"), 0, 2 * nf, nf, rng);
    nn::add_linear(p, nn::layer_prefix(l, "phi_h"), 1, nf, nf, rng);
    if (cfg.equivariant) {
      nn::add_linear(p, nn::layer_prefix(l, "phi_x"), 0, edge_in, nf, rng);
      nn::add_linear(p, nn::layer_prefix(l, "phi_x"), 1, nf, nf, rng);
      // Zero last layer: coordinate updates start at exactly zero.
      nn::add_linear(p, nn::layer_prefix(l, "phi_x"), 2, nf, 1, rng, /*zero=*/true);
    }
  }
  nn::add_linear(p, "decode", 0, nf, static_cast<std::size_t>(cfg.output_width()), rng);
  return p;
}

/// Overwrite every parameter with U(-scale, scale) draws (tests and oracles).
inline void randomize_params(ParameterSet& p, Rng& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& [_, t] : p)
    for (double& v : t.mutable_values()) v = u(rng);
}

struct EgclOutput {
  ad::Tensor x;
  ad::Tensor h;
};

/// One equivariant graph convolution layer. `edge_attr` is [E, 1].
inline EgclOutput egcl_forward(const ParameterSet& p, int layer, const GraphBatch& g, const ad::Tensor& x,
                               const ad::Tensor& h, const ad::Tensor& edge_attr) {
  if (g.n_nodes == 0) throw std::invalid_argument("egcl_forward: empty graph");
  const auto pe = nn::layer_prefix(layer, "phi_e");
  const auto pinf = nn::layer_prefix(layer, "phi_inf");
  const auto ph = nn::layer_prefix(layer, "phi_h");
  const auto px = nn::layer_prefix(layer, "phi_x");

  auto diff = ad::gather_rows(x, g.src) - ad::gather_rows(x, g.dst);
  auto d2 = ad::sum_last(ad::square(diff));
  auto edge_in = ad::concat_last({ad::gather_rows(h, g.src), ad::gather_rows(h, g.dst), d2, edge_attr});

  auto m = ad::silu(nn::linear(p, pe, 1, ad::silu(nn::linear(p, pe, 0, edge_in))));
  auto att = ad::sigmoid(nn::linear(p, pinf, 0, m));
  auto agg = ad::scatter_add_rows(m * att, g.src, g.n_nodes);
  auto h_next = h + nn::linear(p, ph, 1, ad::silu(nn::linear(p, ph, 0, ad::concat_last({h, agg}))));

  auto coord = nn::linear(p, px, 2, ad::silu(nn::linear(p, px, 1, ad::silu(nn::linear(p, px, 0, edge_in)))));
  auto dist = ad::sqrt(d2);
  auto shift = diff / (dist + 1.0) * coord;
  auto x_next = x + ad::scatter_add_rows(shift, g.src, g.n_nodes);
  return {x_next, h_next};
}

/// Embedding, L EGCL layers, decoding. Edge attributes are the squared input
/// distances, fixed across layers.
inline EgclOutput egnn_forward(const ParameterSet& p, const DynamicsConfig& cfg, const GraphBatch& g,
                               const ad::Tensor& x, const ad::Tensor& h_in) {
  auto edge_attr = nn::edge_sq_dist(g, x);
  auto h = nn::linear(p, "embed", 0, h_in);
  auto xl = x;
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto out = egcl_forward(p, l, g, xl, h, edge_attr);
    xl = out.x;
    h = out.h;
  }
  return {xl, nn::linear(p, "decode", 0, h)};
}

/// Message-passing baseline where coordinates are plain node features.
inline ad::Tensor gdm_forward(const ParameterSet& p, const DynamicsConfig& cfg, const GraphBatch& g,
                              const ad::Tensor& x, const ad::Tensor& h_in) {
  auto edge_attr = nn::edge_sq_dist(g, x);
  auto h = nn::linear(p, "embed", 0, ad::concat_last({x, h_in}));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto pe = nn::layer_prefix(l, "phi_e");
    const auto pinf = nn::layer_prefix(l, "phi_inf");
    const auto ph = nn::layer_prefix(l, "phi_h");
    auto edge_in = ad::concat_last({ad::gather_rows(h, g.src), ad::gather_rows(h, g.dst), edge_attr});
    auto m = ad::silu(nn::linear(p, pe, 1, ad::silu(nn::linear(p, pe, 0, edge_in))));
    auto att = ad::sigmoid(nn::linear(p, pinf, 0, m));
    auto agg = ad::scatter_add_rows(m * att, g.src, g.n_nodes);
    h = h + nn::linear(p, ph, 1, ad::silu(nn::linear(p, ph, 0, ad::concat_last({h, agg}))));
  }
  return nn::linear(p, "decode", 0, h);
}

/// Noise prediction network phi(z_t, t [, c]).
class Dynamics {
 public:
  Dynamics() = default;
  Dynamics(DynamicsConfig cfg, ParameterSet params) : cfg_(cfg), params_(std::move(params)) { cfg_.validate(); }

  static Dynamics create(const DynamicsConfig& cfg, Rng& rng) { return Dynamics(cfg, init_dynamics_params(cfg, rng)); }

  const DynamicsConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }

  struct Prediction {
    ad::Tensor eps_x;  // [N, 3], zero CoG per molecule
    ad::Tensor eps_h;  // [N, F]
  };

  /// Batched prediction. `time_frac` holds t/T per molecule; `condition`
  /// holds condition_dim values per molecule (row-major) or is empty.
  Prediction forward(const GraphBatch& g, const ad::Tensor& zx, const ad::Tensor& zh, std::span<const double> time_frac,
                     std::span<const double> condition = {}) const {
    const auto n_graphs = g.n_graphs();
    const auto cdim = static_cast<std::size_t>(cfg_.condition_dim);
    if (zx.rank() != 2 || zx.dim(0) != g.n_nodes || zx.dim(1) != 3) {
      throw ad::ShapeError("Dynamics: z_x has shape " + ad::to_string(zx.shape()));
    }
    if (zh.rank() != 2 || zh.dim(0) != g.n_nodes || zh.dim(1) != static_cast<std::size_t>(cfg_.features)) {
      throw ad::ShapeError("Dynamics: z_h has shape " + ad::to_string(zh.shape()) + ", expected F=" +
                           std::to_string(cfg_.features));
    }
    if (time_frac.size() != n_graphs) throw std::invalid_argument("Dynamics: one t/T value per molecule required");
    if (condition.size() != n_graphs * cdim) {
      throw std::invalid_argument("Dynamics: expected " + std::to_string(n_graphs * cdim) + " condition values, got " +
                                  std::to_string(condition.size()));
    }
    const auto zx_values = zx.to_matrix();
    for (std::size_t b = 0; b < n_graphs; ++b) {
      Matrix part(g.sizes[b], 3);
      for (std::size_t i = 0; i < g.sizes[b]; ++i)
        for (std::size_t a = 0; a < 3; ++a) part(i, a) = zx_values(g.offsets[b] + i, a);
      geometry::require_zero_cog(part, "Dynamics");
    }

    std::vector<double> extra(g.n_nodes * (1 + cdim));
    for (std::size_t n = 0; n < g.n_nodes; ++n) {
      const auto b = g.node_graph[n];
      extra[n * (1 + cdim)] = time_frac[b];
      for (std::size_t c = 0; c < cdim; ++c) extra[n * (1 + cdim) + 1 + c] = condition[b * cdim + c];
    }
    auto h_in = ad::concat_last({zh, ad::Tensor::constant({g.n_nodes, 1 + cdim}, std::move(extra))});

    if (cfg_.equivariant) {
      auto out = egnn_forward(params_, cfg_, g, zx, h_in);
      return {nn::remove_cog(g, out.x - zx), out.h};
    }
    auto out = gdm_forward(params_, cfg_, g, zx, h_in);
    return {nn::remove_cog(g, ad::slice_last(out, 0, 3)), ad::slice_last(out, 3, out.dim(1))};
  }

  /// Single-molecule convenience wrapper returning plain matrices.
  std::pair<Matrix, Matrix> predict(const Matrix& zx, const Matrix& zh, int t, int steps,
                                    std::span<const double> condition = {}) const {
    const std::size_t m = zx.rows();
    auto g = GraphBatch::fully_connected(std::span<const std::size_t>(&m, 1));
    const double frac = static_cast<double>(t) / static_cast<double>(steps);
    auto out = forward(g, ad::Tensor::from_matrix(zx), ad::Tensor::from_matrix(zh), std::span<const double>(&frac, 1),
                       condition);
    return {out.eps_x.to_matrix(), out.eps_h.to_matrix()};
  }

 private:
  DynamicsConfig cfg_;
  ParameterSet params_;
};

}  // namespace edm
