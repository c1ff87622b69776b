// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Gaussians on the linear subspace of point clouds with zero center of
// gravity, and the KL divergences used by the variational bound.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

#include "edm/matrix.hpp"

namespace edm::geometry {

inline constexpr std::size_t kSpatialDims = 3;

/// Per-axis sum of the points.
inline std::array<double, 3> center_sum(const PointSet& p) {
  std::array<double, 3> s{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t a = 0; a < 3; ++a) s[a] += p(i, a);
  return s;
}

/// Largest absolute per-axis mean.
inline double cog_magnitude(const PointSet& p) {
  if (p.rows() == 0) return 0.0;
  auto s = center_sum(p);
  double m = 0.0;
  for (double v : s) m = std::max(m, std::abs(v) / static_cast<double>(p.rows()));
  return m;
}

/// |sum_i x_i| < 1e-9 M per axis, with the bound scaled up for coordinates
/// larger than 1 so rounding in huge (diverging) latents is not mistaken
/// for an uncentered input.
inline bool is_zero_cog(const PointSet& p) {
  auto s = center_sum(p);
  double scale = 1.0;
  for (double v : p.data()) scale = std::max(scale, std::abs(v));
  const double tol = 1e-9 * static_cast<double>(std::max<std::size_t>(p.rows(), 1)) * scale;
  for (double v : s)
    if (!(std::abs(v) < tol)) return false;
  return true;
}

inline void require_zero_cog(const PointSet& p, const char* who) {
  if (p.cols() != 3) throw std::invalid_argument(std::string(who) + ": expected Mx3 points");
  if (!is_zero_cog(p)) {
    auto s = center_sum(p);
    throw std::invalid_argument(std::string(who) + ": input is not centered (sum = " + std::to_string(s[0]) + ", " +
                                std::to_string(s[1]) + ", " + std::to_string(s[2]) + ")");
  }
}

inline PointSet remove_cog(const PointSet& p) {
  if (p.rows() == 0) throw std::invalid_argument("remove_cog: empty point set");
  auto s = center_sum(p);
  PointSet out = p;
  const double inv = 1.0 / static_cast<double>(p.rows());
  for (std::size_t i = 0; i < p.rows(); ++i)
    for (std::size_t a = 0; a < 3; ++a) out(i, a) -= s[a] * inv;
  return out;
}

/// Isotropic standard normal restricted to the zero-CoG subspace: sample in
/// the ambient space and project.
inline PointSet sample_subspace_noise(std::size_t m, Rng& rng) {
  if (m == 0) throw std::invalid_argument("sample_subspace_noise: M must be >= 1");
  return remove_cog(standard_normal(m, 3, rng));
}

/// log N_x(x | mu, sigma^2 I) on the (M-1)*3 dimensional subspace.
inline double subspace_gaussian_logpdf(const PointSet& x, const PointSet& mu, double sigma) {
  if (x.rows() != mu.rows() || x.cols() != 3 || mu.cols() != 3) {
    throw std::invalid_argument("subspace_gaussian_logpdf: shape mismatch " + shape_string(x.rows(), x.cols()) +
                                " vs " + shape_string(mu.rows(), mu.cols()));
  }
  if (!(sigma > 0.0)) throw std::invalid_argument("subspace_gaussian_logpdf: sigma must be positive");
  require_zero_cog(x, "subspace_gaussian_logpdf(x)");
  require_zero_cog(mu, "subspace_gaussian_logpdf(mu)");
  const double dof = static_cast<double>((x.rows() - 1) * kSpatialDims);
  const double log_norm = std::log(std::sqrt(2.0 * std::numbers::pi) * sigma);
  return -dof * log_norm - squared_norm(x - mu) / (2.0 * sigma * sigma);
}

/// KL(N(mu1, s^2 I) || N(mu2, s^2 I)) for means of any (matching) shape.
inline double kl_equal_sigma(const Matrix& mu1, const Matrix& mu2, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("kl_equal_sigma: sigma must be positive");
  return squared_norm(mu1 - mu2) / (2.0 * sigma * sigma);
}

/// KL between isotropic Gaussians of effective dimension d, given the squared
/// distance between means.
inline double kl_isotropic(double mean_sq_dist, double sigma1, double sigma2, long d) {
  if (d <= 0) throw std::invalid_argument("kl_isotropic: dimension must be positive, got " + std::to_string(d));
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) throw std::invalid_argument("kl_isotropic: sigmas must be positive");
  const double dd = static_cast<double>(d);
  return dd * std::log(sigma2 / sigma1) + (dd * sigma1 * sigma1 + mean_sq_dist) / (2.0 * sigma2 * sigma2) - dd / 2.0;
}

inline double kl_isotropic(const Matrix& mu1, double sigma1, const Matrix& mu2, double sigma2, long d) {
  return kl_isotropic(squared_norm(mu1 - mu2), sigma1, sigma2, d);
}

inline double determinant3(const Matrix& q) {
  return q(0, 0) * (q(1, 1) * q(2, 2) - q(1, 2) * q(2, 1)) - q(0, 1) * (q(1, 0) * q(2, 2) - q(1, 2) * q(2, 0)) +
         q(0, 2) * (q(1, 0) * q(2, 1) - q(1, 1) * q(2, 0));
}

/// Haar-distributed orthogonal 3x3 matrix via Gram-Schmidt of a Gaussian
/// matrix. Without reflections the sign of one column is flipped as needed.
inline Matrix random_orthogonal(Rng& rng, bool allow_reflection) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix q(3, 3);
  for (;;) {
    for (double& v : q.data()) v = normal(rng);
    bool degenerate = false;
    for (std::size_t c = 0; c < 3 && !degenerate; ++c) {
      // Two passes of classical Gram-Schmidt keep the residual at round-off.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t p = 0; p < c; ++p) {
          double dot = 0.0;
          for (std::size_t r = 0; r < 3; ++r) dot += q(r, c) * q(r, p);
          for (std::size_t r = 0; r < 3; ++r) q(r, c) -= dot * q(r, p);
        }
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < 3; ++r) norm += q(r, c) * q(r, c);
      norm = std::sqrt(norm);
      if (norm < 1e-8) {
        degenerate = true;
        break;
      }
      for (std::size_t r = 0; r < 3; ++r) q(r, c) /= norm;
    }
    if (!degenerate) break;
  }
  if (!allow_reflection && determinant3(q) < 0.0) {
    for (std::size_t r = 0; r < 3; ++r) q(r, 2) = -q(r, 2);
  }
  return q;
}

inline Matrix identity3() {
  Matrix m(3, 3);
  for (std::size_t i = 0; i < 3; ++i) m(i, i) = 1.0;
  return m;
}

}  // namespace edm::geometry
