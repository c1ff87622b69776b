// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "edm/matrix.hpp"
#include "edm/tensor.hpp"

namespace edm {

struct GaussianPosterior {
  Matrix mean;
  double sigma;
};

/// q(z_s | x, z_t) from the transition coefficients alpha_{t|s}, sigma_{t|s}^2
/// and the marginal coefficients at s and t.
inline GaussianPosterior gaussian_posterior(double alpha_ts, double sigma2_ts, double alpha_s, double sigma2_s,
                                            double sigma2_t, const Matrix& x, const Matrix& z_t) {
  if (x.rows() != z_t.rows() || x.cols() != z_t.cols()) {
    throw std::invalid_argument("posterior: shape mismatch " + shape_string(x.rows(), x.cols()) + " vs " +
                                shape_string(z_t.rows(), z_t.cols()));
  }
  const double cz = alpha_ts * sigma2_s / sigma2_t;
  const double cx = alpha_s * sigma2_ts / sigma2_t;
  Matrix mean(x.rows(), x.cols());
  for (std::size_t k = 0; k < mean.size(); ++k) mean.data()[k] = cz * z_t.data()[k] + cx * x.data()[k];
  return {std::move(mean), std::sqrt(sigma2_ts) * std::sqrt(sigma2_s) / std::sqrt(sigma2_t)};
}

/// Variance-preserving noise schedule tabulated for t = 0..T.
///
/// The polynomial alpha curve is clipped so that every per-step retention
/// alpha_{t|t-1}^2 is at least 0.001, then rebuilt as a cumulative product.
/// gamma(t) = log(sigma_t^2 / alpha_t^2) is the canonical quantity; the
/// squared coefficients are derived from it through sigmoids.
class NoiseSchedule {
 public:
  static constexpr double kStepClip = 0.001;

  static NoiseSchedule polynomial(int steps, double precision = 1e-5) {
    if (steps < 1) throw std::invalid_argument("NoiseSchedule: T must be >= 1, got " + std::to_string(steps));
    if (!(precision > 0.0 && precision < 0.5)) {
      throw std::invalid_argument("NoiseSchedule: s must lie in (0, 0.5), got " + std::to_string(precision));
    }
    NoiseSchedule s;
    s.steps_ = steps;
    s.precision_ = precision;
    const auto n = static_cast<std::size_t>(steps) + 1;
    s.raw_alpha_.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double u = static_cast<double>(t) / steps;
      s.raw_alpha_[t] = (1.0 - 2.0 * precision) * (1.0 - u * u) + precision;
    }
    s.alpha_.resize(n);
    s.sigma_.resize(n);
    s.gamma_.resize(n);
    s.step_alpha2_.resize(n);
    double prev = 1.0;
    double cum = 1.0;
    for (std::size_t t = 0; t < n; ++t) {
      double ratio2 = (s.raw_alpha_[t] / prev) * (s.raw_alpha_[t] / prev);
      if (ratio2 < kStepClip) ratio2 = kStepClip;
      s.step_alpha2_[t] = ratio2;
      cum *= std::sqrt(ratio2);
      prev = s.raw_alpha_[t];
      s.alpha_[t] = cum;
    }
    for (std::size_t t = 0; t < n; ++t) {
      const double a2 = s.alpha_[t] * s.alpha_[t];
      const double s2 = 1.0 - a2;
      s.sigma_[t] = std::sqrt(s2);
      s.gamma_[t] = std::log(s2) - std::log(a2);
    }
    return s;
  }

  int steps() const { return steps_; }
  double precision() const { return precision_; }

  double gamma(int t) const { return gamma_[check(t)]; }
  double alpha2(int t) const { return ad::sigmoid_scalar(-gamma(t)); }
  double sigma2(int t) const { return ad::sigmoid_scalar(gamma(t)); }
  double alpha(int t) const { return std::sqrt(alpha2(t)); }
  double sigma(int t) const { return std::sqrt(sigma2(t)); }
  double snr(int t) const { return std::exp(-gamma(t)); }

  /// Raw tabulated values (after clipping and the cumulative product).
  const std::vector<double>& alpha_table() const { return alpha_; }
  const std::vector<double>& sigma_table() const { return sigma_; }
  const std::vector<double>& gamma_table() const { return gamma_; }
  /// alpha_{t|t-1}^2 after clipping, with alpha_{-1} = 1.
  const std::vector<double>& step_alpha2_table() const { return step_alpha2_; }
  /// The unclipped polynomial (1 - 2s)(1 - (t/T)^2) + s.
  const std::vector<double>& polynomial_alpha_table() const { return raw_alpha_; }

  struct Transition {
    double alpha_ts;   // alpha_{t|s}
    double sigma2_ts;  // sigma_{t|s}^2
  };

  /// q(z_t | z_s) coefficients for s < t.
  Transition transition(int t, int s) const {
    check(t);
    check(s);
    if (s >= t) {
      throw std::invalid_argument("transition: need s < t, got s=" + std::to_string(s) + " t=" + std::to_string(t));
    }
    // alpha_{t|s}^2 = sigmoid(-g_t) / sigmoid(-g_s); sigma_{t|s}^2 = -expm1(softplus(g_s) - softplus(g_t)).
    const double log_a2_t = -softplus(gamma(t));
    const double log_a2_s = -softplus(gamma(s));
    const double alpha_ts = std::exp(0.5 * (log_a2_t - log_a2_s));
    const double sigma2_ts = -std::expm1(log_a2_t - log_a2_s);
    return {alpha_ts, sigma2_ts < 0.0 ? 0.0 : sigma2_ts};
  }

  /// q(z_s | x, z_t) for s < t.
  GaussianPosterior posterior(int t, int s, const Matrix& x, const Matrix& z_t) const {
    auto [alpha_ts, sigma2_ts] = transition(t, s);
    return gaussian_posterior(alpha_ts, sigma2_ts, alpha(s), sigma2(s), sigma2(t), x, z_t);
  }

  /// SNR(t-1)/SNR(t) - 1, the per-step weight of the KL term (>= 0). The
  /// log-likelihood weight w(t) = 1 - SNR(t-1)/SNR(t) is its negation.
  double kl_weight(int t) const {
    check(t);
    if (t < 1) throw std::invalid_argument("kl_weight: t must be >= 1");
    return std::expm1(gamma(t) - gamma(t - 1));
  }

 private:
  static double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

  std::size_t check(int t) const {
    if (t < 0 || t > steps_) {
      throw std::out_of_range("NoiseSchedule: t=" + std::to_string(t) + " outside [0, " + std::to_string(steps_) + "]");
    }
    return static_cast<std::size_t>(t);
  }

  int steps_ = 0;
  double precision_ = 1e-5;
  std::vector<double> raw_alpha_, alpha_, sigma_, gamma_, step_alpha2_;
};

}  // namespace edm
