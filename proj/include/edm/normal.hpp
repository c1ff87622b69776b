// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>

namespace edm::stats {

/// log of the standard normal upper tail Q(x) = 1 - Phi(x).
inline double log_upper_tail(double x) {
  if (x < 30.0) return std::log(0.5 * std::erfc(x / std::numbers::sqrt2));
  // Asymptotic expansion; relative error below 1e-11 for x >= 30.
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) + 105.0 / (x2 * x2 * x2 * x2);
  return -0.5 * x2 - std::log(x) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// log(Phi(b) - Phi(a)) for a < b, accurate far into either tail.
inline double log_normal_interval(double a, double b) {
  if (!(a < b)) throw std::invalid_argument("log_normal_interval: need a < b");
  if (a > 0.0) {
    const double la = log_upper_tail(a), lb = log_upper_tail(b);
    return la + std::log1p(-std::exp(lb - la));
  }
  if (b < 0.0) {
    const double la = log_upper_tail(-b), lb = log_upper_tail(-a);
    return la + std::log1p(-std::exp(lb - la));
  }
  return std::log1p(-(std::exp(log_upper_tail(b)) + std::exp(log_upper_tail(-a))));
}

inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace edm::stats
