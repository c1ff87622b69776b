// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Empirical categorical distributions over molecule size p(M) and over
// (property bin, size) p(c, M).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "edm/matrix.hpp"

namespace edm {

class SizeDistribution {
 public:
  SizeDistribution() = default;

  static SizeDistribution fit(std::span<const std::size_t> sizes) {
    if (sizes.empty()) throw std::invalid_argument("SizeDistribution: empty dataset");
    std::map<std::size_t, std::size_t> counts;
    for (auto m : sizes) ++counts[m];
    return from_counts(counts);
  }

  static SizeDistribution from_counts(const std::map<std::size_t, std::size_t>& counts) {
    SizeDistribution d;
    std::size_t total = 0;
    for (const auto& [m, c] : counts) total += c;
    if (total == 0) throw std::invalid_argument("SizeDistribution: no observations");
    for (const auto& [m, c] : counts) {
      if (c == 0) continue;
      d.counts_[m] = c;
      d.probs_[m] = static_cast<double>(c) / static_cast<double>(total);
    }
    return d;
  }

  bool empty() const { return probs_.empty(); }
  const std::map<std::size_t, double>& probabilities() const { return probs_; }
  const std::map<std::size_t, std::size_t>& counts() const { return counts_; }

  double prob(std::size_t m) const {
    auto it = probs_.find(m);
    return it == probs_.end() ? 0.0 : it->second;
  }
  double log_prob(std::size_t m) const {
    const double p = prob(m);
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  }

  std::size_t sample(Rng& rng) const {
    if (probs_.empty()) throw std::logic_error("SizeDistribution: sampling from an empty distribution");
    std::vector<std::size_t> support;
    std::vector<double> weights;
    for (const auto& [m, p] : probs_) {
      support.push_back(m);
      weights.push_back(p);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    return support[pick(rng)];
  }

 private:
  std::map<std::size_t, std::size_t> counts_;
  std::map<std::size_t, double> probs_;
};

/// Joint histogram over uniform-width property bins and molecule size.
class ConditionDistribution {
 public:
  ConditionDistribution() = default;

  static ConditionDistribution fit(std::span<const double> values, std::span<const std::size_t> sizes, int n_bins) {
    if (values.empty() || values.size() != sizes.size()) {
      throw std::invalid_argument("ConditionDistribution: need one property value per molecule");
    }
    if (n_bins < 1) throw std::invalid_argument("ConditionDistribution: n_bins must be >= 1");
    ConditionDistribution d;
    d.lo_ = *std::min_element(values.begin(), values.end());
    d.hi_ = *std::max_element(values.begin(), values.end());
    if (d.hi_ <= d.lo_) d.hi_ = d.lo_ + 1.0;  // a single value still gets one finite bin
    d.n_bins_ = n_bins;
    for (std::size_t i = 0; i < values.size(); ++i) ++d.counts_[{d.bin_of(values[i]), sizes[i]}];
    d.normalize();
    return d;
  }

  static ConditionDistribution from_counts(double lo, double hi, int n_bins,
                                           std::map<std::pair<int, std::size_t>, std::size_t> counts) {
    ConditionDistribution d;
    d.lo_ = lo;
    d.hi_ = hi;
    d.n_bins_ = n_bins;
    d.counts_ = std::move(counts);
    d.normalize();
    return d;
  }

  int n_bins() const { return n_bins_; }
  double lower() const { return lo_; }
  double upper() const { return hi_; }
  double bin_width() const { return (hi_ - lo_) / n_bins_; }
  const std::map<std::pair<int, std::size_t>, double>& probabilities() const { return probs_; }
  const std::map<std::pair<int, std::size_t>, std::size_t>& counts() const { return counts_; }

  /// Values outside the fitted range fall into the nearest edge bin.
  int bin_of(double c) const {
    int b = static_cast<int>(std::floor((c - lo_) / bin_width()));
    return std::clamp(b, 0, n_bins_ - 1);
  }
  double bin_center(int b) const { return lo_ + (b + 0.5) * bin_width(); }

  double prob(int bin, std::size_t m) const {
    auto it = probs_.find({bin, m});
    return it == probs_.end() ? 0.0 : it->second;
  }

  /// Marginal over the property bins.
  std::map<std::size_t, double> size_marginal() const {
    std::map<std::size_t, double> out;
    for (const auto& [key, p] : probs_) out[key.second] += p;
    return out;
  }

  /// (bin-center property value, M) drawn jointly.
  std::pair<double, std::size_t> sample(Rng& rng) const {
    auto [keys, weights] = flatten([](int) { return true; });
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    const auto& key = keys[pick(rng)];
    return {bin_center(key.first), key.second};
  }

  /// M ~ p(M | bin(c)).
  std::size_t sample_size_given(double c, Rng& rng) const {
    const int bin = bin_of(c);
    auto [keys, weights] = flatten([bin](int b) { return b == bin; });
    if (keys.empty()) throw std::invalid_argument("ConditionDistribution: no molecules in the bin of c");
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    return keys[pick(rng)].second;
  }

 private:
  template <typename Pred>
  std::pair<std::vector<std::pair<int, std::size_t>>, std::vector<double>> flatten(Pred keep) const {
    std::vector<std::pair<int, std::size_t>> keys;
    std::vector<double> weights;
    for (const auto& [key, p] : probs_) {
      if (!keep(key.first)) continue;
      keys.push_back(key);
      weights.push_back(p);
    }
    if (keys.empty() && probs_.empty()) throw std::logic_error("ConditionDistribution: empty distribution");
    return {keys, weights};
  }

  void normalize() {
    std::size_t total = 0;
    for (const auto& [_, c] : counts_) total += c;
    if (total == 0) throw std::invalid_argument("ConditionDistribution: no observations");
    probs_.clear();
    for (const auto& [key, c] : counts_) probs_[key] = static_cast<double>(c) / static_cast<double>(total);
  }

  double lo_ = 0.0, hi_ = 1.0;
  int n_bins_ = 1;
  std::map<std::pair<int, std::size_t>, std::size_t> counts_;
  std::map<std::pair<int, std::size_t>, double> probs_;
};

/// Zero-mean, unit-variance normalization of a scalar property.
struct ConditionNormalizer {
  double mean = 0.0;
  double stddev = 1.0;

  static ConditionNormalizer fit(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("ConditionNormalizer: no values");
    double m = 0.0;
    for (double v : values) m += v;
    m /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - m) * (v - m);
    var /= static_cast<double>(values.size());
    return {m, var > 0.0 ? std::sqrt(var) : 1.0};
  }
  double normalize(double c) const { return (c - mean) / stddev; }
};

}  // namespace edm
