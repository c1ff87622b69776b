// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "edm/tensor.hpp"

namespace edm {

/// Named trainable tensors, iterated in insertion order.
class ParameterSet {
 public:
  ad::Tensor& add(const std::string& path, ad::Shape shape, std::vector<double> values) {
    if (index_.count(path)) throw std::invalid_argument("ParameterSet: duplicate parameter path '" + path + "'");
    index_.emplace(path, entries_.size());
    entries_.emplace_back(path, ad::Tensor::parameter(std::move(shape), std::move(values)));
    return entries_.back().second;
  }

  bool contains(const std::string& path) const { return index_.count(path) != 0; }

  const ad::Tensor& at(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw std::out_of_range("ParameterSet: no parameter '" + path + "'");
    return entries_[it->second].second;
  }
  ad::Tensor& at(const std::string& path) {
    return const_cast<ad::Tensor&>(std::as_const(*this).at(path));
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  /// Deep copy with fresh (gradient-free) leaves.
  ParameterSet clone() const {
    ParameterSet out;
    for (const auto& [path, t] : entries_) {
      out.add(path, t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
    }
    return out;
  }

 private:
  std::vector<std::pair<std::string, ad::Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Adam with bias correction. Moments are keyed by parameter path.
class Adam {
 public:
  struct Options {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam() = default;
  explicit Adam(Options opts) : opts_(opts) {}

  const Options& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  std::int64_t step_count() const { return step_; }

  void step(ParameterSet& params) {
    for (const auto& [path, t] : params) {
      if (!t.has_grad()) throw std::runtime_error("Adam: parameter '" + path + "' has no gradient");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (auto& [path, t] : params) {
      auto& [m, v] = moments_[path];
      if (m.size() != t.numel()) {
        m.assign(t.numel(), 0.0);
        v.assign(t.numel(), 0.0);
      }
      auto g = t.grad();
      auto w = t.mutable_values();
      for (std::size_t k = 0; k < w.size(); ++k) {
        m[k] = opts_.beta1 * m[k] + (1.0 - opts_.beta1) * g[k];
        v[k] = opts_.beta2 * v[k] + (1.0 - opts_.beta2) * g[k] * g[k];
        const double mhat = m[k] / c1;
        const double vhat = v[k] / c2;
        w[k] -= opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps);
      }
    }
  }

  using Moments = std::pair<std::vector<double>, std::vector<double>>;
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::map<std::string, Moments>& moments() { return moments_; }
  void set_step_count(std::int64_t s) { step_ = s; }

 private:
  Options opts_;
  std::int64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

// ---------------------------------------------------------------------------
// Binary records: (path, shape, little-endian f64 payload), length-prefixed.

namespace io {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, std::uint64_t limit = 1u << 30) {
  auto n = read_u64(is);
  if (n > limit) throw std::runtime_error("checkpoint: string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

struct Record {
  std::string path;
  ad::Shape shape;
  std::vector<double> values;
};

inline void write_records(std::ostream& os, const std::vector<Record>& records) {
  write_u64(os, records.size());
  for (const auto& r : records) {
    write_string(os, r.path);
    write_u64(os, r.shape.size());
    for (auto d : r.shape) write_u64(os, d);
    os.write(reinterpret_cast<const char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * 8));
  }
}

inline std::vector<Record> read_records(std::istream& is) {
  auto count = read_u64(is);
  std::vector<Record> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    Record r;
    r.path = read_string(is);
    auto rank = read_u64(is);
    if (rank > 8) throw std::runtime_error("checkpoint: implausible rank for '" + r.path + "'");
    for (std::uint64_t d = 0; d < rank; ++d) r.shape.push_back(read_u64(is));
    r.values.resize(ad::numel_of(r.shape));
    if (!is.read(reinterpret_cast<char*>(r.values.data()), static_cast<std::streamsize>(r.values.size() * 8))) {
      throw std::runtime_error("checkpoint: truncated payload for '" + r.path + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<Record> to_records(const ParameterSet& params) {
  std::vector<Record> out;
  for (const auto& [path, t] : params) out.push_back({path, t.shape(), {t.values().begin(), t.values().end()}});
  return out;
}

inline ParameterSet from_records(const std::vector<Record>& records) {
  ParameterSet out;
  for (const auto& r : records) out.add(r.path, r.shape, r.values);
  return out;
}

/// First and second moments as "<path>.m" / "<path>.v" records, in parameter order.
inline std::vector<Record> moment_records(const ParameterSet& params, const Adam& opt) {
  std::vector<Record> out;
  for (const auto& [path, t] : params) {
    auto it = opt.moments().find(path);
    std::vector<double> m(t.numel(), 0.0), v(t.numel(), 0.0);
    if (it != opt.moments().end() && it->second.first.size() == t.numel()) {
      m = it->second.first;
      v = it->second.second;
    }
    out.push_back({path + ".m", t.shape(), std::move(m)});
    out.push_back({path + ".v", t.shape(), std::move(v)});
  }
  return out;
}

inline void restore_moments(const std::vector<Record>& records, Adam& opt) {
  for (const auto& r : records) {
    if (r.path.size() < 2) continue;
    std::string base = r.path.substr(0, r.path.size() - 2);
    std::string tag = r.path.substr(r.path.size() - 2);
    auto& mom = opt.moments()[base];
    if (tag == ".m") mom.first = r.values;
    else if (tag == ".v") mom.second = r.values;
  }
}

}  // namespace io
}  // namespace edm
