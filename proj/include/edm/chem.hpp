// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Distance-based bond inference, valency stability and distribution metrics
// over generated molecules.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "edm/matrix.hpp"
#include "edm/molecule.hpp"

namespace edm::chem {

/// Angstrom to picometer.
inline constexpr double kAngstromToPm = 100.0;

class BondTables {
 public:
  /// Typical bond lengths (pm) and allowed valencies for common organic elements.
  static BondTables standard() {
    BondTables t;
    const std::vector<std::string> single_order = {"H", "C", "O", "N", "P", "S", "F", "Si", "Cl", "Br", "I", "B", "As"};
    // clang-format off
    const int single[13][13] = {
        // H    C    O    N    P    S    F   Si   Cl   Br    I    B   As
        {  74, 109,  96, 101, 144, 134,  92, 148, 127, 141, 161, 119, 152},  // H
        { 109, 154, 143, 147, 184, 182, 135, 185, 177, 194, 214,   0,   0},  // C
        {  96, 143, 148, 140, 163, 151, 142, 163, 164, 172, 194,   0,   0},  // O
        { 101, 147, 140, 145, 177, 168, 136,   0, 175, 214, 222,   0,   0},  // N
        { 144, 184, 163, 177, 221, 210, 156,   0, 203, 222,   0,   0,   0},  // P
        { 134, 182, 151, 168, 210, 204, 158, 200, 207, 225, 234,   0,   0},  // S
        {  92, 135, 142, 136, 156, 158, 142, 160, 166, 178, 187,   0,   0},  // F
        { 148, 185, 163,   0,   0, 200, 160, 233, 202, 215, 243,   0,   0},  // Si
        { 127, 177, 164, 175, 203, 207, 166, 202, 199, 214,   0, 175,   0},  // Cl
        { 141, 194, 172, 214, 222, 225, 178, 215, 214, 228,   0,   0,   0},  // Br
        { 161, 214, 194, 222,   0, 234, 187, 243,   0,   0, 266,   0,   0},  // I
        { 119,   0,   0,   0,   0,   0,   0,   0, 175,   0,   0,   0,   0},  // B
        { 152,   0,   0,   0,   0,   0,   0,   0,   0,   0,   0,   0,   0},  // As
    };
    // clang-format on
    for (std::size_t i = 0; i < single_order.size(); ++i)
      for (std::size_t j = 0; j < single_order.size(); ++j)
        if (single[i][j] > 0) t.set(1, single_order[i], single_order[j], single[i][j]);

    // The published double-bond grid lists C-S in one triangle only.
    for (auto [a, b, d] : std::initializer_list<std::tuple<const char*, const char*, double>>{
             {"C", "C", 134}, {"C", "O", 120}, {"C", "N", 129}, {"C", "S", 160}, {"O", "O", 121},
             {"O", "N", 121}, {"O", "P", 150}, {"N", "N", 125}, {"P", "S", 186}}) {
      t.set(2, a, b, d);
    }
    for (auto [a, b, d] : std::initializer_list<std::tuple<const char*, const char*, double>>{
             {"C", "C", 120}, {"C", "O", 113}, {"C", "N", 116}, {"N", "N", 110}}) {
      t.set(3, a, b, d);
    }

    t.valency_ = {{"H", {1}},  {"C", {4}},  {"N", {3}}, {"O", {2}},     {"F", {1}},  {"B", {3}},  {"Al", {3}},
                  {"Si", {4}}, {"P", {3, 5}}, {"S", {4}}, {"Cl", {1}}, {"As", {3}}, {"Br", {1}}, {"I", {1}}};
    return t;
  }

  /// Adds or replaces a typical length; rejects conflicting asymmetric entries.
  void set(int order, const std::string& a, const std::string& b, double pm) {
    check_order(order);
    auto& table = lengths_[static_cast<std::size_t>(order - 1)];
    auto key = ordered(a, b);
    auto it = table.find(key);
    if (it != table.end() && it->second != pm) {
      throw std::invalid_argument("BondTables: conflicting order-" + std::to_string(order) + " length for " + a +
                                  "-" + b);
    }
    table[key] = pm;
  }

  std::optional<double> typical(int order, const std::string& a, const std::string& b) const {
    check_order(order);
    const auto& table = lengths_[static_cast<std::size_t>(order - 1)];
    auto it = table.find(ordered(a, b));
    if (it == table.end()) return std::nullopt;
    return it->second;
  }

  double margin(int order) const {
    check_order(order);
    return margins_[static_cast<std::size_t>(order - 1)];
  }
  void set_margins(double m1, double m2, double m3) { margins_ = {m1, m2, m3}; }

  bool knows(const std::string& element) const { return valency_.contains(element); }

  const std::vector<int>& allowed_valency(const std::string& element) const {
    auto it = valency_.find(element);
    if (it == valency_.end()) throw std::invalid_argument("unknown element '" + element + "'");
    return it->second;
  }

  /// Highest order whose typical length plus margin exceeds the distance, or 0.
  int bond_order(const std::string& a, const std::string& b, double distance_pm) const {
    for (const auto& e : {a, b})
      if (!knows(e)) throw std::invalid_argument("unknown element '" + e + "'");
    for (int order = 3; order >= 1; --order) {
      auto len = typical(order, a, b);
      if (len && distance_pm < *len + margin(order)) return order;
    }
    return 0;
  }

 private:
  static void check_order(int order) {
    if (order < 1 || order > 3) throw std::invalid_argument("BondTables: bond order must be 1, 2 or 3");
  }
  static std::pair<std::string, std::string> ordered(const std::string& a, const std::string& b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  }

  std::array<std::map<std::pair<std::string, std::string>, double>, 3> lengths_;
  std::array<double, 3> margins_ = {10.0, 5.0, 3.0};
  std::map<std::string, std::vector<int>> valency_;
};

struct Bond {
  std::size_t i = 0, j = 0;  // i < j
  int order = 1;
};

struct BondGraph {
  std::vector<std::string> elements;
  std::vector<Bond> bonds;

  std::size_t size() const { return elements.size(); }
};

/// Bonds from pairwise distances; positions in Angstrom unless `to_pm` says otherwise.
inline BondGraph infer_bonds(std::span<const std::string> elements, const Matrix& positions, const BondTables& tables,
                             double to_pm = kAngstromToPm) {
  if (positions.rows() != elements.size() || positions.cols() != 3) {
    throw std::invalid_argument("infer_bonds: need one 3D position per element");
  }
  for (const auto& e : elements)
    if (!tables.knows(e)) throw std::invalid_argument("infer_bonds: unknown element '" + e + "'");
  BondGraph g;
  g.elements.assign(elements.begin(), elements.end());
  for (std::size_t i = 0; i < elements.size(); ++i) {
    for (std::size_t j = i + 1; j < elements.size(); ++j) {
      double d2 = 0.0;
      for (std::size_t a = 0; a < 3; ++a) d2 += (positions(i, a) - positions(j, a)) * (positions(i, a) - positions(j, a));
      const int order = tables.bond_order(elements[i], elements[j], std::sqrt(d2) * to_pm);
      if (order > 0) g.bonds.push_back({i, j, order});
    }
  }
  return g;
}

inline std::vector<std::string> element_symbols(const Molecule& mol, std::span<const std::string> vocabulary) {
  if (mol.n_types() != vocabulary.size()) throw std::invalid_argument("molecule and vocabulary widths differ");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < mol.size(); ++i) out.push_back(vocabulary[mol.type_index(i)]);
  return out;
}

inline BondGraph infer_bonds(const Molecule& mol, std::span<const std::string> vocabulary, const BondTables& tables) {
  auto elements = element_symbols(mol, vocabulary);
  return infer_bonds(elements, mol.positions, tables);
}

struct StabilityReport {
  std::vector<int> valency;
  std::vector<bool> stable;
  std::size_t stable_atoms = 0;
  double atom_stable_fraction = 0.0;
  bool molecule_stable = false;
};

inline StabilityReport stability(const BondGraph& g, const BondTables& tables) {
  StabilityReport r;
  r.valency.assign(g.size(), 0);
  for (const auto& b : g.bonds) {
    r.valency[b.i] += b.order;
    r.valency[b.j] += b.order;
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& allowed = tables.allowed_valency(g.elements[i]);
    const bool ok = std::find(allowed.begin(), allowed.end(), r.valency[i]) != allowed.end();
    r.stable.push_back(ok);
    r.stable_atoms += ok ? 1 : 0;
  }
  r.atom_stable_fraction = g.size() ? static_cast<double>(r.stable_atoms) / static_cast<double>(g.size()) : 0.0;
  r.molecule_stable = g.size() > 0 && r.stable_atoms == g.size();
  return r;
}

/// Pooled stability over a set of molecules.
struct StabilitySummary {
  std::size_t molecules = 0, stable_molecules = 0;
  std::size_t atoms = 0, stable_atoms = 0;

  void add(const StabilityReport& r) {
    ++molecules;
    stable_molecules += r.molecule_stable ? 1 : 0;
    atoms += r.valency.size();
    stable_atoms += r.stable_atoms;
  }
  double atom_fraction() const { return atoms ? static_cast<double>(stable_atoms) / static_cast<double>(atoms) : 0.0; }
  double molecule_fraction() const {
    return molecules ? static_cast<double>(stable_molecules) / static_cast<double>(molecules) : 0.0;
  }
};

// ---------------------------------------------------------------------------
// Distribution metrics

/// Uniform-width histogram over [lo, hi); values outside are clamped into
/// the edge bins.
struct Histogram {
  double lo = 0.0, hi = 1500.0;
  std::vector<double> counts = std::vector<double>(100, 0.0);

  Histogram() = default;
  Histogram(double lo_, double hi_, std::size_t bins) : lo(lo_), hi(hi_), counts(bins, 0.0) {
    if (!(hi > lo) || bins == 0) throw std::invalid_argument("Histogram: need hi > lo and at least one bin");
  }

  std::size_t bins() const { return counts.size(); }
  void add(double v, double weight = 1.0) {
    const double pos = (v - lo) / (hi - lo) * static_cast<double>(bins());
    const auto b = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(bins() - 1)));
    counts[b] += weight;
  }
  double total() const {
    double s = 0.0;
    for (double c : counts) s += c;
    return s;
  }
};

/// Histogram of all within-molecule pairwise distances, in pm.
inline Histogram distance_histogram(std::span<const Molecule> mols, double lo = 0.0, double hi = 1500.0,
                                    std::size_t bins = 100, double to_pm = kAngstromToPm) {
  Histogram h(lo, hi, bins);
  for (const auto& mol : mols) {
    for (std::size_t i = 0; i < mol.size(); ++i)
      for (std::size_t j = i + 1; j < mol.size(); ++j) {
        double d2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
          const double d = mol.positions(i, a) - mol.positions(j, a);
          d2 += d * d;
        }
        h.add(std::sqrt(d2) * to_pm);
      }
  }
  return h;
}

/// Jensen-Shannon divergence (natural log) between two histograms on the
/// same bins. `smoothing` is added to every count before normalization.
inline double js_divergence(const Histogram& a, const Histogram& b, double smoothing = 0.0) {
  if (a.bins() != b.bins() || a.lo != b.lo || a.hi != b.hi) {
    throw std::invalid_argument("js_divergence: histograms have different bins");
  }
  if (smoothing < 0.0) throw std::invalid_argument("js_divergence: smoothing must be >= 0");
  const double ta = a.total() + smoothing * static_cast<double>(a.bins());
  const double tb = b.total() + smoothing * static_cast<double>(b.bins());
  if (!(ta > 0.0) || !(tb > 0.0)) throw std::invalid_argument("js_divergence: empty histogram");
  double js = 0.0;
  for (std::size_t k = 0; k < a.bins(); ++k) {
    const double p = (a.counts[k] + smoothing) / ta;
    const double q = (b.counts[k] + smoothing) / tb;
    const double m = 0.5 * (p + q);
    if (p > 0.0) js += 0.5 * p * std::log(p / m);
    if (q > 0.0) js += 0.5 * q * std::log(q / m);
  }
  return std::max(0.0, js);
}

/// 1-D Wasserstein-1 distance between two empirical distributions,
/// integral of |F_a - F_b| over the merged support.
inline double wasserstein1(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("wasserstein1: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  if (sa.size() == sb.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < sa.size(); ++i) s += std::abs(sa[i] - sb[i]);
    return s / static_cast<double>(sa.size());
  }
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t ia = 0, ib = 0;
  double x = std::min(sa[0], sb[0]), total = 0.0;
  while (ia < sa.size() || ib < sb.size()) {
    double next;
    if (ib == sb.size() || (ia < sa.size() && sa[ia] <= sb[ib])) {
      next = sa[ia];
    } else {
      next = sb[ib];
    }
    total += std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb) * (next - x);
    x = next;
    while (ia < sa.size() && sa[ia] == x) ++ia;
    while (ib < sb.size() && sb[ib] == x) ++ib;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Uniqueness

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) {
    h ^= (v >> (8 * k)) & 0xffu;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

/// Permutation-invariant hash of a labelled bond multigraph by iterated
/// neighbourhood refinement.
inline std::uint64_t graph_hash(const BondGraph& g) {
  const std::size_t n = g.size();
  std::vector<std::vector<std::pair<int, std::size_t>>> adj(n);
  for (const auto& b : g.bonds) {
    adj[b.i].push_back({b.order, b.j});
    adj[b.j].push_back({b.order, b.i});
  }
  std::vector<std::uint64_t> label(n);
  for (std::size_t i = 0; i < n; ++i) label[i] = detail::hash_string(g.elements[i]);
  for (std::size_t round = 0; round < n; ++round) {
    std::vector<std::uint64_t> next(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::uint64_t> nb;
      for (auto [order, j] : adj[i]) nb.push_back(detail::fnv1a(static_cast<std::uint64_t>(order), label[j]));
      std::sort(nb.begin(), nb.end());
      std::uint64_t h = detail::fnv1a(0xcbf29ce484222325ull, label[i]);
      for (auto v : nb) h = detail::fnv1a(h, v);
      next[i] = h;
    }
    label = std::move(next);
  }
  std::sort(label.begin(), label.end());
  std::uint64_t h = detail::fnv1a(0xcbf29ce484222325ull, n);
  for (auto v : label) h = detail::fnv1a(h, v);
  return h;
}

inline double uniqueness_fraction(std::span<const BondGraph> graphs) {
  if (graphs.empty()) return 0.0;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& g : graphs) seen.insert(graph_hash(g));
  return static_cast<double>(seen.size()) / static_cast<double>(graphs.size());
}

}  // namespace edm::chem
