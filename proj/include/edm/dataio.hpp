// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

// Extended-XYZ reading and writing, dataset splits and the synthetic rigid
// toy datasets.
//
// File layout, repeated per molecule:
//   <atom count>
//   [key=value ...]
//   <element> <x> <y> <z> [<charge>]      (M lines, Angstrom)

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "edm/geometry.hpp"
#include "edm/matrix.hpp"
#include "edm/molecule.hpp"

namespace edm {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

namespace elements {

inline const std::vector<std::string>& symbols() {
  static const std::vector<std::string> table = {
      "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",  "S",  "Cl", "Ar",
      "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Kr",
      "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe"};
  return table;
}

/// Atomic number, or 0 for an unrecognized symbol.
inline int atomic_number(std::string_view symbol) {
  const auto& t = symbols();
  auto it = std::find(t.begin(), t.end(), symbol);
  return it == t.end() ? 0 : static_cast<int>(it - t.begin()) + 1;
}

}  // namespace elements

struct Dataset {
  std::vector<Molecule> molecules;
  std::vector<std::map<std::string, double>> properties;  // one map per molecule
  std::vector<std::string> vocabulary;                    // one-hot index -> element symbol
  std::string unit = "angstrom";
  bool has_charges = true;  // false if any atom line omitted the charge column

  std::size_t size() const { return molecules.size(); }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> out;
    for (const auto& m : molecules) out.push_back(m.size());
    return out;
  }

  const std::string& element(std::size_t mol, std::size_t atom) const {
    return vocabulary.at(molecules.at(mol).type_index(atom));
  }

  std::vector<std::string> elements_of(std::size_t mol) const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < molecules.at(mol).size(); ++i) out.push_back(element(mol, i));
    return out;
  }

  bool has_property(const std::string& name) const {
    if (molecules.empty()) return false;
    for (const auto& p : properties)
      if (!p.contains(name)) return false;
    return true;
  }

  std::vector<double> property_values(const std::string& name) const {
    std::vector<double> out;
    for (std::size_t i = 0; i < properties.size(); ++i) {
      auto it = properties[i].find(name);
      if (it == properties[i].end()) {
        throw std::invalid_argument("molecule " + std::to_string(i) + " has no property '" + name + "'");
      }
      out.push_back(it->second);
    }
    return out;
  }

  Dataset subset(const std::vector<std::size_t>& indices) const {
    Dataset d;
    d.vocabulary = vocabulary;
    d.unit = unit;
    d.has_charges = has_charges;
    for (auto i : indices) {
      d.molecules.push_back(molecules.at(i));
      d.properties.push_back(properties.at(i));
    }
    return d;
  }

  /// Re-expresses the one-hot encoding over another vocabulary, which must
  /// contain every element present.
  Dataset with_vocabulary(const std::vector<std::string>& vocab) const {
    Dataset d = *this;
    d.vocabulary = vocab;
    for (std::size_t m = 0; m < molecules.size(); ++m) {
      const auto& src = molecules[m];
      Matrix onehot(src.size(), vocab.size());
      for (std::size_t i = 0; i < src.size(); ++i) {
        const auto& sym = element(m, i);
        auto it = std::find(vocab.begin(), vocab.end(), sym);
        if (it == vocab.end()) throw std::invalid_argument("element '" + sym + "' is not in the vocabulary");
        onehot(i, static_cast<std::size_t>(it - vocab.begin())) = 1.0;
      }
      d.molecules[m].onehot = std::move(onehot);
    }
    return d;
  }
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::optional<double> to_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

inline std::optional<long> to_long(std::string_view s) {
  long v = 0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, ptr);
}

inline bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

}  // namespace detail

/// Parses every molecule of an extended-XYZ text. If `vocabulary` is empty it
/// is built from the elements present, ordered by atomic number; otherwise
/// elements outside it are rejected.
inline Dataset parse_extended_xyz(const std::string& text, std::vector<std::string> vocabulary = {}) {
  std::vector<std::string_view> lines;
  {
    std::string_view rest(text);
    while (!rest.empty()) {
      auto nl = rest.find('\n');
      auto line = rest.substr(0, nl);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      lines.push_back(line);
      if (nl == std::string_view::npos) break;
      rest.remove_prefix(nl + 1);
    }
  }

  struct RawMolecule {
    std::vector<std::string> symbols;
    Matrix positions;
    std::vector<int> charges;
    std::map<std::string, double> props;
  };
  std::vector<RawMolecule> raw;
  bool has_charges = true;
  const bool fixed_vocab = !vocabulary.empty();

  std::size_t i = 0;
  while (i < lines.size()) {
    if (detail::blank(lines[i])) {
      ++i;
      continue;
    }
    const std::size_t header_line = i + 1;
    auto head = detail::split_ws(lines[i]);
    auto count = head.size() == 1 ? detail::to_long(head[0]) : std::nullopt;
    if (!count || *count < 1) {
      throw ParseError(header_line, "expected a positive atom count, got '" + std::string(lines[i]) + "'");
    }
    const auto m = static_cast<std::size_t>(*count);
    if (i + 2 + m > lines.size()) {
      const std::size_t available = lines.size() > i + 2 ? lines.size() - i - 2 : 0;
      throw ParseError(header_line, "atom count " + std::to_string(m) + " but only " + std::to_string(available) +
                                        " atom lines follow");
    }

    RawMolecule mol;
    const std::size_t prop_line = i + 2;
    for (auto tok : detail::split_ws(lines[i + 1])) {
      auto eq = tok.find('=');
      if (eq == std::string_view::npos || eq == 0) {
        throw ParseError(prop_line, "expected key=value, got '" + std::string(tok) + "'");
      }
      auto value = detail::to_double(tok.substr(eq + 1));
      if (!value) throw ParseError(prop_line, "non-numeric value in '" + std::string(tok) + "'");
      mol.props[std::string(tok.substr(0, eq))] = *value;
    }

    mol.positions = Matrix(m, 3);
    for (std::size_t a = 0; a < m; ++a) {
      const std::size_t ln = i + 3 + a;
      auto f = detail::split_ws(lines[i + 2 + a]);
      if (f.size() < 4 || f.size() > 5) {
        if (f.size() == 1 && detail::to_long(f[0])) {
          throw ParseError(header_line, "atom count " + std::to_string(m) + " but only " + std::to_string(a) +
                                            " atom lines follow");
        }
        throw ParseError(ln, "expected 'ELEMENT x y z [charge]', got " + std::to_string(f.size()) + " fields");
      }
      std::string sym(f[0]);
      if (elements::atomic_number(sym) == 0) throw ParseError(ln, "unknown element '" + sym + "'");
      if (fixed_vocab && std::find(vocabulary.begin(), vocabulary.end(), sym) == vocabulary.end()) {
        throw ParseError(ln, "element '" + sym + "' is not in the vocabulary");
      }
      for (std::size_t c = 0; c < 3; ++c) {
        auto v = detail::to_double(f[1 + c]);
        if (!v) throw ParseError(ln, "non-numeric coordinate '" + std::string(f[1 + c]) + "'");
        mol.positions(a, c) = *v;
      }
      int charge = 0;
      if (f.size() == 5) {
        auto q = detail::to_long(f[4]);
        if (!q) throw ParseError(ln, "non-integer charge '" + std::string(f[4]) + "'");
        charge = static_cast<int>(*q);
      } else {
        has_charges = false;
      }
      mol.symbols.push_back(std::move(sym));
      mol.charges.push_back(charge);
    }
    raw.push_back(std::move(mol));
    i += 2 + m;
  }

  if (!fixed_vocab) {
    std::set<std::string> seen;
    for (const auto& r : raw) seen.insert(r.symbols.begin(), r.symbols.end());
    vocabulary.assign(seen.begin(), seen.end());
    std::sort(vocabulary.begin(), vocabulary.end(), [](const std::string& a, const std::string& b) {
      return elements::atomic_number(a) < elements::atomic_number(b);
    });
  }

  Dataset d;
  d.vocabulary = vocabulary;
  d.has_charges = has_charges;
  for (auto& r : raw) {
    std::vector<std::size_t> types;
    for (const auto& s : r.symbols) {
      types.push_back(static_cast<std::size_t>(std::find(vocabulary.begin(), vocabulary.end(), s) - vocabulary.begin()));
    }
    d.molecules.push_back(Molecule::from_types(std::move(r.positions), types, vocabulary.size(), std::move(r.charges)));
    d.properties.push_back(std::move(r.props));
  }
  return d;
}

/// Writes molecules with properties; the output parses back bit-exactly.
inline std::string emit_extended_xyz(const Dataset& d) {
  std::ostringstream os;
  for (std::size_t m = 0; m < d.size(); ++m) {
    const auto& mol = d.molecules[m];
    os << mol.size() << '\n';
    bool first = true;
    if (m < d.properties.size()) {
      for (const auto& [k, v] : d.properties[m]) {
        os << (first ? "" : " ") << k << '=' << detail::format_double(v);
        first = false;
      }
    }
    os << '\n';
    for (std::size_t i = 0; i < mol.size(); ++i) {
      os << d.element(m, i);
      for (std::size_t c = 0; c < 3; ++c) os << ' ' << detail::format_double(mol.positions(i, c));
      os << ' ' << mol.charges[i] << '\n';
    }
  }
  return os.str();
}

inline Dataset center_dataset(Dataset d) {
  for (auto& mol : d.molecules) mol.positions = geometry::remove_cog(mol.positions);
  return d;
}

// ---------------------------------------------------------------------------
// Toy datasets

/// Water-like isosceles triangle: O apex, two H, |OH| = 0.96, |HH| = 1.52.
struct ToyTemplate {
  static constexpr double kOH = 0.96;
  static constexpr double kHH = 1.52;

  static Matrix positions(double oh = kOH, double hh = kHH) {
    const double half = 0.5 * hh;
    const double apex = std::sqrt(oh * oh - half * half);
    Matrix p(3, 3);
    p(0, 1) = apex;  // O
    p(1, 0) = -half;
    p(2, 0) = half;
    return geometry::remove_cog(p);
  }
};

namespace detail {

inline Matrix random_rigid_motion(Rng& rng) {
  Matrix r = geometry::random_orthogonal(rng, false);
  if (std::bernoulli_distribution(0.5)(rng)) r = -1.0 * r;
  return r;
}

inline Dataset toy_from_template(std::size_t n, Rng& rng, const std::function<double(Rng&)>& hh_length,
                                 const char* property) {
  if (n < 1) throw std::invalid_argument("toy dataset: n must be >= 1");
  Dataset d;
  d.vocabulary = {"H", "O"};
  for (std::size_t k = 0; k < n; ++k) {
    const double hh = hh_length(rng);
    Matrix rotated = apply_rotation(random_rigid_motion(rng), ToyTemplate::positions(ToyTemplate::kOH, hh));
    d.molecules.push_back(Molecule::from_types(geometry::remove_cog(rotated), {1, 0, 0}, 2, {0, 0, 0}));
    std::map<std::string, double> props;
    if (property) props[property] = hh;
    d.properties.push_back(std::move(props));
  }
  return d;
}

}  // namespace detail

/// n randomly rotated (and, with probability 1/2, reflected) copies of the
/// toy triangle, centered.
inline Dataset make_toy_rigid_dataset(std::size_t n, Rng& rng) {
  return detail::toy_from_template(n, rng, [](Rng&) { return ToyTemplate::kHH; }, nullptr);
}

/// Like the rigid toy set, but the H-H distance is drawn uniformly from
/// [lo, hi] and recorded as property "hh".
inline Dataset make_toy_conditional_dataset(std::size_t n, Rng& rng, double lo = 1.3, double hi = 1.7) {
  if (!(lo > 0.0 && lo <= hi && hi < 2.0 * ToyTemplate::kOH)) {
    throw std::invalid_argument("toy dataset: H-H range must lie in (0, 2*|OH|)");
  }
  return detail::toy_from_template(
      n, rng, [lo, hi](Rng& r) { return std::uniform_real_distribution<double>(lo, hi)(r); }, "hh");
}

// ---------------------------------------------------------------------------
// Splits

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle, then contiguous train/val/test blocks.
inline SplitIndices split_by_fractions(std::size_t n, double f_train, double f_val, double f_test, std::uint64_t seed) {
  if (f_train < 0.0 || f_val < 0.0 || f_test < 0.0 || std::abs(f_train + f_val + f_test - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::min(n, static_cast<std::size_t>(std::llround(f_train * static_cast<double>(n))));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(f_val * static_cast<double>(n))));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

/// Reads "train: 0,1,2" / "val: ..." / "test: ..." lines (zero-based).
inline SplitIndices parse_split_file(const std::string& text, std::size_t n) {
  SplitIndices s;
  std::set<std::string> labels_seen;
  std::map<std::size_t, std::string> owner;
  std::istringstream is(text);
  std::string line;
  std::size_t ln = 0;
  while (std::getline(is, line)) {
    ++ln;
    if (detail::blank(line)) continue;
    auto colon = line.find(':');
    if (colon == std::string::npos) throw ParseError(ln, "expected 'train:', 'val:' or 'test:'");
    auto label_tok = detail::split_ws(std::string_view(line).substr(0, colon));
    const std::string label = label_tok.size() == 1 ? std::string(label_tok[0]) : "";
    std::vector<std::size_t>* dst = label == "train" ? &s.train : label == "val" ? &s.val : label == "test" ? &s.test
                                                                                                           : nullptr;
    if (!dst) throw ParseError(ln, "unknown split label '" + label + "'");
    if (!labels_seen.insert(label).second) throw ParseError(ln, "split label '" + label + "' repeated");
    std::string_view rest = std::string_view(line).substr(colon + 1);
    while (!rest.empty()) {
      auto comma = rest.find(',');
      auto tok = detail::split_ws(rest.substr(0, comma));
      if (tok.size() == 1) {
        auto v = detail::to_long(tok[0]);
        if (!v || *v < 0) throw ParseError(ln, "bad index '" + std::string(tok[0]) + "'");
        const auto idx = static_cast<std::size_t>(*v);
        if (idx >= n) throw ParseError(ln, "index " + std::to_string(idx) + " out of range for " + std::to_string(n));
        auto [it, fresh] = owner.emplace(idx, label);
        if (!fresh) {
          throw ParseError(ln, "index " + std::to_string(idx) + " appears in both " + it->second + " and " + label);
        }
        dst->push_back(idx);
      } else if (!tok.empty()) {
        throw ParseError(ln, "malformed index list");
      }
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
  }
  return s;
}

}  // namespace edm
