// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "edm/matrix.hpp"

namespace edm {

/// Atom positions (Angstrom), one-hot atom types over a vocabulary, and
/// integer charges.
struct Molecule {
  Matrix positions;  // M x 3
  Matrix onehot;     // M x K
  std::vector<int> charges;

  std::size_t size() const { return positions.rows(); }
  std::size_t n_types() const { return onehot.cols(); }

  /// Index of the active one-hot entry for atom i.
  std::size_t type_index(std::size_t i) const {
    for (std::size_t k = 0; k < onehot.cols(); ++k)
      if (onehot(i, k) == 1.0) return k;
    throw std::logic_error("Molecule: atom " + std::to_string(i) + " has no active type");
  }

  void validate() const {
    const std::size_t m = positions.rows();
    if (m == 0) throw std::invalid_argument("Molecule: no atoms");
    if (positions.cols() != 3) throw std::invalid_argument("Molecule: positions must be Mx3");
    if (onehot.rows() != m) throw std::invalid_argument("Molecule: one-hot rows do not match atom count");
    if (charges.size() != m) throw std::invalid_argument("Molecule: charge count does not match atom count");
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < onehot.cols(); ++k) {
        const double v = onehot(i, k);
        if (v != 0.0 && v != 1.0) throw std::invalid_argument("Molecule: one-hot entry not in {0,1}");
        s += v;
      }
      if (s != 1.0) throw std::invalid_argument("Molecule: one-hot row " + std::to_string(i) + " does not sum to 1");
    }
  }

  static Molecule from_types(Matrix positions, const std::vector<std::size_t>& types, std::size_t n_types,
                             std::vector<int> charges) {
    Molecule mol;
    mol.positions = std::move(positions);
    mol.onehot = Matrix(types.size(), n_types);
    for (std::size_t i = 0; i < types.size(); ++i) {
      if (types[i] >= n_types) throw std::invalid_argument("Molecule: type index out of range");
      mol.onehot(i, types[i]) = 1.0;
    }
    mol.charges = std::move(charges);
    mol.validate();
    return mol;
  }
};

/// Relative scaling of the modelled quantities.
struct ScalingSpec {
  double x_scale = 1.0;
  double onehot_scale = 0.25;
  double charge_scale = 0.1;

  void validate() const {
    if (!(x_scale > 0.0) || !(onehot_scale > 0.0) || !(charge_scale > 0.0)) {
      throw std::invalid_argument("ScalingSpec: all scales must be positive");
    }
  }
};

/// How node features h are laid out: [onehot_scale * one-hot, charge_scale * charge].
struct FeatureLayout {
  std::size_t n_types = 0;
  bool include_charges = true;
  ScalingSpec scaling;

  std::size_t width() const { return n_types + (include_charges ? 1 : 0); }
};

/// Model-space view of a molecule: scaled positions (M x 3) and features (M x F).
struct ScaledMolecule {
  Matrix x;
  Matrix h;

  std::size_t size() const { return x.rows(); }
};

inline ScaledMolecule scale(const Molecule& mol, const FeatureLayout& layout) {
  layout.scaling.validate();
  if (mol.n_types() != layout.n_types) {
    throw std::invalid_argument("scale: molecule has " + std::to_string(mol.n_types()) + " types, layout expects " +
                                std::to_string(layout.n_types));
  }
  ScaledMolecule out;
  out.x = layout.scaling.x_scale * mol.positions;
  out.h = Matrix(mol.size(), layout.width());
  for (std::size_t i = 0; i < mol.size(); ++i) {
    for (std::size_t k = 0; k < layout.n_types; ++k) out.h(i, k) = layout.scaling.onehot_scale * mol.onehot(i, k);
    if (layout.include_charges) out.h(i, layout.n_types) = layout.scaling.charge_scale * mol.charges[i];
  }
  return out;
}

/// Inverse of scale() for exact one-hot/integer inputs.
inline Molecule unscale(const ScaledMolecule& s, const FeatureLayout& layout) {
  Molecule mol;
  mol.positions = (1.0 / layout.scaling.x_scale) * s.x;
  mol.onehot = Matrix(s.size(), layout.n_types);
  mol.charges.assign(s.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t k = 0; k < layout.n_types; ++k) mol.onehot(i, k) = s.h(i, k) / layout.scaling.onehot_scale;
    if (layout.include_charges) {
      mol.charges[i] = static_cast<int>(std::lround(s.h(i, layout.n_types) / layout.scaling.charge_scale));
    }
  }
  return mol;
}

}  // namespace edm
