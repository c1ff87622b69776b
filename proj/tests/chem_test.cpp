// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "support.hpp"

namespace edm::chem {
namespace {

const BondTables& tables() {
  static const BondTables t = BondTables::standard();
  return t;
}

Matrix pair_at(double angstrom) { return Matrix(2, 3, {0, 0, 0, angstrom, 0, 0}); }

TEST(BondTables, LookupIsSymmetric) {
  const std::vector<std::string> el = {"H", "C", "O", "N", "P", "S", "F", "Si", "Cl", "Br", "I", "B", "As"};
  for (int order = 1; order <= 3; ++order)
    for (const auto& a : el)
      for (const auto& b : el) EXPECT_EQ(tables().typical(order, a, b), tables().typical(order, b, a));
}

TEST(BondTables, PublishedValues) {
  EXPECT_EQ(tables().typical(1, "C", "C"), 154.0);
  EXPECT_EQ(tables().typical(1, "H", "H"), 74.0);
  EXPECT_EQ(tables().typical(1, "I", "I"), 266.0);
  EXPECT_EQ(tables().typical(1, "Cl", "B"), 175.0);
  EXPECT_EQ(tables().typical(2, "C", "O"), 120.0);
  EXPECT_EQ(tables().typical(2, "S", "P"), 186.0);
  EXPECT_EQ(tables().typical(3, "C", "C"), 120.0);
  EXPECT_EQ(tables().typical(3, "N", "N"), 110.0);
  EXPECT_FALSE(tables().typical(1, "B", "C").has_value());
  EXPECT_FALSE(tables().typical(3, "O", "O").has_value());
  EXPECT_EQ(tables().margin(1), 10.0);
  EXPECT_EQ(tables().margin(2), 5.0);
  EXPECT_EQ(tables().margin(3), 3.0);
  EXPECT_EQ(tables().allowed_valency("P"), (std::vector<int>{3, 5}));
  EXPECT_EQ(tables().allowed_valency("C"), (std::vector<int>{4}));
}

TEST(BondTables, RejectsConflictingEntry) {
  BondTables t = BondTables::standard();
  EXPECT_THROW(t.set(1, "C", "H", 110), std::invalid_argument);
  EXPECT_NO_THROW(t.set(1, "H", "C", 109));
}

TEST(InferBonds, CarbonPairOrders) {
  const std::vector<std::string> cc = {"C", "C"};
  auto single = infer_bonds(cc, pair_at(1.54), tables());
  ASSERT_EQ(single.bonds.size(), 1u);
  EXPECT_EQ(single.bonds[0].order, 1);
  auto triple = infer_bonds(cc, pair_at(1.20), tables());
  ASSERT_EQ(triple.bonds.size(), 1u);
  EXPECT_EQ(triple.bonds[0].order, 3);
  EXPECT_EQ(tables().bond_order("C", "C", 135.0), 2);
  EXPECT_EQ(tables().bond_order("C", "C", 164.0), 0);  // strictly below typical + margin
  EXPECT_EQ(tables().bond_order("C", "C", 163.99), 1);
}

TEST(InferBonds, DistantHydrogensDoNotBond) {
  const std::vector<std::string> hh = {"H", "H"};
  EXPECT_TRUE(infer_bonds(hh, pair_at(3.0), tables()).bonds.empty());
}

TEST(InferBonds, UnknownElementIsNamed) {
  const std::vector<std::string> el = {"C", "Xx"};
  try {
    (void)infer_bonds(el, pair_at(1.0), tables());
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("Xx"), std::string::npos);
  }
}

TEST(InferBonds, InvariantToRigidMotionAndReordering) {
  const std::vector<std::string> el = {"C", "H", "H", "H", "H"};
  auto p = testing::methane_positions();
  auto base = infer_bonds(el, p, tables());
  Rng rng(1);
  auto q = geometry::random_orthogonal(rng, true);
  auto moved = apply_rotation(q, p);
  for (std::size_t i = 0; i < 5; ++i) moved(i, 0) += 4.0;
  auto g = infer_bonds(el, moved, tables());
  ASSERT_EQ(g.bonds.size(), base.bonds.size());
  for (std::size_t k = 0; k < g.bonds.size(); ++k) EXPECT_EQ(g.bonds[k].order, base.bonds[k].order);
  // Reordered atoms: same graph up to relabeling.
  const std::vector<std::string> el2 = {"H", "H", "C", "H", "H"};
  const std::vector<std::size_t> from = {1, 2, 0, 3, 4};
  Matrix p2(5, 3);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t a = 0; a < 3; ++a) p2(i, a) = p(from[i], a);
  EXPECT_EQ(graph_hash(infer_bonds(el2, p2, tables())), graph_hash(base));
}

TEST(Stability, MethaneIsFullyStable) {
  const std::vector<std::string> el = {"C", "H", "H", "H", "H"};
  auto r = stability(infer_bonds(el, testing::methane_positions(), tables()), tables());
  EXPECT_EQ(r.valency, (std::vector<int>{4, 1, 1, 1, 1}));
  EXPECT_EQ(r.stable_atoms, 5u);
  EXPECT_EQ(r.atom_stable_fraction, 1.0);
  EXPECT_TRUE(r.molecule_stable);
}

TEST(Stability, LoneCarbonIsUnstable) {
  const std::vector<std::string> el = {"C"};
  auto r = stability(infer_bonds(el, Matrix(1, 3), tables()), tables());
  EXPECT_EQ(r.valency[0], 0);
  EXPECT_FALSE(r.molecule_stable);
  EXPECT_EQ(r.atom_stable_fraction, 0.0);
}

TEST(Stability, MoleculeStableIffAllAtomsStable) {
  // Methane with one hydrogen pulled away: C has valency 3.
  const std::vector<std::string> el = {"C", "H", "H", "H", "H"};
  auto p = testing::methane_positions();
  for (std::size_t a = 0; a < 3; ++a) p(4, a) *= 3.0;
  auto r = stability(infer_bonds(el, p, tables()), tables());
  EXPECT_EQ(r.stable_atoms, 3u);
  EXPECT_FALSE(r.molecule_stable);
  StabilitySummary s;
  s.add(r);
  s.add(stability(infer_bonds(el, testing::methane_positions(), tables()), tables()));
  EXPECT_DOUBLE_EQ(s.atom_fraction(), 8.0 / 10.0);
  EXPECT_DOUBLE_EQ(s.molecule_fraction(), 0.5);
}

TEST(Histogram, ClampsOutOfRangeValuesIntoEdgeBins) {
  Histogram h;
  h.add(-5.0);
  h.add(1e6);
  h.add(15.0);
  EXPECT_EQ(h.counts.front(), 1.0);
  EXPECT_EQ(h.counts.back(), 1.0);
  EXPECT_EQ(h.counts[1], 1.0);
  EXPECT_EQ(h.total(), 3.0);
}

TEST(JsDivergence, IdenticalDisjointAndSymmetric) {
  Histogram a, b;
  for (double v : {100.0, 120.0, 150.0, 150.0}) a.add(v);
  EXPECT_EQ(js_divergence(a, a), 0.0);
  for (double v : {900.0, 1000.0}) b.add(v);
  EXPECT_NEAR(js_divergence(a, b), std::numbers::ln2, 1e-12);
  Histogram c;
  for (double v : {100.0, 500.0, 510.0}) c.add(v);
  EXPECT_NEAR(js_divergence(a, c), js_divergence(c, a), 1e-12);
  EXPECT_GT(js_divergence(a, c), 0.0);
  EXPECT_LT(js_divergence(a, c), std::numbers::ln2);
  // With smoothing the disjoint case moves off ln 2 by O(bins * smoothing).
  EXPECT_NEAR(js_divergence(a, b, 1e-10), std::numbers::ln2, 1e-8);
}

TEST(JsDivergence, RejectsMismatchedBins) {
  Histogram a, b(0.0, 1500.0, 50);
  a.add(1.0);
  b.add(1.0);
  EXPECT_THROW((void)js_divergence(a, b), std::invalid_argument);
}

TEST(Wasserstein, Examples) {
  const std::vector<double> a = {0.0}, b = {1.0};
  EXPECT_EQ(wasserstein1(a, b), 1.0);
  const std::vector<double> s = {3.0, 1.0, 2.0};
  EXPECT_EQ(wasserstein1(s, s), 0.0);
  // Unequal sizes: F_a - F_b is 1/2 on [0, 0.5) and -1/2 on [0.5, 1).
  const std::vector<double> two = {0.0, 1.0}, half = {0.5};
  EXPECT_NEAR(wasserstein1(two, half), 0.5, 1e-15);
  EXPECT_THROW((void)wasserstein1(std::vector<double>{}, a), std::invalid_argument);
}

TEST(Wasserstein, ShiftedGaussians) {
  Rng rng(2);
  std::normal_distribution<double> n0(0.0, 1.0), n2(2.0, 1.0);
  std::vector<double> a(100000), b(100000), c(70000);
  for (double& v : a) v = n0(rng);
  for (double& v : b) v = n2(rng);
  for (double& v : c) v = n2(rng);
  EXPECT_NEAR(wasserstein1(a, b), 2.0, 0.04);
  EXPECT_NEAR(wasserstein1(a, c), 2.0, 0.04);  // merged-support path
}

TEST(Uniqueness, Examples) {
  const std::vector<std::string> el = {"C", "H", "H", "H", "H"};
  auto methane = infer_bonds(el, testing::methane_positions(), tables());
  std::vector<BondGraph> same = {methane, methane};
  EXPECT_EQ(uniqueness_fraction(same), 0.5);
  const std::vector<std::string> cc = {"C", "C"};
  std::vector<BondGraph> distinct = {methane, infer_bonds(cc, pair_at(1.54), tables()),
                                     infer_bonds(cc, pair_at(1.20), tables())};
  EXPECT_EQ(uniqueness_fraction(distinct), 1.0);
}

TEST(Uniqueness, PermutedGraphsHashEqual) {
  // Propanol-like labelled graph, relabelled by several permutations.
  BondGraph g;
  g.elements = {"C", "C", "C", "O", "H"};
  g.bonds = {{0, 1, 1}, {1, 2, 1}, {2, 3, 1}, {3, 4, 1}};
  const auto h = graph_hash(g);
  Rng rng(3);
  std::vector<std::size_t> perm = {0, 1, 2, 3, 4};
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    BondGraph p;
    p.elements.resize(5);
    for (std::size_t i = 0; i < 5; ++i) p.elements[perm[i]] = g.elements[i];
    for (const auto& b : g.bonds) p.bonds.push_back({std::min(perm[b.i], perm[b.j]), std::max(perm[b.i], perm[b.j]), b.order});
    EXPECT_EQ(graph_hash(p), h);
  }
  // Same elements, different connectivity.
  BondGraph other = g;
  other.bonds = {{0, 1, 1}, {1, 2, 1}, {1, 3, 1}, {3, 4, 1}};
  EXPECT_NE(graph_hash(other), h);
  BondGraph order = g;
  order.bonds[0].order = 2;
  EXPECT_NE(graph_hash(order), h);
}

}  // namespace
}  // namespace edm::chem
