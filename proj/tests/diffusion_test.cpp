// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "support.hpp"

namespace edm {
namespace {

FeatureLayout layout2() { return FeatureLayout{2, true, {}}; }

TEST(Scaling, Examples) {
  auto mol = Molecule::from_types(Matrix(1, 3, {1, 2, 3}), {1}, 3, {6});
  auto unit = scale(mol, FeatureLayout{3, true, {1.0, 1.0, 1.0}});
  EXPECT_EQ(unit.x, mol.positions);
  EXPECT_EQ(unit.h, Matrix(1, 4, {0, 1, 0, 6}));
  auto s = scale(mol, FeatureLayout{3, true, {}});
  EXPECT_EQ(s.h(0, 1), 0.25);
  EXPECT_NEAR(s.h(0, 3), 0.6, 1e-15);
  EXPECT_THROW((void)scale(mol, FeatureLayout{3, true, {1.0, 0.0, 1.0}}), std::invalid_argument);
}

TEST(Scaling, UnscaleInvertsScale) {
  Rng rng(1);
  auto mol = testing::random_molecule(6, 4, rng);
  FeatureLayout layout{4, true, {1.7, 0.25, 0.1}};
  auto back = unscale(scale(mol, layout), layout);
  EXPECT_LT(max_abs_diff(back.positions, mol.positions), 1e-12);
  EXPECT_EQ(back.onehot, mol.onehot);
  EXPECT_EQ(back.charges, mol.charges);
}

TEST(QSample, StaysInSubspace) {
  Rng rng(2);
  auto s = NoiseSchedule::polynomial(50);
  auto data = scale(testing::random_molecule(5, 2, rng), layout2());
  for (int t = 0; t <= 50; t += 5) {
    auto z = q_sample(data, t, s, draw_noise(5, 3, rng));
    EXPECT_LT(geometry::cog_magnitude(z.zx), 1e-10);
  }
}

TEST(QSample, MomentsMatchMarginal) {
  Rng rng(3);
  auto s = NoiseSchedule::polynomial(50);
  auto data = scale(testing::random_molecule(3, 2, rng), layout2());
  const int t = 20;
  const std::size_t n = 100000;
  std::vector<double> x0(n), h0(n), x0sq(n), h0sq(n);
  for (std::size_t k = 0; k < n; ++k) {
    auto z = q_sample(data, t, s, draw_noise(3, 3, rng));
    x0[k] = z.zx(0, 1);
    h0[k] = z.zh(1, 2);
  }
  auto mx = testing::mean_se(x0), mh = testing::mean_se(h0);
  EXPECT_NEAR(mx.mean, s.alpha(t) * data.x(0, 1), 3 * mx.se);
  EXPECT_NEAR(mh.mean, s.alpha(t) * data.h(1, 2), 3 * mh.se);
  for (std::size_t k = 0; k < n; ++k) {
    x0sq[k] = (x0[k] - s.alpha(t) * data.x(0, 1)) * (x0[k] - s.alpha(t) * data.x(0, 1));
    h0sq[k] = (h0[k] - s.alpha(t) * data.h(1, 2)) * (h0[k] - s.alpha(t) * data.h(1, 2));
  }
  auto vx = testing::mean_se(x0sq), vh = testing::mean_se(h0sq);
  EXPECT_NEAR(vx.mean, s.sigma2(t) * (1.0 - 1.0 / 3.0), 3 * vx.se);  // subspace variance
  EXPECT_NEAR(vh.mean, s.sigma2(t), 3 * vh.se);
}

TEST(TrainingLoss, MatchesHandComputedObjective) {
  Rng rng(4);
  auto cfg = testing::tiny_config(2, 8, 3);
  auto dyn = testing::random_dynamics(cfg, rng);
  auto s = NoiseSchedule::polynomial(30);
  DiffusionBatch batch;
  std::vector<int> ts = {0, 7, 30};
  std::vector<NoiseDraw> noise;
  for (std::size_t m : {3u, 4u, 2u}) {
    batch.molecules.push_back(scale(testing::random_molecule(m, 2, rng), layout2()));
    noise.push_back(draw_noise(m, 3, rng));
  }
  double simple = 0.0, variational = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    auto z = q_sample(batch.molecules[b], ts[b], s, noise[b]);
    auto [ex, eh] = dyn.predict(z.zx, z.zh, ts[b], 30);
    const double sq_x = squared_norm(noise[b].x - ex), sq_h = squared_norm(noise[b].h - eh);
    simple += 0.5 * (sq_x + sq_h) / 3.0;
    if (ts[b] > 0) variational += 0.5 * s.kl_weight(ts[b]) * (sq_x + sq_h) / 3.0;
  }
  EXPECT_NEAR(training_loss(batch, ts, noise, s, dyn, LossWeighting::kSimplified).item(), simple, 1e-12);
  std::vector<int> ts_var = {1, 7, 30};
  auto z0 = q_sample(batch.molecules[0], 1, s, noise[0]);
  auto [e0x, e0h] = dyn.predict(z0.zx, z0.zh, 1, 30);
  variational += 0.5 * s.kl_weight(1) * (squared_norm(noise[0].x - e0x) + squared_norm(noise[0].h - e0h)) / 3.0;
  EXPECT_NEAR(training_loss(batch, ts_var, noise, s, dyn, LossWeighting::kVariational).item(), variational, 1e-10);
}

TEST(TrainingLoss, RotationInvariantForEquivariantModel) {
  Rng rng(5);
  auto dyn = testing::random_dynamics(testing::tiny_config(2, 8, 3), rng);
  auto s = NoiseSchedule::polynomial(30);
  auto mol = scale(testing::random_molecule(5, 2, rng), layout2());
  auto eps = draw_noise(5, 3, rng);
  auto q = geometry::random_orthogonal(rng, true);
  DiffusionBatch a{{mol}, {}}, b{{mol}, {}};
  b.molecules[0].x = apply_rotation(q, mol.x);
  NoiseDraw reps{apply_rotation(q, eps.x), eps.h};
  std::vector<int> ts = {12};
  const double la = training_loss(a, ts, std::span<const NoiseDraw>(&eps, 1), s, dyn, LossWeighting::kSimplified).item();
  const double lb = training_loss(b, ts, std::span<const NoiseDraw>(&reps, 1), s, dyn, LossWeighting::kSimplified).item();
  EXPECT_NEAR(la, lb, 1e-10);
}

TEST(Sampling, EveryLatentStaysCentered) {
  Rng rng(6);
  auto dyn = testing::random_dynamics(testing::tiny_config(2, 8, 3), rng, 0.1);
  // A large precision floor keeps 1/alpha_T small, so an untrained network
  // cannot blow the chain up.
  auto s = NoiseSchedule::polynomial(40, 0.2);
  RngNoise noise(rng);
  double worst = 0.0;
  SampleOptions opts;
  opts.observer = [&](std::size_t, const LatentState& z) { worst = std::max(worst, geometry::cog_magnitude(z.zx)); };
  std::vector<std::size_t> sizes = {4, 6};
  auto mols = sample_batch(sizes, s, dyn, layout2(), noise, {}, opts);
  EXPECT_EQ(mols.size(), 2u);
  EXPECT_LT(worst, 1e-8);
}

TEST(Sampling, ZeroPredictionChainVarianceMatchesScalarRecursion) {
  const int T = 10;
  auto s = NoiseSchedule::polynomial(T, 1e-2);
  auto dyn = testing::zero_dynamics(testing::tiny_config(1, 2, 3));
  // Var of one coordinate under the ambient recursion; the subspace scales by (1 - 1/M).
  double var = 1.0;
  for (int t = T; t >= 1; --t) {
    auto tr = s.transition(t, t - 1);
    const double post = tr.sigma2_ts * s.sigma2(t - 1) / s.sigma2(t);
    var = var / (tr.alpha_ts * tr.alpha_ts) + post;
  }
  const std::size_t m = 2, chains = 10000;
  var *= 1.0 - 1.0 / static_cast<double>(m);

  Rng rng(7);
  RngNoise noise(rng);
  std::vector<double> sq;
  SampleOptions opts;
  opts.observer = [&](std::size_t, const LatentState& z) {
    if (z.t == 0)
      for (std::size_t a = 0; a < 3; ++a) sq.push_back(z.zx(0, a) * z.zx(0, a));
  };
  std::vector<std::size_t> sizes(chains, m);
  (void)sample_batch(sizes, s, dyn, layout2(), noise, {}, opts);
  auto [mean, se] = testing::mean_se(sq);
  EXPECT_NEAR(mean, var, 3.0 * se);
}

TEST(Sampling, PairedSeedChainIsEquivariant) {
  Rng init(8);
  auto dyn = testing::random_dynamics(testing::tiny_config(2, 16, 3), init, 0.1);
  auto s = NoiseSchedule::polynomial(30, 0.2);
  auto q = geometry::random_orthogonal(init, true);
  Rng r1(99), r2(99);
  RngNoise n1(r1), base2(r2);
  RotatedNoise n2(base2, q);
  auto a = sample(5, s, dyn, layout2(), n1);
  auto b = sample(5, s, dyn, layout2(), n2);
  EXPECT_LT(max_abs_diff(b.positions, apply_rotation(q, a.positions)), 1e-8);
  EXPECT_EQ(a.onehot, b.onehot);
  EXPECT_EQ(a.charges, b.charges);
}

TEST(Decoder, VanishingNoiseReturnsScaledLatent) {
  auto s = NoiseSchedule::polynomial(10);
  Rng rng(9);
  LatentState z0{testing::centered_points(3, rng), Matrix(3, 3), 0};
  z0.zh(0, 0) = z0.zh(1, 1) = z0.zh(2, 0) = 0.25 * s.alpha(0);
  RngNoise noise(rng);
  auto mol = decode_with_prediction(z0, Matrix(3, 3), s, layout2(), noise, DecodeMode::kMode);
  EXPECT_EQ(mol.positions, (1.0 / s.alpha(0)) * z0.zx);
  EXPECT_EQ(mol.type_index(0), 0u);
  EXPECT_EQ(mol.type_index(1), 1u);
}

// Independent evaluation of the per-class interval mass.
double class_mass(double z, double sigma) {
  auto cdf = [](double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); };
  return cdf((1.5 - z) / sigma) - cdf((0.5 - z) / sigma);
}

TEST(Decoder, CleanLatentSelectsItsClass) {
  const double scale_1h = 0.25;
  for (double sigma0 : {0.005, 0.01, 0.02}) {
    for (std::size_t k = 0; k < 4; ++k) {
      const double a0 = std::sqrt(1.0 - sigma0 * sigma0);
      std::vector<double> z(4, 0.0);
      z[k] = a0 * scale_1h;
      auto lp = type_log_probs(z, sigma0, scale_1h);
      EXPECT_GT(std::exp(lp[k]), 0.999);
      double total = 0.0;
      for (double v : lp) total += std::exp(v);
      EXPECT_NEAR(total, 1.0, 1e-12);
      // Cross-check the normalized mass against direct CDF differences.
      double norm = 0.0;
      for (double v : z) norm += class_mass(v / scale_1h, sigma0 / scale_1h);
      EXPECT_NEAR(std::exp(lp[k]), class_mass(z[k] / scale_1h, sigma0 / scale_1h) / norm, 1e-12);
    }
  }
}

TEST(Decoder, CleanChargeHasNearUnitProbability) {
  // sigma 0.01 at scale 0.1 puts the bin edges 5 sd away.
  EXPECT_NEAR(charge_log_prob(0.6, 6, 0.01, 0.1), std::log(std::erf(5.0 / std::numbers::sqrt2)), 1e-12);
  EXPECT_GT(charge_log_prob(0.6, 6, 0.01, 0.1), -1e-6);
  EXPECT_GT(charge_log_prob(0.0, 0, 0.001, 0.1), -1e-12);
  EXPECT_LT(charge_log_prob(0.6, 5, 0.01, 0.1), -10.0);
}

TEST(Likelihood, ZerothTermsForPerfectPrediction) {
  // s chosen so sigma_0 / alpha_0 is 0.01 to within 3e-6.
  auto s = NoiseSchedule::polynomial(10, 5e-5);
  auto dyn = testing::zero_dynamics(testing::tiny_config(1, 2, 3));
  Rng rng(10);
  auto data = scale(testing::random_molecule(2, 2, rng), layout2());
  NoiseDraw zero{Matrix(2, 3), Matrix(2, 3)};
  auto l0 = zeroth_terms(data, zero, s, dyn, layout2());
  const double ratio = s.sigma(0) / s.alpha(0);
  EXPECT_NEAR(l0.x, -3.0 * std::log(std::sqrt(2.0 * std::numbers::pi) * ratio), 1e-12);
  EXPECT_NEAR(l0.x, 11.0587, 1e-3);
  // Independent evaluation of the feature term from interval masses.
  auto mass = [](double lo, double hi) {
    return 0.5 * (std::erfc(-hi / std::numbers::sqrt2) - std::erfc(-lo / std::numbers::sqrt2));
  };
  const double a0 = s.alpha(0), s0 = s.sigma(0);
  double expected_h = 0.0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double sh = s0 / 0.25;
    double norm = 0.0, own = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      const double u = a0 * data.h(i, k) / 0.25;
      const double p = mass((0.5 - u) / sh, (1.5 - u) / sh);
      norm += p;
      if (data.h(i, k) > 0.0) own = p;
    }
    expected_h += std::log(own / norm);
    const double c = data.h(i, 2) / 0.1, u = a0 * c, sc = s0 / 0.1;
    expected_h += std::log(mass((c - 0.5 - u) / sc, (c + 0.5 - u) / sc));
  }
  EXPECT_NEAR(l0.h, expected_h, 1e-9);
  EXPECT_LE(l0.h, 0.0);
  EXPECT_GT(l0.h, -1e-4);
}

TEST(Likelihood, PriorTermVanishesForNoisySchedule) {
  auto s = NoiseSchedule::polynomial(1000);
  Rng rng(11);
  auto data = scale(testing::random_molecule(6, 2, rng), layout2());
  EXPECT_LT(std::abs(prior_term(data, s)), 1e-6);
}

TEST(Likelihood, TermsInvariantUnderPairedRotation) {
  Rng rng(12);
  auto dyn = testing::random_dynamics(testing::tiny_config(2, 8, 3), rng, 0.3);
  auto s = NoiseSchedule::polynomial(20);
  auto data = scale(testing::random_molecule(4, 2, rng), layout2());
  auto q = geometry::random_orthogonal(rng, true);
  auto rotated = data;
  rotated.x = apply_rotation(q, data.x);
  for (int t : {1, 10, 20}) {
    auto eps = draw_noise(4, 3, rng);
    NoiseDraw reps{apply_rotation(q, eps.x), eps.h};
    EXPECT_NEAR(denoising_term(data, t, eps, s, dyn), denoising_term(rotated, t, reps, s, dyn), 1e-8);
  }
  auto eps0 = draw_noise(4, 3, rng);
  NoiseDraw reps0{apply_rotation(q, eps0.x), eps0.h};
  auto a = zeroth_terms(data, eps0, s, dyn, layout2());
  auto b = zeroth_terms(rotated, reps0, s, dyn, layout2());
  EXPECT_NEAR(a.x, b.x, 1e-8);
  EXPECT_NEAR(a.h, b.h, 1e-8);
  EXPECT_NEAR(prior_term(data, s), prior_term(rotated, s), 1e-12);
}

TEST(Likelihood, EstimateAddsSizeLogProbability) {
  Rng r1(13), r2(13);
  auto dyn = testing::random_dynamics(testing::tiny_config(1, 4, 3), r1, 0.2);
  (void)testing::random_dynamics(testing::tiny_config(1, 4, 3), r2, 0.2);
  auto s = NoiseSchedule::polynomial(10);
  auto data = scale(testing::random_molecule(3, 2, r1), layout2());
  (void)testing::random_molecule(3, 2, r2);
  auto a = nll_estimate(data, s, dyn, layout2(), 0.0, r1);
  auto b = nll_estimate(data, s, dyn, layout2(), std::log(0.25), r2);
  EXPECT_NEAR(b.nll_total - a.nll_total, std::log(4.0), 1e-10);
  EXPECT_NEAR(a.nll_total, -(a.diffusion + a.zeroth_x + a.zeroth_h + a.base), 1e-10);
}

TEST(SizeDistribution, Examples) {
  std::vector<std::size_t> five(7, 5);
  auto d = SizeDistribution::fit(five);
  EXPECT_EQ(d.prob(5), 1.0);
  EXPECT_EQ(d.log_prob(5), 0.0);
  std::vector<std::size_t> mixed = {3, 3, 4};
  auto e = SizeDistribution::fit(mixed);
  EXPECT_DOUBLE_EQ(e.prob(3), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(e.prob(4), 1.0 / 3.0);
  EXPECT_EQ(e.log_prob(9), -std::numeric_limits<double>::infinity());
  EXPECT_THROW((void)SizeDistribution::fit(std::vector<std::size_t>{}), std::invalid_argument);
}

TEST(SizeDistribution, SamplingMatchesFrequencies) {
  std::vector<std::size_t> sizes = {3, 3, 4, 5, 5, 5, 9};
  auto d = SizeDistribution::fit(sizes);
  Rng rng(14);
  std::map<std::size_t, double> hits;
  const double n = 100000;
  for (int k = 0; k < 100000; ++k) hits[d.sample(rng)] += 1;
  double chi2 = 0.0;
  for (const auto& [m, p] : d.probabilities()) chi2 += (hits[m] - n * p) * (hits[m] - n * p) / (n * p);
  EXPECT_LT(chi2, 16.27);  // 99.9% quantile, 3 degrees of freedom
  EXPECT_EQ(hits.size(), 4u);
}

TEST(ConditionDistribution, SingleMoleculeAndMarginal) {
  std::vector<double> one_value = {2.5};
  std::vector<std::size_t> one_size = {4};
  auto single = ConditionDistribution::fit(one_value, one_size, 10);
  EXPECT_EQ(single.probabilities().size(), 1u);
  EXPECT_EQ(single.probabilities().begin()->second, 1.0);

  std::vector<double> values = {0.1, 0.5, 0.9, 0.2, 0.7, 0.4};
  std::vector<std::size_t> sizes = {3, 4, 4, 3, 5, 4};
  auto joint = ConditionDistribution::fit(values, sizes, 4);
  auto marg = joint.size_marginal();
  auto direct = SizeDistribution::fit(sizes);
  for (const auto& [m, p] : direct.probabilities()) EXPECT_NEAR(marg[m], p, 1e-15);
}

TEST(ConditionDistribution, SamplingReproducesJointAndUsesBinCenters) {
  std::vector<double> values = {0.1, 0.5, 0.9, 0.2, 0.7, 0.4, 0.45};
  std::vector<std::size_t> sizes = {3, 4, 4, 3, 5, 4, 4};
  auto joint = ConditionDistribution::fit(values, sizes, 4);
  Rng rng(15);
  std::map<std::pair<int, std::size_t>, double> hits;
  const int n = 100000;
  for (int k = 0; k < n; ++k) {
    auto [c, m] = joint.sample(rng);
    const int b = joint.bin_of(c);
    ASSERT_NEAR(c, joint.bin_center(b), 1e-12);
    hits[{b, m}] += 1;
  }
  for (const auto& [key, p] : joint.probabilities()) {
    const double se = std::sqrt(p * (1 - p) / n);
    EXPECT_NEAR(hits[key] / n, p, 3 * se + 1e-12);
  }
}

}  // namespace
}  // namespace edm
