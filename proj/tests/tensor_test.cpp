// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>

#include "support.hpp"

namespace edm {
namespace {

using ad::Tensor;

TEST(Tensor, SiluOfZeroIsZero) { EXPECT_EQ(ad::silu(Tensor::scalar(0.0)).item(), 0.0); }

TEST(Tensor, IdentityMatmulReturnsVector) {
  auto eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto v = Tensor::constant({3, 1}, {0.3, -1.7, 2.5});
  auto out = ad::matmul(eye, v);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out[k], v[k]);
}

TEST(Tensor, SigmoidMatchesLongDoubleReference) {
  const long double ref = 1.0L / (1.0L + std::exp(-0.5L));
  EXPECT_NEAR(ad::sigmoid(Tensor::scalar(0.5)).item(), static_cast<double>(ref), 1e-12);
  // The stable branch for large negative inputs.
  EXPECT_NEAR(ad::sigmoid_scalar(-40.0), static_cast<double>(1.0L / (1.0L + std::exp(40.0L))), 1e-30);
}

TEST(Tensor, ShapeMismatchNamesBothShapes) {
  auto a = Tensor::constant({2, 3}, std::vector<double>(6, 1.0));
  auto b = Tensor::constant({4, 5}, std::vector<double>(20, 1.0));
  try {
    (void)ad::add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ad::ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2, 3]"), std::string::npos) << what;
    EXPECT_NE(what.find("[4, 5]"), std::string::npos) << what;
  }
  EXPECT_THROW((void)ad::matmul(a, a), ad::ShapeError);
}

TEST(Tensor, BackwardOfSumOfSquares) {
  auto p = Tensor::parameter({2}, {1.0, 2.0});
  ad::backward(ad::sum(ad::square(p)));
  ASSERT_TRUE(p.has_grad());
  EXPECT_EQ(p.grad()[0], 2.0);
  EXPECT_EQ(p.grad()[1], 4.0);
}

TEST(Tensor, BackwardRejectsNonScalarLoss) {
  auto p = Tensor::parameter({2}, {1.0, 2.0});
  EXPECT_THROW(ad::backward(ad::square(p)), std::invalid_argument);
}

TEST(Tensor, ConstantAncestorGetsNoGradient) {
  auto c = Tensor::constant({2}, {3.0, 4.0});
  auto p = Tensor::parameter({2}, {1.0, 2.0});
  ad::backward(ad::sum(c * p));
  EXPECT_FALSE(c.has_grad());
  EXPECT_EQ(p.grad()[0], 3.0);
}

TEST(Tensor, ForwardIsBitDeterministic) {
  Rng rng(3);
  auto cfg = testing::tiny_config(2, 8, 3);
  auto dyn = testing::random_dynamics(cfg, rng);
  auto zx = testing::centered_points(5, rng);
  auto zh = standard_normal(5, 3, rng);
  auto a = dyn.predict(zx, zh, 7, 20);
  auto b = dyn.predict(zx, zh, 7, 20);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// Every primitive, composed, against central differences.
TEST(Tensor, GradientOfOpCompositionMatchesFiniteDifferences) {
  Rng rng(11);
  ParameterSet ps;
  std::uniform_real_distribution<double> u(0.5, 1.5);
  auto fill = [&](std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = u(rng);
    return v;
  };
  ps.add("a", {4, 3}, fill(12));
  ps.add("b", {3, 2}, fill(6));
  ps.add("c", {2}, fill(2));
  ps.add("d", {4, 5}, fill(20));
  const std::vector<std::size_t> rows = {0, 2, 2, 3, 1};
  const std::vector<std::size_t> seg = {0, 1, 1, 0, 2};
  auto loss = [&] {
    const auto& a = ps.at("a");
    const auto& b = ps.at("b");
    const auto& c = ps.at("c");
    const auto& d = ps.at("d");
    auto m = ad::matmul(a, b) + c;                         // trailing broadcast
    auto s = ad::silu(m) * ad::sigmoid(m) - ad::exp(m * 0.1);
    auto cat = ad::concat_last({s, ad::log(ad::slice_last(d, 1, 3)), ad::sqrt(ad::slice_last(d, 0, 1))});
    auto g = ad::gather_rows(cat, rows);
    auto sc = ad::scatter_add_rows(g, seg, 3);
    auto r = ad::sum_last(ad::square(sc)) / (ad::sum_last(sc) + 10.0);
    return ad::mean(r) + ad::sum(ad::neg(d) * 0.01);
  };
  EXPECT_LT(testing::worst_gradient_error(ps, loss), 1e-6);
}

TEST(Tensor, GradientOfTwoLayerSiluNetworkMatchesFiniteDifferences) {
  Rng rng(5);
  ParameterSet ps;
  nn::add_linear(ps, "l", 0, 4, 6, rng);
  nn::add_linear(ps, "l", 1, 6, 1, rng);
  auto x = Tensor::from_matrix(standard_normal(7, 4, rng));
  auto loss = [&] { return ad::sum(nn::linear(ps, "l", 1, ad::silu(nn::linear(ps, "l", 0, x)))); };
  EXPECT_LT(testing::worst_gradient_error(ps, loss), 1e-4);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterSet ps;
  ps.add("w", {1}, {1.0});
  Adam opt({0.1});
  ps.zero_grad();
  ad::backward(ps.at("w") * 1.0);
  opt.step(ps);
  EXPECT_NEAR(ps.at("w")[0], 0.9, 1e-6);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParameterSet ps;
  ps.add("w", {2}, {1.0, -2.0});
  Adam opt({0.1});
  ps.zero_grad();
  ad::backward(ad::sum(ps.at("w") * 0.0));
  opt.step(ps);
  EXPECT_EQ(ps.at("w")[0], 1.0);
  EXPECT_EQ(ps.at("w")[1], -2.0);
}

TEST(Adam, TwoStepsMatchScalarReference) {
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, g = 0.3;
  double w = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    w -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  ParameterSet ps;
  ps.add("w", {1}, {2.0});
  Adam opt({lr, b1, b2, eps});
  for (int t = 0; t < 2; ++t) {
    ps.zero_grad();
    ad::backward(ps.at("w") * g);
    opt.step(ps);
  }
  EXPECT_NEAR(ps.at("w")[0], w, 1e-10);
}

TEST(Adam, MissingGradientNamesParameter) {
  ParameterSet ps;
  ps.add("layer0.phi_e.w0", {1}, {1.0});
  Adam opt({0.1});
  try {
    opt.step(ps);
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("layer0.phi_e.w0"), std::string::npos);
  }
}

TEST(ParameterSet, SerializationRoundTripIsByteIdentical) {
  Rng rng(9);
  auto params = init_dynamics_params(testing::tiny_config(2, 8, 4), rng);
  std::ostringstream first(std::ios::binary);
  io::write_records(first, io::to_records(params));
  std::istringstream in(first.str(), std::ios::binary);
  auto back = io::from_records(io::read_records(in));
  std::ostringstream second(std::ios::binary);
  io::write_records(second, io::to_records(back));
  EXPECT_EQ(first.str(), second.str());
  for (const auto& [path, t] : params) {
    ASSERT_TRUE(back.contains(path));
    for (std::size_t k = 0; k < t.numel(); ++k) EXPECT_EQ(back.at(path)[k], t[k]);
  }
}

TEST(ParameterSet, RejectsDuplicatePaths) {
  ParameterSet ps;
  ps.add("w", {1}, {1.0});
  EXPECT_THROW(ps.add("w", {1}, {2.0}), std::invalid_argument);
}

}  // namespace
}  // namespace edm
