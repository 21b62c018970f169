// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "etc/core_math.hpp"

namespace etc {
namespace {

Matrix<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix<double> m(r, c);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

TEST(MaskedSoftmax, Examples) {
  auto p = masked_softmax(Matrix<double>(1, 2, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(p(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 0.5);
  p = masked_softmax(Matrix<double>(1, 2, {std::log(2.0), 0.0}));
  EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0 / 3.0, 1e-15);
  p = masked_softmax(Matrix<double>(1, 2, {0.0, -10000.0}));
  EXPECT_NEAR(p(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(p(0, 1), 0.0, 1e-12);
}

TEST(MaskedSoftmax, FullyMaskedRowIsZero) {
  const auto p = masked_softmax(Matrix<double>(2, 3, {-10000.0, -10003.0, -10001.0, 1.0, 2.0, 3.0}));
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(p(0, c), 0.0);
  EXPECT_NEAR(p(1, 0) + p(1, 1) + p(1, 2), 1.0, 1e-12);
}

TEST(MaskedSoftmax, NonFiniteThrows) {
  EXPECT_THROW(masked_softmax(Matrix<double>(1, 2, {0.0, NAN})), std::domain_error);
  EXPECT_THROW(masked_softmax(Matrix<float>(1, 2, {INFINITY, 0.0f})), std::domain_error);
}

TEST(MaskedSoftmax, RowsSumToOneAndShiftInvariant) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    auto s = random_matrix(4, 1 + rng() % 12, rng, 5.0);
    const auto p = masked_softmax(s);
    auto shifted = s;
    const double c = std::normal_distribution<double>(0, 20)(rng);
    for (std::size_t j = 0; j < shifted.cols(); ++j) shifted(2, j) += c;
    const auto q = masked_softmax(shifted);
    for (std::size_t i = 0; i < 4; ++i) {
      double sum = 0;
      for (double v : p.row(i)) sum += v;
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
    for (std::size_t j = 0; j < s.cols(); ++j) EXPECT_NEAR(p(2, j), q(2, j), 1e-6);
  }
}

TEST(MaskedSoftmax, MonotoneInInput) {
  Matrix<double> s(1, 3, {0.1, 0.2, 0.3});
  const double before = masked_softmax(s)(0, 1);
  s(0, 1) = 0.9;
  EXPECT_GT(masked_softmax(s)(0, 1), before);
}

TEST(LayerNorm, ConstantInputGivesBias) {
  const auto y = layer_norm(Matrix<double>(1, 3, {2.5, 2.5, 2.5}), Matrix<double>(1, 3, {3.0, -1.0, 0.5}),
                            Matrix<double>(1, 3, {0.1, 0.2, 0.3}));
  EXPECT_NEAR(y(0, 0), 0.1, 1e-12);
  EXPECT_NEAR(y(0, 1), 0.2, 1e-12);
  EXPECT_NEAR(y(0, 2), 0.3, 1e-12);
}

TEST(LayerNorm, UnitVariancePair) {
  const auto y = layer_norm(Matrix<double>(1, 2, {1.0, -1.0}), Matrix<double>(1, 2, 1.0), Matrix<double>(1, 2), 1e-15);
  EXPECT_NEAR(y(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(y(0, 1), -1.0, 1e-12);
}

TEST(LayerNorm, MatchesIndependentImplementation) {
  std::mt19937_64 rng(2);
  const auto x = random_matrix(5, 8, rng, 3.0), gain = random_matrix(1, 8, rng), bias = random_matrix(1, 8, rng);
  const auto y = layer_norm(x, gain, bias, 1e-12);
  for (std::size_t i = 0; i < 5; ++i) {
    double mean = 0, var = 0;
    for (std::size_t j = 0; j < 8; ++j) mean += x(i, j) / 8;
    for (std::size_t j = 0; j < 8; ++j) var += (x(i, j) - mean) * (x(i, j) - mean) / 8;
    for (std::size_t j = 0; j < 8; ++j)
      EXPECT_NEAR(y(i, j), gain(0, j) * (x(i, j) - mean) / std::sqrt(var + 1e-12) + bias(0, j), 1e-10);
  }
}

TEST(LayerNorm, ShapeMismatchThrows) {
  EXPECT_THROW(layer_norm(Matrix<double>(2, 3), Matrix<double>(1, 4, 1.0), Matrix<double>(1, 3)), std::invalid_argument);
}

TEST(Gelu, TanhApproximation) {
  const auto y = gelu(Matrix<double>(1, 4, {0.0, 1.0, -1.0, 3.0}));
  auto ref = [](double x) { return 0.5 * x * (1 + std::tanh(std::sqrt(2 / M_PI) * (x + 0.044715 * x * x * x))); };
  EXPECT_EQ(y(0, 0), 0.0);
  for (std::size_t j = 1; j < 4; ++j) EXPECT_NEAR(y(0, j), ref((std::array<double, 4>{0, 1, -1, 3})[j]), 1e-14);
}

TEST(FeedForward, ZeroInputZeroBias) {
  std::mt19937_64 rng(3);
  const auto y = feed_forward(Matrix<double>(2, 4), random_matrix(4, 16, rng), Matrix<double>(1, 16),
                              random_matrix(16, 4, rng), Matrix<double>(1, 4));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(FeedForward, PassThroughBias) {
  std::mt19937_64 rng(4);
  const Matrix<double> b2(1, 4, {1.0, -2.0, 3.0, 0.5});
  const auto y = feed_forward(random_matrix(3, 4, rng), Matrix<double>(4, 16), Matrix<double>(1, 16),
                              Matrix<double>(16, 4), b2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y(i, j), b2(0, j));
}

TEST(FeedForward, MatchesScalarLoop) {
  std::mt19937_64 rng(5);
  const auto x = random_matrix(2, 4, rng), w1 = random_matrix(4, 16, rng), b1 = random_matrix(1, 16, rng);
  const auto w2 = random_matrix(16, 4, rng), b2 = random_matrix(1, 4, rng);
  const auto y = feed_forward(x, w1, b1, w2, b2);
  for (std::size_t i = 0; i < 2; ++i) {
    std::vector<double> h(16);
    for (std::size_t k = 0; k < 16; ++k) {
      double a = b1(0, k);
      for (std::size_t j = 0; j < 4; ++j) a += x(i, j) * w1(j, k);
      h[k] = 0.5 * a * (1 + std::tanh(std::sqrt(2 / M_PI) * (a + 0.044715 * a * a * a)));
    }
    for (std::size_t j = 0; j < 4; ++j) {
      double o = b2(0, j);
      for (std::size_t k = 0; k < 16; ++k) o += h[k] * w2(k, j);
      EXPECT_NEAR(y(i, j), o, 1e-10);
    }
  }
}

TEST(FeedForward, ShapeMismatchThrows) {
  EXPECT_THROW(feed_forward(Matrix<double>(1, 4), Matrix<double>(3, 16), Matrix<double>(1, 16), Matrix<double>(16, 4),
                            Matrix<double>(1, 4)),
               std::invalid_argument);
}

}  // namespace
}  // namespace etc
