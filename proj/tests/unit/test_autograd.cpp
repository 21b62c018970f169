// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <vector>

#include "etc/autograd.hpp"
#include "etc/kernels.hpp"

namespace etc {
namespace {

using ag::Var;
using Op = std::function<Var<double>(const std::vector<Var<double>>&)>;

Matrix<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix<double> m(r, c);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

// Reduces an op output to a scalar with fixed random weights, then compares
// every input gradient with central differences.
double op_gradient_error(const Op& op, std::vector<Matrix<double>> inputs, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix<double> probe;
  auto loss = [&](const std::vector<Var<double>>& vars) {
    const Var<double> out = op(vars);
    if (!probe.same_shape(Matrix<double>(out.rows(), out.cols()))) probe = random_matrix(out.rows(), out.cols(), rng);
    // sum(out .* probe) as a dot product of the flattened output and probe.
    Matrix<double> flat_probe(1, probe.size());
    std::copy(probe.values().begin(), probe.values().end(), flat_probe.values().begin());
    std::vector<Var<double>> rows;
    for (std::size_t i = 0; i < out.rows(); ++i) rows.push_back(ag::slice_rows(out, i, 1));
    const Var<double> flat = ag::concat_cols(std::span<const Var<double>>(rows));
    return ag::matmul_nt(flat, ag::constant(flat_probe));
  };
  std::vector<Var<double>> vars;
  for (auto& m : inputs) vars.emplace_back(m, true);
  ag::backward(loss(vars));
  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix<double> analytic = vars[k].grad();
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[e] += 1e-5;
      minus[k].data()[e] -= 1e-5;
      std::vector<Var<double>> vp, vm;
      for (auto& m : plus) vp.emplace_back(m, false);
      for (auto& m : minus) vm.emplace_back(m, false);
      const double numeric = (loss(vp).scalar() - loss(vm).scalar()) / 2e-5;
      worst = std::max(worst, std::abs(numeric - analytic.data()[e]) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

TEST(Autograd, ElementaryOps) {
  std::mt19937_64 rng(1);
  const auto a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng), c = random_matrix(3, 4, rng);
  const auto row = random_matrix(1, 4, rng), bt = random_matrix(5, 4, rng);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::matmul(v[0], v[1]); }, {a, b}, 1), 1e-7);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::matmul_nt(v[0], v[1]); }, {a, bt}, 2), 1e-7);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::add(v[0], v[1]); }, {a, c}, 3), 1e-7);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::add_row(v[0], v[1]); }, {a, row}, 4), 1e-7);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::scale(v[0], 0.37); }, {a}, 5), 1e-7);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::gelu(v[0]); }, {a}, 6), 1e-7);
}

TEST(Autograd, NormalizationAndSoftmax) {
  std::mt19937_64 rng(2);
  const auto x = random_matrix(3, 5, rng), g = random_matrix(1, 5, rng), b = random_matrix(1, 5, rng);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::layer_norm(v[0], v[1], v[2], 1e-12); }, {x, g, b}, 7), 1e-6);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::softmax(v[0], -5000.0); }, {x}, 8), 1e-7);
}

TEST(Autograd, ShapeOps) {
  std::mt19937_64 rng(3);
  const auto a = random_matrix(3, 4, rng), b = random_matrix(2, 4, rng), c = random_matrix(3, 2, rng);
  EXPECT_LT(op_gradient_error(
                [](auto& v) {
                  const std::vector<Var<double>> parts{v[0], v[1]};
                  return ag::concat_rows(std::span<const Var<double>>(parts));
                },
                {a, b}, 9),
            1e-7);
  EXPECT_LT(op_gradient_error(
                [](auto& v) {
                  const std::vector<Var<double>> parts{v[0], v[1]};
                  return ag::concat_cols(std::span<const Var<double>>(parts));
                },
                {a, c}, 10),
            1e-7);
  EXPECT_LT(op_gradient_error([](auto& v) { return ag::slice_cols(v[0], 1, 2); }, {a}, 11), 1e-7);
  const std::vector<std::int32_t> ids{2, 0, 2, 1};
  EXPECT_LT(op_gradient_error([&](auto& v) { return ag::gather_rows(v[0], std::span<const std::int32_t>(ids)); }, {a},
                              12),
            1e-7);
}

TEST(Autograd, AttentionOps) {
  std::mt19937_64 rng(4);
  const std::size_t n = 7, r = 2, d = 3;
  const auto q = random_matrix(n, d, rng), k = random_matrix(n, d, rng), keys = random_matrix(5, d, rng);
  Grid<std::int32_t> labels(n, 4);
  for (auto& l : labels.values()) l = static_cast<std::int32_t>(rng() % 6) - 1;
  EXPECT_LT(op_gradient_error([&](auto& v) { return ag::relative_bias(v[0], v[1], labels); }, {q, keys}, 13), 1e-7);
  EXPECT_LT(op_gradient_error([&](auto& v) { return ag::band_scores(v[0], v[1], r); }, {q, k}, 14), 1e-7);
  const auto w = random_matrix(n, kernels::slot_count(r), rng);
  EXPECT_LT(op_gradient_error([&](auto& v) { return ag::band_apply(v[0], v[1], r); }, {w, k}, 15), 1e-7);
  const std::vector<std::int32_t> targets{1, 0, 4, 2, 2, 3, 1};
  EXPECT_LT(op_gradient_error(
                [&](auto& v) { return ag::cross_entropy(v[0], std::span<const std::int32_t>(targets)); },
                {random_matrix(n, 5, rng)}, 16),
            1e-7);
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Var<double> x(Matrix<double>(2, 2, 1.0), true);
  {
    ag::NoGradGuard guard;
    EXPECT_FALSE(ag::grad_enabled());
    const auto y = ag::scale(x, 2.0);
    EXPECT_TRUE(y.node()->parents.empty());
  }
  EXPECT_TRUE(ag::grad_enabled());
}

TEST(Autograd, GradientsAccumulateAcrossUses) {
  Var<double> x(Matrix<double>(1, 1, {3.0}), true);
  ag::backward(ag::add(ag::scale(x, 2.0), ag::scale(x, 5.0)));
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 7.0);
}

}  // namespace
}  // namespace etc
