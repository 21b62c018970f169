// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "etc/kernels.hpp"

namespace etc {
namespace {

Matrix<float> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Matrix<float> m(r, c);
  for (float& v : m.values()) v = normal(rng);
  return m;
}

class ThreadsGuard {
 public:
  explicit ThreadsGuard(int n) : previous_(kernels::num_threads()) { kernels::set_num_threads(n); }
  ~ThreadsGuard() { kernels::set_num_threads(previous_); }

 private:
  int previous_;
};

TEST(Kernels, GemmMatchesNaiveLoop) {
  std::mt19937_64 rng(1);
  const auto a = random_matrix(7, 5, rng), b = random_matrix(5, 3, rng);
  Matrix<float> c;
  kernels::gemm_nn(a, b, c);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 5; ++k) s += double(a(i, k)) * b(k, j);
      EXPECT_NEAR(c(i, j), s, 1e-5);
    }
}

TEST(Kernels, BandScoresSlotLayout) {
  std::mt19937_64 rng(2);
  const std::size_t n = 7, r = 2;
  const auto q = random_matrix(n, 3, rng), k = random_matrix(n, 3, rng);
  Matrix<float> s;
  kernels::band_scores(q, k, r, s);
  ASSERT_EQ(s.cols(), kernels::slot_count(r));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t slot = 0; slot < s.cols(); ++slot) {
      const auto j = kernels::slot_key(i, slot, r);
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
      double dot = 0;
      for (std::size_t c = 0; c < 3; ++c) dot += double(q(i, c)) * k(static_cast<std::size_t>(j), c);
      EXPECT_NEAR(s(i, slot), dot, 1e-5);
    }
}

TEST(Kernels, SlotKeysCoverBlocks) {
  // Query 4 with r = 2 sits in block 1 (rows 3..5) and sees key blocks 0..2.
  EXPECT_EQ(kernels::slot_key(4, 0, 2), 0);
  EXPECT_EQ(kernels::slot_key(4, 8, 2), 8);
  EXPECT_EQ(kernels::slot_key(0, 0, 2), -3);
  EXPECT_EQ(kernels::block_count(7, 2), 3u);
}

TEST(Kernels, ParallelMatchesSerial) {
  ThreadsGuard threads(4);
  std::mt19937_64 rng(3);
  for (int t = 0; t < 5; ++t) {
    const std::size_t n = 3 + rng() % 90, d = 1 + rng() % 17, m = 1 + rng() % 40, r = rng() % 7;
    const auto a = random_matrix(n, d, rng), b = random_matrix(d, m, rng), bt = random_matrix(m, d, rng);
    Matrix<float> p, s;
    kernels::gemm_nn(a, b, p);
    kernels::serial::gemm_nn(a, b, s);
    EXPECT_LE(max_abs_diff(p, s), 1e-5f);
    kernels::gemm_nt(a, bt, p);
    kernels::serial::gemm_nt(a, bt, s);
    EXPECT_LE(max_abs_diff(p, s), 1e-5f);
    const auto at = random_matrix(d, n, rng);
    kernels::gemm_tn(at, b, p);
    kernels::serial::gemm_tn(at, b, s);
    EXPECT_LE(max_abs_diff(p, s), 1e-5f);
    const auto k = random_matrix(n, d, rng);
    kernels::band_scores(a, k, r, p);
    kernels::serial::band_scores(a, k, r, s);
    EXPECT_LE(max_abs_diff(p, s), 1e-5f);
    const auto w = random_matrix(n, kernels::slot_count(r), rng);
    kernels::band_apply(w, k, r, p);
    kernels::serial::band_apply(w, k, r, s);
    EXPECT_LE(max_abs_diff(p, s), 1e-5f);
    kernels::band_scatter(w, k, r, p);
    kernels::serial::band_scatter(w, k, r, s);
    EXPECT_LE(max_abs_diff(p, s), 1e-5f);
    kernels::softmax_rows(a, -5000.0f, p);
    kernels::serial::softmax_rows(a, -5000.0f, s);
    EXPECT_LE(max_abs_diff(p, s), 1e-6f);
  }
}

TEST(Kernels, ThreadCountIsConfigurable) {
  ThreadsGuard threads(3);
  EXPECT_EQ(kernels::num_threads(), 3);
}

}  // namespace
}  // namespace etc
