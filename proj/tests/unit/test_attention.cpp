// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <random>

#include "etc/attention.hpp"
#include "etc/config.hpp"
#include "etc/core_math.hpp"
#include "etc/verify/oracles.hpp"

namespace etc {
namespace {

using Dense = Matrix<double>;

Dense random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Dense m(r, c);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

Projections<Dense> random_projections(std::size_t d, std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(double(d));
  return {random_matrix(d, d, rng, s), random_matrix(1, d, rng, 0.1), random_matrix(d, d, rng, s),
          random_matrix(1, d, rng, 0.1), random_matrix(d, d, rng, s), random_matrix(1, d, rng, 0.1),
          random_matrix(d, d, rng, s), random_matrix(1, d, rng, 0.1)};
}

AttentionParams<Dense> random_params(std::size_t d, std::size_t heads, std::size_t vocab, bool separate,
                                     std::mt19937_64& rng) {
  AttentionParams<Dense> p;
  p.heads = heads;
  p.global = random_projections(d, rng);
  if (separate) p.long_side = random_projections(d, rng);
  p.relative_keys = random_matrix(vocab, d, rng, 0.5);
  return p;
}

struct Instance {
  Dense xg, xl;
  PieceMasks masks;
  PieceLabels labels;
};

Instance random_instance(std::size_t ng, std::size_t nl, std::size_t r, std::size_t d, std::size_t vocab,
                         std::mt19937_64& rng, double keep = 0.75) {
  Instance in{random_matrix(ng, d, rng), random_matrix(nl, d, rng), full_masks(ng, nl, r), sequence_labels(ng, nl, r, 2)};
  std::bernoulli_distribution coin(keep);
  for (auto* m : {&in.masks.g2g, &in.masks.g2l, &in.masks.l2g})
    for (auto& v : m->values()) v = coin(rng);
  for (auto& v : in.masks.l2l.cells().values()) v = v && coin(rng);
  for (auto* m : {&in.labels.g2g, &in.labels.g2l, &in.labels.l2g, &in.labels.l2l.cells()})
    for (auto& v : m->values()) v = static_cast<std::int32_t>(rng() % vocab);
  return in;
}

TEST(LocalBand, Examples) {
  const auto identity = build_local_band_mask(3, 0);
  const auto full = build_local_band_mask(3, 5);
  const auto tri = build_local_band_mask(4, 1);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(identity(i, j), i == j);
      EXPECT_EQ(full(i, j), 1);
    }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(tri(i, j), (i > j ? i - j : j - i) <= 1);
  EXPECT_EQ(expand_band(local_band(4, 1)), tri);
}

TEST(DenseReference, UniformSoftmaxAveragesValues) {
  const std::size_t d = 2;
  AttentionParams<Dense> p;
  p.heads = 1;
  p.global = {Dense(d, d), Dense(1, d), Dense(d, d), Dense(1, d), Dense(d, d, {1, 0, 0, 1}), Dense(1, d),
              Dense(d, d, {1, 0, 0, 1}), Dense(1, d)};
  p.relative_keys = Dense(5, d);
  const Dense xg(1, d, {1.0, 2.0}), xl(2, d, {3.0, -1.0, 5.0, 0.5});
  const auto out = dense_reference_attention(xg, xl, p, full_masks(1, 2, 1), sequence_labels(1, 2, 1, 2));
  const double mean[2] = {(1.0 + 3.0 + 5.0) / 3, (2.0 - 1.0 + 0.5) / 3};
  for (std::size_t c = 0; c < d; ++c) {
    EXPECT_NEAR(out.global(0, c), mean[c], 1e-12);
    EXPECT_NEAR(out.long_seq(0, c), mean[c], 1e-12);
    EXPECT_NEAR(out.long_seq(1, c), mean[c], 1e-12);
  }
}

TEST(DenseReference, MaskedG2lIgnoresLongInput) {
  std::mt19937_64 rng(1);
  const auto p = random_params(8, 2, 12, true, rng);
  auto in = random_instance(3, 5, 1, 8, 12, rng, 1.0);
  in.masks.g2l.fill(0);
  const auto a = dense_reference_attention(in.xg, in.xl, p, in.masks, in.labels);
  in.xl = random_matrix(5, 8, rng);
  const auto b = dense_reference_attention(in.xg, in.xl, p, in.masks, in.labels);
  EXPECT_EQ(a.global, b.global);
}

TEST(DenseReference, MatchesPerPairOracle) {
  std::mt19937_64 rng(2);
  const auto p = random_params(8, 2, 12, true, rng);
  const auto in = random_instance(3, 5, 1, 8, 12, rng);
  const auto got = dense_reference_attention(in.xg, in.xl, p, in.masks, in.labels);
  const auto ref = verify::naive_global_local_attention(in.xg, in.xl, p, in.masks, in.labels);
  EXPECT_LE(max_abs_diff(got.global, ref.global), 1e-6);
  EXPECT_LE(max_abs_diff(got.long_seq, ref.long_seq), 1e-6);
}

TEST(DenseReference, DimensionMismatchThrows) {
  std::mt19937_64 rng(3);
  const auto p = random_params(8, 2, 12, false, rng);
  const auto in = random_instance(2, 4, 1, 8, 12, rng);
  EXPECT_THROW(dense_reference_attention(random_matrix(2, 6, rng), in.xl, p, in.masks, in.labels),
               std::invalid_argument);
  EXPECT_THROW(dense_reference_attention(in.xg, random_matrix(5, 8, rng), p, in.masks, in.labels),
               std::invalid_argument);
}

TEST(BlockedScores, SevenTokenLayout) {
  std::mt19937_64 rng(4);
  const std::size_t n = 7, r = 2;
  const auto q = random_matrix(n, 4, rng), k = random_matrix(n, 4, rng);
  const auto blocked = blocked_local_scores(q, k, r);
  EXPECT_EQ(blocked.blocks, 3u);
  EXPECT_EQ(blocked.block_length, 3u);
  EXPECT_EQ(blocked.scores.cols(), 9u);
  // Block 1 (D, E, F) is scored against keys A..I, i.e. [ABC | DEF | G pad pad].
  for (std::size_t i = 3; i < 6; ++i)
    for (std::size_t s = 0; s < 9; ++s) {
      const std::size_t j = s;
      const bool valid = j < n && (i > j ? i - j : j - i) <= r;
      EXPECT_EQ(blocked.valid(i, s), valid);
      if (j < n) {
        double dot = 0;
        for (std::size_t c = 0; c < 4; ++c) dot += q(i, c) * k(j, c);
        EXPECT_NEAR(blocked.scores(i, s), dot, 1e-12);
      }
    }
  // Block 0 starts with a padding block; block 2 holds G and two padding rows.
  for (std::size_t s = 0; s < 3; ++s) EXPECT_FALSE(blocked.valid(0, s));
  for (std::size_t i = 7; i < 9; ++i)
    for (std::size_t s = 0; s < 9; ++s) EXPECT_FALSE(blocked.valid(i, s));
}

TEST(BlockedScores, RadiusZeroIsDiagonal) {
  std::mt19937_64 rng(5);
  const auto q = random_matrix(5, 2, rng);
  const auto blocked = blocked_local_scores(q, q, 0);
  EXPECT_EQ(blocked.block_length, 1u);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(blocked.valid(i, s), s == 1);
}

TEST(BlockedScores, SoftmaxMatchesDenseBand) {
  std::mt19937_64 rng(6);
  const std::size_t n = 13, r = 3;
  const auto q = random_matrix(n, 4, rng), k = random_matrix(n, 4, rng);
  const auto blocked = blocked_local_scores(q, k, r);
  Dense penalized = blocked.scores;
  for (std::size_t i = 0; i < penalized.rows(); ++i)
    for (std::size_t s = 0; s < penalized.cols(); ++s)
      if (!blocked.valid(i, s)) penalized(i, s) -= kMaskConstant;
  const auto p = masked_softmax(penalized);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> dense(n, -1e300);
    double mx = -1e300, z = 0;
    for (std::size_t j = 0; j < n; ++j)
      if ((i > j ? i - j : j - i) <= r) {
        dense[j] = 0;
        for (std::size_t c = 0; c < 4; ++c) dense[j] += q(i, c) * k(j, c);
        mx = std::max(mx, dense[j]);
      }
    for (std::size_t j = 0; j < n; ++j)
      if (dense[j] > -1e300) z += std::exp(dense[j] - mx);
    for (std::size_t s = 0; s < p.cols(); ++s) {
      const auto j = static_cast<std::ptrdiff_t>((i / (r + 1)) * (r + 1)) - static_cast<std::ptrdiff_t>(r + 1) +
                     static_cast<std::ptrdiff_t>(s);
      const double expected = blocked.valid(i, s) ? std::exp(dense[static_cast<std::size_t>(j)] - mx) / z : 0.0;
      EXPECT_NEAR(p(i, s), expected, 1e-6);
    }
  }
}

TEST(GlobalLocal, WideBandEqualsUnrestrictedDense) {
  std::mt19937_64 rng(7);
  const std::size_t ng = 3, nl = 6, r = 5, d = 8;
  const auto p = random_params(d, 2, 12, true, rng);
  const Dense xg = random_matrix(ng, d, rng), xl = random_matrix(nl, d, rng);
  const auto masks = full_masks(ng, nl, r);
  const auto labels = sequence_labels(ng, nl, r, 2);
  // Unrestricted attention: every token global, labels copied over.
  const std::size_t n = ng + nl;
  PieceMasks all = full_masks(n, 0, 0);
  PieceLabels all_labels = sequence_labels(n, 0, 0, 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const bool gi = i < ng, gj = j < ng;
      all_labels.g2g(i, j) = gi && gj     ? labels.g2g(i, j)
                             : gi         ? labels.g2l(i, j - ng)
                             : gj         ? labels.l2g(i - ng, j)
                                          : labels.l2l.at(i - ng, j - ng);
    }
  Dense x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) x(i, c) = i < ng ? xg(i, c) : xl(i - ng, c);
  // Separate sets project by row group, which an all-global layout cannot express.
  AttentionParams<Dense> shared = p;
  shared.long_side.reset();
  const auto a = global_local_attention(xg, xl, shared, masks, labels);
  const auto b = dense_reference_attention(x, Dense(0, d), shared, all, all_labels);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      EXPECT_NEAR(i < ng ? a.global(i, c) : a.long_seq(i - ng, c), b.global(i, c), 1e-6);
}

TEST(GlobalLocal, MatchesDenseReference) {
  std::mt19937_64 rng(8);
  for (bool separate : {false, true}) {
    const auto p = random_params(8, 2, 12, separate, rng);
    const auto in = random_instance(2, 9, 2, 8, 12, rng);
    const auto a = global_local_attention(in.xg, in.xl, p, in.masks, in.labels);
    const auto b = dense_reference_attention(in.xg, in.xl, p, in.masks, in.labels);
    EXPECT_LE(max_abs_diff(a.global, b.global), 1e-6);
    EXPECT_LE(max_abs_diff(a.long_seq, b.long_seq), 1e-6);
  }
}

TEST(GlobalLocal, VarAndMatrixPathsAgree) {
  std::mt19937_64 rng(9);
  const auto p = random_params(8, 4, 12, true, rng);
  const auto in = random_instance(3, 11, 2, 8, 12, rng);
  const auto a = global_local_attention(in.xg, in.xl, p, in.masks, in.labels);
  auto bind = [](const Dense& m) { return ag::constant(m); };
  auto bind_proj = [&](const Projections<Dense>& q) {
    return Projections<ag::Var<double>>{bind(q.query_w), bind(q.query_b), bind(q.key_w),    bind(q.key_b),
                                        bind(q.value_w), bind(q.value_b), bind(q.output_w), bind(q.output_b)};
  };
  AttentionParams<ag::Var<double>> vp;
  vp.heads = p.heads;
  vp.global = bind_proj(p.global);
  vp.long_side = bind_proj(*p.long_side);
  vp.relative_keys = bind(p.relative_keys);
  const auto b = global_local_attention(bind(in.xg), bind(in.xl), vp, in.masks, in.labels);
  EXPECT_LE(max_abs_diff(a.global, b.global.value()), 1e-12);
  EXPECT_LE(max_abs_diff(a.long_seq, b.long_seq.value()), 1e-12);
}

TEST(GlobalLocal, MaskedKeysHaveNoInfluence) {
  std::mt19937_64 rng(10);
  const std::size_t ng = 2, nl = 10, r = 2, hidden = 6;
  const auto p = random_params(8, 2, 12, true, rng);
  auto in = random_instance(ng, nl, r, 8, 12, rng, 1.0);
  // Nobody may attend long token `hidden`.
  for (std::size_t a = 0; a < ng; ++a) in.masks.g2l(a, hidden) = 0;
  for (std::size_t i = 0; i < nl; ++i)
    if (in.masks.l2l.in_band(i, hidden)) in.masks.l2l.at(i, hidden) = 0;
  // Long row 0 additionally loses every key: its output must stay exactly zero.
  for (std::size_t a = 0; a < ng; ++a) in.masks.l2g(0, a) = 0;
  for (std::size_t j = 0; j <= r; ++j) in.masks.l2l.at(0, j) = 0;
  const auto before = global_local_attention(in.xg, in.xl, p, in.masks, in.labels);
  for (std::size_t c = 0; c < 8; ++c) in.xl(hidden, c) += 3.0;
  const auto after = global_local_attention(in.xg, in.xl, p, in.masks, in.labels);
  EXPECT_LE(max_abs_diff(before.global, after.global), 1e-6);
  for (std::size_t i = 0; i < nl; ++i)
    if (i != hidden)
      for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(before.long_seq(i, c), after.long_seq(i, c), 1e-6);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(before.long_seq(0, c), after.long_seq(0, c));
}

TEST(GlobalLocal, LayoutMismatchThrows) {
  std::mt19937_64 rng(11);
  const auto p = random_params(8, 2, 12, false, rng);
  const auto in = random_instance(2, 5, 1, 8, 12, rng);
  EXPECT_THROW(global_local_attention(in.xg, random_matrix(6, 8, rng), p, in.masks, in.labels), std::invalid_argument);
  auto bad_labels = in.labels;
  bad_labels.g2g(0, 0) = 99;
  EXPECT_THROW(global_local_attention(in.xg, in.xl, p, in.masks, bad_labels), std::out_of_range);
}

TEST(PairCount, Examples) {
  EXPECT_EQ(count_attention_pairs(1, 0, 3), 1u);
  EXPECT_EQ(count_attention_pairs(0, 5, 1), 15u);
  EXPECT_EQ(count_attention_pairs(4, 16, 2), 224u);
  EXPECT_EQ(count_attention_pairs(4, 16, 2, full_masks(4, 16, 2)), 224u);
}

TEST(PairCount, EnumeratedFromLayout) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 30; ++t) {
    const std::size_t ng = rng() % 6, nl = rng() % 40, r = rng() % 6;
    // Global rows score every key; long rows score every global key plus the
    // band slots [i - r, i + r], which cannot exceed the sequence length.
    std::size_t enumerated = 0;
    for (std::size_t i = 0; i < ng; ++i) enumerated += ng + nl;
    for (std::size_t i = 0; i < nl; ++i) {
      std::size_t slots = 0;
      for (std::ptrdiff_t j = std::ptrdiff_t(i) - std::ptrdiff_t(r); j <= std::ptrdiff_t(i + r); ++j) ++slots;
      enumerated += ng + std::min(slots, nl);
    }
    EXPECT_EQ(count_attention_pairs(ng, nl, r), enumerated);
  }
}

TEST(PairCount, LinearGrowth) {
  for (std::size_t nl : {1024u, 4096u, 16384u}) {
    const double ratio = double(count_attention_pairs(8, 2 * nl, 16)) / double(count_attention_pairs(8, nl, 16));
    EXPECT_NEAR(ratio, 2.0, 0.01);
  }
}

TEST(SpecialCases, StarTransformerPattern) {
  for (std::size_t n = 1; n <= 10; ++n) EXPECT_EQ(realized_pattern(full_masks(1, n, 1)), verify::star_transformer_pattern(n));
}

TEST(SpecialCases, AllGlobalIsStandardAttention) {
  std::mt19937_64 rng(13);
  auto p = random_params(12, 3, 9, false, rng);
  p.relative_keys.fill(0.0);
  const auto x = random_matrix(7, 12, rng);
  const auto out = global_local_attention(x, Dense(0, 12), p, full_masks(7, 0, 2), sequence_labels(7, 0, 2, 1));
  EXPECT_LE(max_abs_diff(out.global, verify::standard_attention(x, p.global, 3)), 1e-10);
}

}  // namespace
}  // namespace etc
