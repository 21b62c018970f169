// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "etc/pretraining.hpp"
#include "etc/verify/gradient_check.hpp"
#include "etc/verify/oracles.hpp"

namespace etc {
namespace {

using Dense = Matrix<double>;

Dense random_dense(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Dense m(r, c);
  for (double& v : m.values()) v = normal(rng);
  return m;
}

ModelConfig small_config() {
  ModelConfig c;
  c.layers = 1;
  c.hidden = 8;
  c.heads = 2;
  c.local_radius = 2;
  c.clip_distance = 2;
  c.vocab_size = 64;
  c.max_global = 16;
  c.max_long = 64;
  c.init_std = 0.3;
  return c;
}

Sentence sentence_of(std::vector<std::int32_t> ids, std::vector<std::uint8_t> starts) {
  return Sentence{std::move(ids), std::move(starts)};
}

TEST(Cpc, IdenticalEmbeddingsGiveLogB) {
  // Every score equal: the loss is ln B whatever the projection.
  std::mt19937_64 rng(1);
  const Dense row = random_dense(1, 8, rng);
  Dense g(4, 8);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) g(i, j) = row(0, j);
  const auto loss = cpc_nce_loss(ag::constant(g), ag::constant(g), ag::constant(random_dense(8, 8, rng)));
  EXPECT_NEAR(loss.scalar(), std::log(4.0), 1e-6);
}

TEST(Cpc, MatchesBruteForceSoftmax) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const Dense g1 = random_dense(5, 6, rng), g2 = random_dense(5, 6, rng), w = random_dense(6, 6, rng);
    const double got = cpc_nce_loss(ag::constant(g1), ag::constant(g2), ag::constant(w)).scalar();
    EXPECT_NEAR(got, verify::nce_oracle(g1, g2, w), 1e-8);
  }
}

TEST(Cpc, ScoresAreScaledBilinear) {
  std::mt19937_64 rng(3);
  const Dense g1 = random_dense(3, 4, rng), g2 = random_dense(3, 4, rng), w = random_dense(4, 4, rng);
  const auto s = cpc_scores(ag::constant(g1), ag::constant(g2), ag::constant(w)).value();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double expect = 0;
      for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) expect += g1(i, a) * w(a, b) * g2(j, b);
      EXPECT_NEAR(s(i, j), expect / 2.0, 1e-12);
    }
}

TEST(Cpc, NeedsNegatives) {
  std::mt19937_64 rng(4);
  const Dense g = random_dense(1, 4, rng);
  EXPECT_THROW(cpc_nce_loss(ag::constant(g), ag::constant(g), ag::constant(random_dense(4, 4, rng))),
               std::invalid_argument);
}

TEST(Masking, SentenceRateMonteCarlo) {
  Rng rng(5);
  std::vector<SentenceSpan> spans(10000);
  const auto picked = select_cpc_sentences(spans, 0.10, rng);
  EXPECT_NEAR(static_cast<double>(picked.size()) / spans.size(), 0.10, 0.01);
  for (std::size_t i = 1; i < picked.size(); ++i) EXPECT_LT(picked[i - 1], picked[i]);
}

TEST(Masking, WholeWordRuleAndPieceRate) {
  const auto c = small_config();
  Rng rng(6);
  std::size_t pieces = 0, masked = 0;
  for (int s = 0; s < 2000; ++s) {
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> starts;
    for (int w = 0; w < 5; ++w) {
      const int len = 1 + static_cast<int>(rng() % 3);
      for (int p = 0; p < len; ++p) {
        ids.push_back(kFirstRegularId + static_cast<std::int32_t>(rng() % 40));
        starts.push_back(p == 0);
      }
    }
    const auto r = whole_word_mask(ids, starts, 0.15, rng, c);
    std::vector<std::uint8_t> hit(ids.size(), 0);
    for (const auto& t : r.targets) {
      hit[t.position] = 1;
      EXPECT_EQ(t.original, ids[t.position]);
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (r.ids[i] != ids[i]) EXPECT_TRUE(hit[i]);
      if (!starts[i]) EXPECT_EQ(hit[i], hit[i - 1]) << "partially masked word";
    }
    pieces += ids.size();
    masked += r.targets.size();
  }
  EXPECT_NEAR(static_cast<double>(masked) / pieces, 0.15, 0.01);
}

TEST(Masking, ReplacementMix) {
  const auto c = small_config();
  Rng rng(7);
  std::vector<std::int32_t> ids(20000);
  for (auto& v : ids) v = kFirstRegularId + 1;
  const std::vector<std::uint8_t> starts(ids.size(), 1);
  const auto r = whole_word_mask(ids, starts, 0.5, rng, c);
  std::size_t mask = 0, same = 0;
  for (const auto& t : r.targets) {
    mask += r.ids[t.position] == c.reserved.mask;
    same += r.ids[t.position] == t.original;
  }
  const double n = static_cast<double>(r.targets.size());
  EXPECT_NEAR(mask / n, 0.8, 0.02);
  EXPECT_NEAR(same / n, 0.1 + 0.1 / (c.vocab_size - kFirstRegularId), 0.02);
}

TEST(Masking, IneligibleWordsAreSkipped) {
  const auto c = small_config();
  Rng rng(8);
  const std::vector<std::int32_t> ids{20, 21, 22, 23};
  const std::vector<std::uint8_t> starts{1, 0, 1, 1}, eligible{1, 0, 1, 1};
  for (int i = 0; i < 200; ++i) {
    const auto r = whole_word_mask(ids, starts, 0.9, rng, c, eligible);
    for (const auto& t : r.targets) EXPECT_GE(t.position, 2u);
  }
}

TEST(Masking, CpcSentencesAreHiddenButSummaryStays) {
  const auto c = small_config();
  std::vector<Sentence> sents;
  for (int s = 0; s < 8; ++s) sents.push_back(sentence_of({20 + s, 30 + s, 40 + s}, {1, 0, 1}));
  const auto in = build_flat_input(sents, c);
  TrainConfig train;
  train.cpc_rate = 0.5;
  Rng rng(9);
  const auto ex = mask_example(in, train, c, rng);
  ASSERT_FALSE(ex.cpc.empty());
  EXPECT_EQ(ex.input.global_ids, in.global_ids);
  for (const auto& cs : ex.cpc) {
    for (std::size_t t = cs.begin; t < cs.end; ++t) EXPECT_EQ(ex.input.long_ids[t], c.reserved.mask);
    EXPECT_EQ(cs.original.ids, std::vector<std::int32_t>(in.long_ids.begin() + cs.begin, in.long_ids.begin() + cs.end));
    for (const auto& m : ex.mlm_targets) EXPECT_TRUE(m.position < cs.begin || m.position >= cs.end);
  }
}

TEST(Mlm, LossMatchesCrossEntropyOracle) {
  const auto c = small_config();
  const auto p = init_parameters<double>(c, 10);
  const auto w = bind(p, false);
  std::mt19937_64 rng(10);
  const auto hidden = ag::constant(random_dense(5, 8, rng));
  const std::vector<MlmTarget> targets{{1, 30}, {3, 17}};
  const auto loss = mlm_loss(hidden, targets, w, 1e-12);
  const auto logits = mlm_logits(hidden, w, 1e-12).value();
  Dense rows(2, logits.cols());
  for (std::size_t j = 0; j < logits.cols(); ++j) {
    rows(0, j) = logits(1, j);
    rows(1, j) = logits(3, j);
  }
  const std::vector<std::int32_t> ids{30, 17};
  EXPECT_NEAR(loss.loss.scalar(), verify::cross_entropy_oracle(rows, ids), 1e-10);
  EXPECT_TRUE(mlm_loss(hidden, {}, w, 1e-12).empty);
}

TEST(Gradients, MlmAndCpcMatchFiniteDifferences) {
  const auto fixture = verify::make_gradient_fixture(11);
  for (const auto& loss : {fixture.mlm_loss(), fixture.cpc_loss()}) {
    const auto report = verify::finite_difference_check(fixture.params, loss, 1e-3);
    EXPECT_LT(report.worst, 1e-3) << report.worst_group;
    EXPECT_GT(report.groups.size(), 10u);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto c = small_config();
  const auto p = init_parameters<double>(c, 12);
  auto w = bind(p, true);
  TrainConfig train;
  train.learning_rate = 0.01;
  // loss = sum of token embedding entries: every gradient is 1.
  auto loss = ag::matmul_nt(ag::constant(Dense(1, c.hidden, 1.0)), w.token_embedding);
  loss = ag::matmul_nt(loss, ag::constant(Dense(1, c.vocab_size, 1.0)));
  ag::backward(loss);
  AdamState<double> state;
  adam_update(w, state, train);
  const auto after = values_of(w);
  for (std::size_t i = 0; i < p.token_embedding.size(); ++i)
    EXPECT_NEAR(after.token_embedding.data()[i], p.token_embedding.data()[i] - 0.01, 1e-6);
  EXPECT_EQ(after.cpc_projection, p.cpc_projection);
  EXPECT_EQ(state.step, 1u);
}

TEST(Pretrainer, DeterministicInSeed) {
  auto c = small_config();
  std::vector<TokenizedDocument> corpus;
  for (int d = 0; d < 4; ++d) {
    TokenizedDocument doc;
    for (int s = 0; s < 8; ++s) doc.push_back(sentence_of({20 + d, 30 + s, 40 + d + s}, {1, 1, 0}));
    corpus.push_back(doc);
  }
  TrainConfig train;
  train.docs_per_step = 2;
  train.cpc_rate = 0.3;
  train.learning_rate = 1e-3;
  Pretrainer<double> a(corpus, c, train, 13), b(corpus, c, train, 13);
  EXPECT_EQ(a.documents(), 4u);
  for (int i = 0; i < 3; ++i) {
    const auto ma = a.step(), mb = b.step();
    EXPECT_EQ(ma.total, mb.total);
    EXPECT_EQ(ma.mlm_targets, mb.mlm_targets);
    EXPECT_TRUE(std::isfinite(ma.total));
  }
  EXPECT_EQ(a.parameters().token_embedding, b.parameters().token_embedding);
}

TEST(Pretrainer, ShortDocumentsAreDropped) {
  const auto c = small_config();
  std::vector<TokenizedDocument> corpus(2);
  for (int s = 0; s < 7; ++s) corpus[0].push_back(sentence_of({20, 21}, {1, 0}));
  for (int s = 0; s < 6; ++s) corpus[1].push_back(sentence_of({20, 21}, {1, 0}));
  EXPECT_EQ(prepare_corpus(corpus, c, 7).size(), 1u);
}

}  // namespace
}  // namespace etc
