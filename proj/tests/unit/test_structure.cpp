// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>

#include "etc/attention.hpp"
#include "etc/encoder.hpp"
#include "etc/structure.hpp"

namespace etc {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.layers = 2;
  c.hidden = 8;
  c.heads = 2;
  c.local_radius = 2;
  c.clip_distance = 2;
  c.vocab_size = 64;
  c.max_global = 16;
  c.max_long = 32;
  c.init_std = 0.3;
  return c;
}

Sentence sentence_of(std::size_t n, std::int32_t first = 20) {
  Sentence s;
  for (std::size_t i = 0; i < n; ++i) {
    s.ids.push_back(first + static_cast<std::int32_t>(i));
    s.word_starts.push_back(1);
  }
  return s;
}

std::size_t count_true(const BoolMatrix& m, std::size_t row) {
  std::size_t n = 0;
  for (auto v : m.row(row)) n += v != 0;
  return n;
}

// Brute-force membership: which long tokens belong to each global row of a
// hierarchical layout [ctx, sent, sent, ..., ctx, sent, ...].
std::vector<std::pair<std::size_t, std::size_t>> expected_spans(const std::vector<std::vector<std::size_t>>& sizes) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  std::size_t pos = 0;
  for (const auto& ctx : sizes) {
    const std::size_t total = std::accumulate(ctx.begin(), ctx.end(), std::size_t{0});
    spans.emplace_back(pos, pos + total);
    for (std::size_t s : ctx) {
      spans.emplace_back(pos, pos + s);
      pos += s;
    }
  }
  return spans;
}

TEST(FlatInput, SentenceMembershipLabels) {
  const auto c = small_config();
  const auto vocab = c.relative_vocab();
  const auto in = build_flat_input({sentence_of(3), sentence_of(2)}, c);
  ASSERT_EQ(in.n_long(), 5u);
  ASSERT_EQ(in.n_global(), 2u);
  const auto member = vocab.label(labels::kSegmentMember);
  const auto nonmember = vocab.label(labels::kSegmentNonmember);
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(in.labels.g2l(0, t), t < 3 ? member : nonmember);
    EXPECT_EQ(in.labels.g2l(1, t), t >= 3 ? member : nonmember);
    EXPECT_EQ(in.labels.l2g(t, 0), in.labels.g2l(0, t));
  }
  for (auto v : in.masks.g2l.values()) EXPECT_EQ(v, 1);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      if (in.labels.l2l.in_band(i, j)) EXPECT_EQ(in.labels.l2l.at(i, j), vocab.sequence_label(std::ptrdiff_t(j) - std::ptrdiff_t(i)));
  EXPECT_NO_THROW(in.validate(c));
}

TEST(FlatInput, SingleTokenAllMasksTrue) {
  const auto c = small_config();
  const auto in = build_flat_input({sentence_of(1)}, c);
  EXPECT_EQ(in.n_long(), 1u);
  EXPECT_EQ(in.n_global(), 1u);
  EXPECT_EQ(in.masks.g2g(0, 0), 1);
  EXPECT_EQ(in.masks.g2l(0, 0), 1);
  EXPECT_EQ(in.masks.l2g(0, 0), 1);
  EXPECT_EQ(in.masks.l2l.at(0, 0), 1);
}

TEST(FlatInput, HardG2lIsOneDirectional) {
  const auto c = small_config();
  BuildOptions hard;
  hard.hard_g2l = true;
  const auto soft = build_flat_input({sentence_of(3), sentence_of(2)}, c);
  const auto in = build_flat_input({sentence_of(3), sentence_of(2)}, c, hard);
  const auto member = c.relative_vocab().label(labels::kSegmentMember);
  for (std::size_t g = 0; g < 2; ++g)
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(in.masks.g2l(g, t) != 0, in.labels.g2l(g, t) == member);
  EXPECT_EQ(in.masks.l2g, soft.masks.l2g);
  EXPECT_EQ(in.labels.g2l, soft.labels.g2l);
}

TEST(FlatInput, OverflowReportsCounts) {
  auto c = small_config();
  c.max_long = 4;
  try {
    build_flat_input({sentence_of(3), sentence_of(2)}, c);
    FAIL() << "expected overflow";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4"), std::string::npos) << msg;
  }
}

TEST(Hierarchy, TwoContextsCountsMatchEnumeration) {
  const auto c = small_config();
  StructuredDocument doc;
  doc.contexts = {{sentence_of(3), sentence_of(3)}, {sentence_of(3), sentence_of(3)}};
  BuildOptions hard;
  hard.hard_g2l = true;
  const auto in = build_hierarchical_input(doc, hard, c);
  ASSERT_EQ(in.n_long(), 12u);
  ASSERT_EQ(in.n_global(), 6u);
  const auto spans = expected_spans({{3, 3}, {3, 3}});
  for (std::size_t g = 0; g < 6; ++g) {
    EXPECT_EQ(count_true(in.masks.g2l, g), spans[g].second - spans[g].first) << g;
    for (std::size_t t = 0; t < 12; ++t)
      EXPECT_EQ(in.masks.g2l(g, t) != 0, t >= spans[g].first && t < spans[g].second);
  }
  // Rows 0 and 3 summarize contexts, the rest summarize sentences.
  EXPECT_EQ(count_true(in.masks.g2l, 0), 6u);
  EXPECT_EQ(count_true(in.masks.g2l, 1), 3u);
  EXPECT_EQ(in.global_ids[0], c.reserved.context_summary);
  EXPECT_EQ(in.global_ids[1], c.reserved.sentence_summary);
  EXPECT_NO_THROW(in.validate(c));
}

TEST(Hierarchy, LocalAttentionStaysInsideContext) {
  const auto c = small_config();
  StructuredDocument doc;
  doc.contexts = {{sentence_of(2), sentence_of(2)}, {sentence_of(3)}};
  const auto in = build_hierarchical_input(doc, {}, c);
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t j = 0; j < 7; ++j)
      if (in.masks.l2l.in_band(i, j)) EXPECT_EQ(in.masks.l2l.at(i, j) != 0, (i < 4) == (j < 4)) << i << "," << j;
  BuildOptions flat;
  flat.flat_structure = true;
  const auto f = build_hierarchical_input(doc, flat, c);
  EXPECT_EQ(f.masks.l2l, local_band(7, c.local_radius));
}

TEST(Hierarchy, OrderWithinContextOnlyByDefault) {
  const auto c = small_config();
  const auto vocab = c.relative_vocab();
  StructuredDocument doc;
  doc.contexts = {{sentence_of(1), sentence_of(1)}, {sentence_of(1), sentence_of(1)}};
  const auto in = build_hierarchical_input(doc, {}, c);
  const auto unordered = vocab.label(labels::kUnordered);
  EXPECT_EQ(in.labels.g2g(1, 2), vocab.sequence_label(1));
  EXPECT_EQ(in.labels.g2g(2, 1), vocab.sequence_label(-1));
  EXPECT_EQ(in.labels.g2g(1, 4), unordered);
  EXPECT_EQ(in.labels.g2g(0, 3), unordered);
  BuildOptions ordered;
  ordered.order_between_contexts = true;
  const auto o = build_hierarchical_input(doc, ordered, c);
  EXPECT_EQ(o.labels.g2g(0, 3), vocab.sequence_label(1));
}

TEST(Hierarchy, FlatStructureKeepsOnlySentenceMembership) {
  const auto c = small_config();
  const auto vocab = c.relative_vocab();
  StructuredDocument doc;
  doc.contexts = {{sentence_of(2), sentence_of(2)}, {sentence_of(3)}};
  BuildOptions flat;
  flat.flat_structure = true;
  const auto in = build_hierarchical_input(doc, flat, c);
  const std::set<std::int32_t> allowed{vocab.label(labels::kSegmentMember), vocab.label(labels::kSegmentNonmember)};
  for (auto l : in.labels.g2l.values()) EXPECT_TRUE(allowed.count(l)) << l;
}

TEST(Hierarchy, SingleContextAddsOneSummaryRow) {
  const auto c = small_config();
  StructuredDocument doc;
  doc.contexts = {{sentence_of(3), sentence_of(2)}};
  const auto h = build_hierarchical_input(doc, {}, c);
  const auto f = build_flat_input(doc.contexts[0], c);
  ASSERT_EQ(h.n_global(), f.n_global() + 1);
  EXPECT_EQ(h.long_ids, f.long_ids);
  EXPECT_EQ(h.masks.l2l, f.masks.l2l);
  EXPECT_EQ(h.labels.l2l, f.labels.l2l);
  for (std::size_t g = 0; g < f.n_global(); ++g)
    for (std::size_t t = 0; t < f.n_long(); ++t) EXPECT_EQ(h.labels.g2l(g + 1, t), f.labels.g2l(g, t));
}

TEST(Hierarchy, MentionLinksGetDistinctLabel) {
  const auto c = small_config();
  const auto vocab = c.relative_vocab();
  StructuredDocument doc;
  doc.contexts = {{sentence_of(4)}};
  doc.mention_links = {{0, 1, 3}};
  const auto in = build_hierarchical_input(doc, {}, c);
  ASSERT_EQ(in.n_global(), 3u);
  const auto link = vocab.label(labels::kMentionLink);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(in.labels.g2l(2, t) == link, t == 1 || t == 2);
  StructuredDocument bad = doc;
  bad.mention_links[0].label = "no-such-label";
  EXPECT_THROW(build_hierarchical_input(bad, {}, c), std::invalid_argument);
}

TEST(Hierarchy, ContextPermutationPermutesOutputs) {
  const auto c = small_config();
  const auto params = init_parameters<double>(c, 3);
  StructuredDocument a;
  a.contexts = {{sentence_of(2, 20), sentence_of(3, 30)}, {sentence_of(4, 40)}, {sentence_of(1, 50), sentence_of(2, 55)}};
  StructuredDocument b;
  b.contexts = {a.contexts[2], a.contexts[0], a.contexts[1]};
  const auto ea = encode(build_hierarchical_input(a, {}, c), params, c);
  const auto eb = encode(build_hierarchical_input(b, {}, c), params, c);
  // Long offsets: a = [0..5) [5..9) [9..12); b = [9..12) [0..5) [5..9) -> shifts.
  auto long_in_b = [](std::size_t t) { return t < 9 ? t + 3 : t - 9; };
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t j = 0; j < c.hidden; ++j) EXPECT_NEAR(ea.long_seq(t, j), eb.long_seq(long_in_b(t), j), 1e-8);
  // Global rows: a = [c0 s s][c1 s][c2 s s]; b = [c2 s s][c0 s s][c1 s].
  const std::size_t global_in_b[8] = {3, 4, 5, 6, 7, 0, 1, 2};
  for (std::size_t g = 0; g < 8; ++g)
    for (std::size_t j = 0; j < c.hidden; ++j) EXPECT_NEAR(ea.global(g, j), eb.global(global_in_b[g], j), 1e-8);
}

TEST(Packing, ShortDocumentsShareOneInput) {
  auto c = small_config();
  c.max_long = 10;
  StructuredDocument a, b;
  a.contexts = {{sentence_of(3)}};
  b.contexts = {{sentence_of(4)}};
  const auto packed = pack_documents({a, b}, c);
  ASSERT_EQ(packed.size(), 1u);
  const auto& in = packed[0];
  EXPECT_EQ(in.n_long(), 7u);
  ASSERT_EQ(in.documents.size(), 2u);
  const auto& d0 = in.documents[0];
  auto same_doc_long = [&](std::size_t t, std::size_t u) { return (t < d0.long_end) == (u < d0.long_end); };
  auto same_doc_global = [&](std::size_t g, std::size_t t) { return (g < d0.global_end) == (t < d0.long_end); };
  for (std::size_t g = 0; g < in.n_global(); ++g)
    for (std::size_t t = 0; t < in.n_long(); ++t) {
      if (!same_doc_global(g, t)) {
        EXPECT_EQ(in.masks.g2l(g, t), 0);
        EXPECT_EQ(in.masks.l2g(t, g), 0);
      }
    }
  for (std::size_t g = 0; g < in.n_global(); ++g)
    for (std::size_t h = 0; h < in.n_global(); ++h)
      if ((g < d0.global_end) != (h < d0.global_end)) EXPECT_EQ(in.masks.g2g(g, h), 0);
  for (std::size_t t = 0; t < in.n_long(); ++t)
    for (std::size_t u = 0; u < in.n_long(); ++u)
      if (in.masks.l2l.in_band(t, u) && !same_doc_long(t, u)) EXPECT_EQ(in.masks.l2l.at(t, u), 0);
  EXPECT_NO_THROW(in.validate(c));
}

TEST(Packing, OversizedDocumentSplitsAtSentenceBoundary) {
  auto c = small_config();
  c.max_long = 8;
  StructuredDocument doc;
  doc.contexts = {{sentence_of(4), sentence_of(4), sentence_of(4)}};
  const auto pieces = split_to_fit(doc, c);
  ASSERT_EQ(pieces.size(), 2u);
  EXPECT_EQ(pieces[0].token_count(), 8u);
  EXPECT_EQ(pieces[1].token_count(), 4u);
  const auto packed = pack_documents({doc}, c);
  ASSERT_EQ(packed.size(), 2u);
  for (const auto& in : packed) EXPECT_LE(in.n_long(), 8u);
}

TEST(Packing, PackedEqualsSeparate) {
  auto c = small_config();
  c.max_long = 32;
  const auto params = init_parameters<double>(c, 5);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<StructuredDocument> docs(2);
    for (auto& d : docs) {
      d.contexts.resize(1 + rng() % 2);
      for (auto& ctx : d.contexts)
        for (std::size_t s = 0, n = 1 + rng() % 2; s < n; ++s)
          ctx.push_back(sentence_of(1 + rng() % 4, static_cast<std::int32_t>(16 + rng() % 40)));
    }
    const auto packed = pack_documents(docs, c);
    ASSERT_EQ(packed.size(), 1u);
    const auto joint = encode(packed[0], params, c);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto alone = encode(build_hierarchical_input(docs[k], {}, c), params, c);
      const auto& span = packed[0].documents[k];
      for (std::size_t t = 0; t < alone.long_seq.rows(); ++t)
        for (std::size_t j = 0; j < c.hidden; ++j)
          EXPECT_NEAR(joint.long_seq(span.long_begin + t, j), alone.long_seq(t, j), 1e-9);
      for (std::size_t g = 0; g < alone.global.rows(); ++g)
        for (std::size_t j = 0; j < c.hidden; ++j)
          EXPECT_NEAR(joint.global(span.global_begin + g, j), alone.global(g, j), 1e-9);
    }
  }
}

TEST(Packing, TruncationDropsFromLargestContext) {
  auto c = small_config();
  c.max_long = 8;
  StructuredDocument doc;
  doc.contexts = {{sentence_of(2)}, {sentence_of(3), sentence_of(3), sentence_of(2)}};
  const auto t = truncate_to_fit(doc, c);
  EXPECT_LE(t.token_count(), 8u);
  EXPECT_EQ(t.contexts[0].size(), 1u);
  EXPECT_EQ(t.contexts[1].size(), 2u);
}

TEST(StructuredJson, ParsesContextsAndLinks) {
  const auto c = small_config();
  const auto docs = parse_structured_documents(
      R"({"contexts": [["The river flows.", "It floods."], [{"ids": [20, 21], "word_starts": [1, 0]}]],
          "mention_links": [{"candidate": 0, "begin": 0, "end": 1, "label": "mention-link"}]})",
      c);
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0].contexts.size(), 2u);
  EXPECT_EQ(docs[0].sentence_count(), 3u);
  EXPECT_EQ(docs[0].candidate_count(), 1u);
  EXPECT_EQ(docs[0].contexts[1][0].ids, (std::vector<std::int32_t>{20, 21}));
}

TEST(StructuredJson, SyntaxErrorsReportLine) {
  const auto c = small_config();
  try {
    parse_structured_documents("{\n  \"contexts\": [\n  [\"a\",]\n]}", c);
    FAIL() << "expected parse error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_structured_documents(R"({"contexts": [[{"ids": [9999]}]]})", c), std::invalid_argument);
  EXPECT_THROW(parse_structured_documents(R"({"contexts": []})", c), std::invalid_argument);
}

}  // namespace
}  // namespace etc
