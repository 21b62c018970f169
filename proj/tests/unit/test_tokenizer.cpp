// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "etc/config.hpp"
#include "etc/tokenizer.hpp"

namespace etc {
namespace {

using Strings = std::vector<std::string>;

TEST(Tokenizer, BlankLinesSeparateDocuments) {
  EXPECT_EQ(split_documents("a b.\nc d.\n\n\n  \ne f.\n"), (Strings{"a b.\nc d.", "e f."}));
  EXPECT_TRUE(split_documents("\n\n").empty());
}

TEST(Tokenizer, SentencesEndAtTerminalPunctuation) {
  EXPECT_EQ(split_sentences("A b. C d! E f? tail"), (Strings{"A b.", "C d!", "E f?", "tail"}));
  EXPECT_EQ(split_sentences("Pi is 3.14 today."), (Strings{"Pi is 3.14 today."}));
}

TEST(Tokenizer, WordsAreLowercasedWithPunctuationSplit) {
  EXPECT_EQ(split_words("The Cat, sat."), (Strings{"the", "cat", ",", "sat", "."}));
  EXPECT_EQ(split_words("don't well-known"), (Strings{"don't", "well-known"}));
}

TEST(Tokenizer, PiecesAreShortWithContinuationPrefix) {
  EXPECT_EQ(word_pieces("computer"), (Strings{"comp", "##uter"}));
  EXPECT_EQ(word_pieces("cat"), (Strings{"cat"}));
  // Multi-byte characters are never split.
  for (const auto& p : word_pieces("caf\xc3\xa9s")) {
    const auto body = p.rfind("##", 0) == 0 ? p.substr(2) : p;
    EXPECT_NE(static_cast<unsigned char>(body[0]) & 0xC0, 0x80);
  }
}

TEST(Tokenizer, IdsAreDeterministicAndInRange) {
  const std::size_t vocab = 100;
  const auto a = tokenize_sentence("Rivers carry sediment downstream.", vocab);
  const auto b = tokenize_sentence("rivers CARRY sediment downstream .", vocab);
  EXPECT_EQ(a.ids, b.ids);
  EXPECT_EQ(a.word_starts, b.word_starts);
  ASSERT_EQ(a.ids.size(), a.word_starts.size());
  for (auto id : a.ids) {
    EXPECT_GE(id, kFirstRegularId);
    EXPECT_LT(id, static_cast<std::int32_t>(vocab));
  }
  // "rivers" -> riv ##ers ; "carry" -> carr ##y
  EXPECT_EQ(a.word_starts, (std::vector<std::uint8_t>{1, 0, 1, 0, 1, 0, 1, 0, 0, 1}));
  EXPECT_THROW(piece_id("x", 16), std::invalid_argument);
}

TEST(Tokenizer, CorpusSkipsEmptyPieces) {
  const auto corpus = tokenize_corpus("One two. Three.\n\nFour five six.", 64);
  ASSERT_EQ(corpus.size(), 2u);
  EXPECT_EQ(corpus[0].size(), 2u);
  EXPECT_EQ(corpus[1].size(), 1u);
  EXPECT_EQ(corpus[1][0].ids.size(), 4u);
}

}  // namespace
}  // namespace etc
