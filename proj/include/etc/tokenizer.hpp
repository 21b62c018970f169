// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic hashed word-piece tokenizer for raw text corpora. Words are
// lowercased and cut into pieces of at most four bytes; pieces after the
// first carry a "##" prefix. Piece ids are a hash of the piece text folded
// into the regular id range of the vocabulary.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace etc {

struct TokenizedSentence {
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> word_starts;
};

using TokenizedDocument = std::vector<TokenizedSentence>;

inline constexpr std::size_t kMaxPieceBytes = 4;

// Blocks separated by one or more blank lines.
std::vector<std::string> split_documents(std::string_view text);
// Splits after '.', '!' or '?' when followed by whitespace (or at the end).
std::vector<std::string> split_sentences(std::string_view document);
// Whitespace-separated words, lowercased; punctuation becomes its own word.
std::vector<std::string> split_words(std::string_view sentence);
std::vector<std::string> word_pieces(std::string_view word);

std::int32_t piece_id(std::string_view piece, std::size_t vocab_size);

TokenizedSentence tokenize_sentence(std::string_view sentence, std::size_t vocab_size);
TokenizedDocument tokenize_document(std::string_view document, std::size_t vocab_size);
std::vector<TokenizedDocument> tokenize_corpus(std::string_view text, std::size_t vocab_size);

}  // namespace etc
