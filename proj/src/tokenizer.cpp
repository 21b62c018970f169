// SPDX-License-Identifier: Apache-2.0
#include "etc/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "etc/config.hpp"

namespace etc {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_continuation(char c) { return (static_cast<unsigned char>(c) & 0xC0) == 0x80; }
bool is_punct(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u < 0x80 && std::ispunct(u) != 0 && c != '\'' && c != '-';
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

}  // namespace

std::vector<std::string> split_documents(std::string_view text) {
  std::vector<std::string> docs;
  std::string current;
  std::size_t pos = 0;
  auto flush = [&] {
    std::string t = trim(current);
    if (!t.empty()) docs.push_back(std::move(t));
    current.clear();
  };
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    if (trim(line).empty()) {
      flush();
    } else {
      current.append(line);
      current.push_back('\n');
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  flush();
  return docs;
}

std::vector<std::string> split_sentences(std::string_view document) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < document.size(); ++i) {
    const char c = document[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == document.size() || is_space(document[i + 1]))) {
      std::string s = trim(document.substr(start, i + 1 - start));
      if (!s.empty()) out.push_back(std::move(s));
      start = i + 1;
    }
  }
  std::string tail = trim(document.substr(start));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

std::vector<std::string> split_words(std::string_view sentence) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) words.push_back(std::move(current));
    current.clear();
  };
  for (char c : sentence) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, c);
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return words;
}

std::vector<std::string> word_pieces(std::string_view word) {
  std::vector<std::string> pieces;
  std::size_t pos = 0;
  while (pos < word.size()) {
    std::size_t end = std::min(word.size(), pos + kMaxPieceBytes);
    // Never cut inside a multi-byte UTF-8 sequence.
    while (end < word.size() && end > pos + 1 && is_continuation(word[end])) --end;
    while (end < word.size() && is_continuation(word[end])) ++end;
    std::string piece = pieces.empty() ? std::string() : std::string("##");
    piece.append(word.substr(pos, end - pos));
    pieces.push_back(std::move(piece));
    pos = end;
  }
  return pieces;
}

std::int32_t piece_id(std::string_view piece, std::size_t vocab_size) {
  if (vocab_size <= static_cast<std::size_t>(kFirstRegularId))
    throw std::invalid_argument("vocab_size leaves no room for regular pieces");
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (char c : piece) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  const std::uint64_t span = vocab_size - static_cast<std::size_t>(kFirstRegularId);
  return kFirstRegularId + static_cast<std::int32_t>(h % span);
}

TokenizedSentence tokenize_sentence(std::string_view sentence, std::size_t vocab_size) {
  TokenizedSentence out;
  for (const auto& word : split_words(sentence)) {
    bool first = true;
    for (const auto& piece : word_pieces(word)) {
      out.ids.push_back(piece_id(piece, vocab_size));
      out.word_starts.push_back(first ? 1 : 0);
      first = false;
    }
  }
  return out;
}

TokenizedDocument tokenize_document(std::string_view document, std::size_t vocab_size) {
  TokenizedDocument doc;
  for (const auto& s : split_sentences(document)) {
    auto t = tokenize_sentence(s, vocab_size);
    if (!t.ids.empty()) doc.push_back(std::move(t));
  }
  return doc;
}

std::vector<TokenizedDocument> tokenize_corpus(std::string_view text, std::size_t vocab_size) {
  std::vector<TokenizedDocument> out;
  for (const auto& d : split_documents(text)) {
    auto doc = tokenize_document(d, vocab_size);
    if (!doc.empty()) out.push_back(std::move(doc));
  }
  return out;
}

}  // namespace etc
