// SPDX-License-Identifier: Apache-2.0
#pragma once

// Compiles token sequences and context/sentence hierarchies into EtcInput:
// token layout, the four attention masks and the four relative-label
// matrices. Also packs several short documents into one input.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "etc/config.hpp"
#include "etc/encoder.hpp"
#include "etc/tokenizer.hpp"

namespace etc {

using Sentence = TokenizedSentence;

// Links global candidate `candidate` to long tokens [begin, end) of the
// document (indices over the concatenation of all its sentences).
struct MentionLink {
  std::size_t candidate = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string label = labels::kMentionLink;
};

struct StructuredDocument {
  std::vector<std::vector<Sentence>> contexts;
  std::vector<MentionLink> mention_links;

  std::size_t token_count() const;
  std::size_t sentence_count() const;
  std::size_t candidate_count() const;
  // Global rows used by build_hierarchical_input.
  std::size_t global_count() const { return contexts.size() + sentence_count() + candidate_count(); }
};

struct BuildOptions {
  bool hard_g2l = false;
  bool flat_structure = false;
  bool order_between_contexts = false;
};

// One sentence-summary global token per sentence; long = concatenated tokens.
EtcInput build_flat_input(const std::vector<Sentence>& sentences, const ModelConfig& config,
                          const BuildOptions& options = {});

// Global = per context [context summary, sentence summaries...] in document
// order, then one candidate token per linked candidate.
EtcInput build_hierarchical_input(const StructuredDocument& doc, const BuildOptions& options,
                                  const ModelConfig& config);

// Drops trailing sentences of the largest context until the document fits.
StructuredDocument truncate_to_fit(StructuredDocument doc, const ModelConfig& config);

// Splits at sentence boundaries into pieces that fit; single sentences longer
// than max_long are cut into max_long chunks.
std::vector<StructuredDocument> split_to_fit(const StructuredDocument& doc, const ModelConfig& config);

// Where pack_inputs placed an input: packed input `bin`, entry `document`
// of its document list.
struct PackedSlot {
  std::size_t bin = 0;
  std::size_t document = 0;
};

// Greedy first-fit concatenation. Masks are false across documents and
// labels are neutral there.
std::vector<EtcInput> pack_inputs(const std::vector<EtcInput>& inputs, const ModelConfig& config,
                                  std::vector<PackedSlot>* placement = nullptr);

std::vector<EtcInput> pack_documents(const std::vector<StructuredDocument>& docs, const ModelConfig& config,
                                     const BuildOptions& options = {});

StructuredDocument document_from_text(std::string_view text, std::size_t vocab_size);

// JSON structured input: either a single document object or
// {"documents": [...]}. A document is
//   {"contexts": [[sentence, ...], ...],
//    "mention_links": [{"candidate": c, "begin": b, "end": e, "label": name}]}
// where a sentence is text or {"ids": [...], "word_starts": [...]}.
// Errors are std::invalid_argument; syntax errors report the line number.
std::vector<StructuredDocument> parse_structured_documents(std::string_view json_text, const ModelConfig& config);

}  // namespace etc
