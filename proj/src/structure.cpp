// SPDX-License-Identifier: Apache-2.0
#include "etc/structure.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>

#include "json.hpp"

namespace etc {
namespace {

using nlohmann::json;

enum class RowKind { kContext, kSentence, kCandidate };

struct GlobalRow {
  RowKind kind;
  std::size_t context = 0;  // owning context (context and sentence rows)
  std::size_t index = 0;    // sentence index within its context, or context / candidate index
  std::size_t begin = 0, end = 0;  // covered long tokens (context and sentence rows)
};

struct LabelIds {
  std::int32_t member, nonmember, context_member, unordered, neutral;
  std::vector<std::int32_t> link_labels;  // per mention link
};

LabelIds resolve_labels(const RelativeVocab& vocab, const std::vector<MentionLink>& links) {
  LabelIds ids{};
  ids.member = vocab.label(labels::kSegmentMember);
  ids.nonmember = vocab.label(labels::kSegmentNonmember);
  ids.neutral = vocab.label(labels::kNeutral);
  ids.context_member = vocab.has_label(labels::kContextMember) ? vocab.label(labels::kContextMember) : ids.member;
  ids.unordered = vocab.has_label(labels::kUnordered) ? vocab.label(labels::kUnordered) : ids.neutral;
  for (const auto& link : links) ids.link_labels.push_back(vocab.label(link.label));
  return ids;
}

EtcInput build(const StructuredDocument& doc, const BuildOptions& options, const ModelConfig& config,
               bool context_rows) {
  const ReservedIds& reserved = config.reserved;
  const RelativeVocab vocab = config.relative_vocab();
  const LabelIds lid = resolve_labels(vocab, doc.mention_links);

  EtcInput in;
  std::vector<GlobalRow> rows;
  std::vector<std::size_t> token_context;
  for (std::size_t c = 0; c < doc.contexts.size(); ++c) {
    const std::size_t context_row = rows.size();
    if (context_rows) {
      rows.push_back({RowKind::kContext, c, c, in.long_ids.size(), 0});
      in.global_ids.push_back(reserved.context_summary);
    }
    for (std::size_t s = 0; s < doc.contexts[c].size(); ++s) {
      const Sentence& sent = doc.contexts[c][s];
      if (sent.ids.empty()) throw std::invalid_argument("empty sentence in context " + std::to_string(c));
      if (!sent.word_starts.empty() && sent.word_starts.size() != sent.ids.size())
        throw std::invalid_argument("word_starts length differs from ids in context " + std::to_string(c));
      const std::size_t begin = in.long_ids.size();
      in.long_ids.insert(in.long_ids.end(), sent.ids.begin(), sent.ids.end());
      if (sent.word_starts.empty())
        in.word_starts.insert(in.word_starts.end(), sent.ids.size(), 1);
      else
        in.word_starts.insert(in.word_starts.end(), sent.word_starts.begin(), sent.word_starts.end());
      token_context.insert(token_context.end(), sent.ids.size(), c);
      in.sentences.push_back({rows.size(), begin, in.long_ids.size()});
      rows.push_back({RowKind::kSentence, c, s, begin, in.long_ids.size()});
      in.global_ids.push_back(reserved.sentence_summary);
    }
    if (context_rows) rows[context_row].end = in.long_ids.size();
  }
  const std::size_t n_candidates = doc.candidate_count();
  for (std::size_t k = 0; k < n_candidates; ++k) {
    rows.push_back({RowKind::kCandidate, 0, k, 0, 0});
    in.global_ids.push_back(reserved.candidate);
  }

  const std::size_t ng = in.global_ids.size(), nl = in.long_ids.size();
  if (nl == 0) throw std::invalid_argument("document has no tokens");
  if (nl > config.max_long || ng > config.max_global)
    throw std::invalid_argument("input overflow: " + std::to_string(nl) + " long tokens (max " +
                                std::to_string(config.max_long) + "), " + std::to_string(ng) +
                                " global tokens (max " + std::to_string(config.max_global) + ")");
  for (const auto& link : doc.mention_links)
    if (link.begin >= link.end || link.end > nl)
      throw std::invalid_argument("mention link span [" + std::to_string(link.begin) + ", " +
                                  std::to_string(link.end) + ") outside the document");
  in.global_types.assign(ng, 0);
  in.long_types.assign(nl, 0);
  in.documents.push_back({0, ng, 0, nl});

  const std::size_t first_candidate = ng - n_candidates;
  // Label id of candidate row `k` towards token `t`, or -1 when not linked.
  auto link_label = [&](std::size_t k, std::size_t t) -> std::int32_t {
    for (std::size_t m = 0; m < doc.mention_links.size(); ++m) {
      const auto& link = doc.mention_links[m];
      if (link.candidate == k && t >= link.begin && t < link.end) return lid.link_labels[m];
    }
    return -1;
  };
  // Label between global row `a` and token `t`, and whether hard g2l keeps it.
  auto global_token = [&](std::size_t a, std::size_t t, bool& member) -> std::int32_t {
    const GlobalRow& row = rows[a];
    member = false;
    switch (row.kind) {
      case RowKind::kSentence:
        member = t >= row.begin && t < row.end;
        return member ? lid.member : lid.nonmember;
      case RowKind::kContext:
        member = t >= row.begin && t < row.end;
        return member && !options.flat_structure ? lid.context_member : lid.nonmember;
      case RowKind::kCandidate: {
        const std::int32_t l = link_label(a - first_candidate, t);
        member = l >= 0;
        return member ? l : lid.nonmember;
      }
    }
    return lid.neutral;
  };
  auto global_global = [&](std::size_t a, std::size_t b) -> std::int32_t {
    if (a == b) return vocab.sequence_label(0);
    const GlobalRow &ra = rows[a], &rb = rows[b];
    const auto offset = static_cast<std::ptrdiff_t>(b) - static_cast<std::ptrdiff_t>(a);
    if (ra.kind == RowKind::kCandidate || rb.kind == RowKind::kCandidate) return lid.unordered;
    if (options.flat_structure) return vocab.sequence_label(offset);
    if (ra.kind == RowKind::kSentence && rb.kind == RowKind::kSentence) {
      if (ra.context == rb.context)
        return vocab.sequence_label(static_cast<std::ptrdiff_t>(rb.index) - static_cast<std::ptrdiff_t>(ra.index));
      return options.order_between_contexts ? vocab.sequence_label(offset) : lid.unordered;
    }
    if (ra.kind == RowKind::kContext && rb.kind == RowKind::kContext)
      return options.order_between_contexts
                 ? vocab.sequence_label(static_cast<std::ptrdiff_t>(rb.index) - static_cast<std::ptrdiff_t>(ra.index))
                 : lid.unordered;
    return ra.context == rb.context ? lid.context_member : lid.nonmember;
  };

  in.masks.g2g = BoolMatrix(ng, ng, 1);
  in.masks.g2l = BoolMatrix(ng, nl, 1);
  in.masks.l2g = BoolMatrix(nl, ng, 1);
  in.masks.l2l = local_band(nl, config.local_radius);
  in.labels.g2g = LabelMatrix(ng, ng);
  in.labels.g2l = LabelMatrix(ng, nl);
  in.labels.l2g = LabelMatrix(nl, ng);
  in.labels.l2l = band_relative_labels(nl, config.local_radius, config.clip_distance);

  for (std::size_t a = 0; a < ng; ++a)
    for (std::size_t b = 0; b < ng; ++b) in.labels.g2g(a, b) = global_global(a, b);
  for (std::size_t a = 0; a < ng; ++a)
    for (std::size_t t = 0; t < nl; ++t) {
      bool member = false;
      const std::int32_t l = global_token(a, t, member);
      in.labels.g2l(a, t) = l;
      in.labels.l2g(t, a) = l;
      if (options.hard_g2l) in.masks.g2l(a, t) = member;
    }
  if (!options.flat_structure && doc.contexts.size() > 1) {
    auto& cells = in.masks.l2l.cells();
    const std::size_t r = config.local_radius;
    for (std::size_t i = 0; i < nl; ++i)
      for (std::size_t c = 0; c < cells.cols(); ++c) {
        const auto j = static_cast<std::ptrdiff_t>(i + c) - static_cast<std::ptrdiff_t>(r);
        if (j >= 0 && j < static_cast<std::ptrdiff_t>(nl) && token_context[static_cast<std::size_t>(j)] != token_context[i])
          cells(i, c) = 0;
      }
  }
  return in;
}

bool fits(const StructuredDocument& doc, const ModelConfig& config) {
  return doc.token_count() <= config.max_long && doc.global_count() <= config.max_global;
}

// Removes long tokens [begin, end) from the link table, dropping links that
// overlap the range and shifting later ones.
void remove_token_range(std::vector<MentionLink>& links, std::size_t begin, std::size_t end) {
  std::vector<MentionLink> kept;
  for (auto link : links) {
    if (link.end <= begin) {
      kept.push_back(link);
    } else if (link.begin >= end) {
      link.begin -= end - begin;
      link.end -= end - begin;
      kept.push_back(link);
    }
  }
  links = std::move(kept);
}

// Keeps links inside [begin, end), rebased, with candidates renumbered densely.
std::vector<MentionLink> links_within(const std::vector<MentionLink>& links, std::size_t begin, std::size_t end) {
  std::map<std::size_t, std::size_t> renumber;
  std::vector<MentionLink> out;
  for (const auto& link : links)
    if (link.begin >= begin && link.end <= end) renumber.emplace(link.candidate, 0);
  std::size_t next = 0;
  for (auto& [from, to] : renumber) to = next++;
  for (auto link : links)
    if (link.begin >= begin && link.end <= end) {
      link.candidate = renumber[link.candidate];
      link.begin -= begin;
      link.end -= begin;
      out.push_back(link);
    }
  return out;
}

std::size_t line_of(std::string_view text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

Sentence parse_sentence(const json& j, const ModelConfig& config, const std::string& where) {
  if (j.is_string()) {
    Sentence s = tokenize_sentence(j.get<std::string>(), config.vocab_size);
    if (s.ids.empty()) throw std::invalid_argument(where + ": sentence has no tokens");
    return s;
  }
  if (!j.is_object() || !j.contains("ids") || !j.at("ids").is_array())
    throw std::invalid_argument(where + ": sentence must be a string or an object with an \"ids\" array");
  Sentence s;
  for (const auto& v : j.at("ids")) {
    if (!v.is_number_integer()) throw std::invalid_argument(where + ": token ids must be integers");
    const auto id = v.get<std::int64_t>();
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
      throw std::invalid_argument(where + ": token id " + std::to_string(id) + " outside the vocabulary");
    s.ids.push_back(static_cast<std::int32_t>(id));
  }
  if (s.ids.empty()) throw std::invalid_argument(where + ": sentence has no tokens");
  if (j.contains("word_starts")) {
    for (const auto& v : j.at("word_starts")) s.word_starts.push_back((v.is_boolean() ? v.get<bool>() : v.get<int>() != 0) ? 1 : 0);
    if (s.word_starts.size() != s.ids.size())
      throw std::invalid_argument(where + ": word_starts length differs from ids");
  } else {
    s.word_starts.assign(s.ids.size(), 1);
  }
  return s;
}

StructuredDocument parse_document(const json& j, const ModelConfig& config, const std::string& where) {
  if (!j.is_object() || !j.contains("contexts") || !j.at("contexts").is_array())
    throw std::invalid_argument(where + ": expected an object with a \"contexts\" array");
  StructuredDocument doc;
  const auto& contexts = j.at("contexts");
  for (std::size_t c = 0; c < contexts.size(); ++c) {
    const std::string cw = where + ".contexts[" + std::to_string(c) + "]";
    const json& ctx = contexts[c].is_object() && contexts[c].contains("sentences") ? contexts[c].at("sentences")
                                                                                    : contexts[c];
    if (!ctx.is_array() || ctx.empty()) throw std::invalid_argument(cw + ": expected a nonempty sentence list");
    std::vector<Sentence> sentences;
    for (std::size_t s = 0; s < ctx.size(); ++s)
      sentences.push_back(parse_sentence(ctx[s], config, cw + "[" + std::to_string(s) + "]"));
    doc.contexts.push_back(std::move(sentences));
  }
  if (doc.contexts.empty()) throw std::invalid_argument(where + ": document has no contexts");
  if (j.contains("mention_links")) {
    const RelativeVocab vocab = config.relative_vocab();
    const auto& links = j.at("mention_links");
    if (!links.is_array()) throw std::invalid_argument(where + ".mention_links: expected an array");
    for (std::size_t m = 0; m < links.size(); ++m) {
      const std::string lw = where + ".mention_links[" + std::to_string(m) + "]";
      const auto& l = links[m];
      if (!l.is_object() || !l.contains("candidate") || !l.contains("begin") || !l.contains("end"))
        throw std::invalid_argument(lw + ": expected {candidate, begin, end}");
      MentionLink link;
      link.candidate = l.at("candidate").get<std::size_t>();
      link.begin = l.at("begin").get<std::size_t>();
      link.end = l.at("end").get<std::size_t>();
      if (l.contains("label")) link.label = l.at("label").get<std::string>();
      vocab.label(link.label);
      if (link.begin >= link.end || link.end > doc.token_count())
        throw std::invalid_argument(lw + ": span outside the document");
      doc.mention_links.push_back(std::move(link));
    }
  }
  return doc;
}

}  // namespace

std::size_t StructuredDocument::token_count() const {
  std::size_t n = 0;
  for (const auto& c : contexts)
    for (const auto& s : c) n += s.ids.size();
  return n;
}

std::size_t StructuredDocument::sentence_count() const {
  std::size_t n = 0;
  for (const auto& c : contexts) n += c.size();
  return n;
}

std::size_t StructuredDocument::candidate_count() const {
  std::size_t n = 0;
  for (const auto& link : mention_links) n = std::max(n, link.candidate + 1);
  return n;
}

EtcInput build_flat_input(const std::vector<Sentence>& sentences, const ModelConfig& config,
                          const BuildOptions& options) {
  if (sentences.empty()) throw std::invalid_argument("build_flat_input: no sentences");
  StructuredDocument doc;
  doc.contexts.push_back(sentences);
  BuildOptions flat = options;
  flat.flat_structure = true;
  return build(doc, flat, config, false);
}

EtcInput build_hierarchical_input(const StructuredDocument& doc, const BuildOptions& options,
                                  const ModelConfig& config) {
  if (doc.contexts.empty()) throw std::invalid_argument("build_hierarchical_input: no contexts");
  return build(doc, options, config, true);
}

StructuredDocument truncate_to_fit(StructuredDocument doc, const ModelConfig& config) {
  while (!fits(doc, config)) {
    std::size_t largest = 0, largest_tokens = 0;
    for (std::size_t c = 0; c < doc.contexts.size(); ++c) {
      std::size_t n = 0;
      for (const auto& s : doc.contexts[c]) n += s.ids.size();
      if (n > largest_tokens) {
        largest = c;
        largest_tokens = n;
      }
    }
    if (largest_tokens == 0) throw std::invalid_argument("document cannot be truncated to fit");
    std::size_t begin = 0;
    for (std::size_t c = 0; c < largest; ++c)
      for (const auto& s : doc.contexts[c]) begin += s.ids.size();
    auto& ctx = doc.contexts[largest];
    const std::size_t removed = ctx.back().ids.size();
    begin += largest_tokens - removed;
    ctx.pop_back();
    remove_token_range(doc.mention_links, begin, begin + removed);
    if (ctx.empty()) doc.contexts.erase(doc.contexts.begin() + static_cast<std::ptrdiff_t>(largest));
    if (doc.contexts.empty()) throw std::invalid_argument("document cannot be truncated to fit");
  }
  return doc;
}

std::vector<StructuredDocument> split_to_fit(const StructuredDocument& doc, const ModelConfig& config) {
  if (fits(doc, config)) return {doc};
  const std::size_t max_long = config.max_long;
  const std::size_t reserve = doc.candidate_count();
  if (config.max_global < reserve + 2)
    throw std::invalid_argument("max_global too small to split a document with " + std::to_string(reserve) +
                                " candidates");
  const std::size_t max_global = config.max_global - reserve;

  std::vector<StructuredDocument> out;
  StructuredDocument current;
  std::size_t tokens = 0, globals = 0, chunk_begin = 0;
  int current_context = -1;
  auto emit = [&] {
    if (tokens == 0) return;
    current.mention_links = links_within(doc.mention_links, chunk_begin, chunk_begin + tokens);
    out.push_back(std::move(current));
    current = StructuredDocument{};
    chunk_begin += tokens;
    tokens = globals = 0;
    current_context = -1;
  };
  for (std::size_t c = 0; c < doc.contexts.size(); ++c)
    for (const auto& sentence : doc.contexts[c]) {
      // Over-long sentences become consecutive max_long pieces.
      for (std::size_t off = 0; off < sentence.ids.size(); off += max_long) {
        const std::size_t len = std::min(max_long, sentence.ids.size() - off);
        Sentence piece;
        piece.ids.assign(sentence.ids.begin() + static_cast<std::ptrdiff_t>(off),
                         sentence.ids.begin() + static_cast<std::ptrdiff_t>(off + len));
        if (!sentence.word_starts.empty())
          piece.word_starts.assign(sentence.word_starts.begin() + static_cast<std::ptrdiff_t>(off),
                                   sentence.word_starts.begin() + static_cast<std::ptrdiff_t>(off + len));
        const bool new_context = current_context != static_cast<int>(c);
        const std::size_t extra_globals = 1 + (new_context ? 1 : 0);
        if (tokens + len > max_long || globals + extra_globals > max_global) emit();
        if (current_context != static_cast<int>(c)) {
          current.contexts.emplace_back();
          current_context = static_cast<int>(c);
          ++globals;
        }
        current.contexts.back().push_back(std::move(piece));
        tokens += len;
        ++globals;
      }
    }
  emit();
  return out;
}

std::vector<EtcInput> pack_inputs(const std::vector<EtcInput>& inputs, const ModelConfig& config,
                                  std::vector<PackedSlot>* placement) {
  std::vector<std::vector<std::size_t>> bins;
  if (placement) placement->assign(inputs.size(), PackedSlot{});
  std::vector<std::pair<std::size_t, std::size_t>> usage;  // (n_g, n_l) per bin
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::size_t ng = inputs[k].n_global(), nl = inputs[k].n_long();
    if (ng > config.max_global || nl > config.max_long)
      throw std::invalid_argument("pack_inputs: input " + std::to_string(k) + " does not fit on its own");
    if (inputs[k].masks.l2l.radius() != config.local_radius)
      throw std::invalid_argument("pack_inputs: input radius differs from local_radius");
    bool placed = false;
    for (std::size_t b = 0; b < bins.size() && !placed; ++b)
      if (usage[b].first + ng <= config.max_global && usage[b].second + nl <= config.max_long) {
        if (placement) (*placement)[k] = {b, bins[b].size()};
        bins[b].push_back(k);
        usage[b].first += ng;
        usage[b].second += nl;
        placed = true;
      }
    if (!placed) {
      if (placement) (*placement)[k] = {bins.size(), 0};
      bins.push_back({k});
      usage.emplace_back(ng, nl);
    }
  }

  const std::int32_t neutral = config.relative_vocab().label(labels::kNeutral);
  const std::size_t r = config.local_radius;
  std::vector<EtcInput> out;
  for (std::size_t b = 0; b < bins.size(); ++b) {
    const std::size_t ng = usage[b].first, nl = usage[b].second;
    EtcInput p;
    p.masks = PieceMasks{BoolMatrix(ng, ng), BoolMatrix(ng, nl), BoolMatrix(nl, ng), BandMask(nl, r)};
    p.labels = PieceLabels{LabelMatrix(ng, ng, neutral), LabelMatrix(ng, nl, neutral), LabelMatrix(nl, ng, neutral),
                           BandLabels(nl, r, neutral)};
    std::size_t go = 0, lo = 0;
    for (std::size_t k : bins[b]) {
      const EtcInput& in = inputs[k];
      const std::size_t dg = in.n_global(), dl = in.n_long();
      p.global_ids.insert(p.global_ids.end(), in.global_ids.begin(), in.global_ids.end());
      p.long_ids.insert(p.long_ids.end(), in.long_ids.begin(), in.long_ids.end());
      p.global_types.insert(p.global_types.end(), in.global_types.begin(), in.global_types.end());
      p.long_types.insert(p.long_types.end(), in.long_types.begin(), in.long_types.end());
      if (in.word_starts.empty())
        p.word_starts.insert(p.word_starts.end(), dl, 1);
      else
        p.word_starts.insert(p.word_starts.end(), in.word_starts.begin(), in.word_starts.end());
      for (std::size_t i = 0; i < dg; ++i) {
        for (std::size_t j = 0; j < dg; ++j) {
          p.masks.g2g(go + i, go + j) = in.masks.g2g(i, j);
          p.labels.g2g(go + i, go + j) = in.labels.g2g(i, j);
        }
        for (std::size_t j = 0; j < dl; ++j) {
          p.masks.g2l(go + i, lo + j) = in.masks.g2l(i, j);
          p.labels.g2l(go + i, lo + j) = in.labels.g2l(i, j);
        }
      }
      for (std::size_t i = 0; i < dl; ++i) {
        for (std::size_t j = 0; j < dg; ++j) {
          p.masks.l2g(lo + i, go + j) = in.masks.l2g(i, j);
          p.labels.l2g(lo + i, go + j) = in.labels.l2g(i, j);
        }
        for (std::size_t c = 0; c < p.masks.l2l.width(); ++c) {
          const auto j = static_cast<std::ptrdiff_t>(i + c) - static_cast<std::ptrdiff_t>(r);
          if (j < 0 || j >= static_cast<std::ptrdiff_t>(dl)) continue;
          p.masks.l2l.cells()(lo + i, c) = in.masks.l2l.cells()(i, c);
          p.labels.l2l.cells()(lo + i, c) = in.labels.l2l.cells()(i, c);
        }
      }
      for (auto s : in.sentences) p.sentences.push_back({s.global_row + go, s.begin + lo, s.end + lo});
      p.documents.push_back({go, go + dg, lo, lo + dl});
      go += dg;
      lo += dl;
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<EtcInput> pack_documents(const std::vector<StructuredDocument>& docs, const ModelConfig& config,
                                     const BuildOptions& options) {
  std::vector<EtcInput> inputs;
  for (const auto& doc : docs)
    for (const auto& piece : split_to_fit(doc, config)) inputs.push_back(build_hierarchical_input(piece, options, config));
  return pack_inputs(inputs, config);
}

StructuredDocument document_from_text(std::string_view text, std::size_t vocab_size) {
  StructuredDocument doc;
  auto sentences = tokenize_document(text, vocab_size);
  if (sentences.empty()) throw std::invalid_argument("text contains no sentences");
  doc.contexts.push_back(std::move(sentences));
  return doc;
}

std::vector<StructuredDocument> parse_structured_documents(std::string_view json_text, const ModelConfig& config) {
  json root;
  try {
    root = json::parse(json_text.begin(), json_text.end());
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("line " + std::to_string(line_of(json_text, e.byte == 0 ? 0 : e.byte - 1)) +
                                ": invalid JSON: " + e.what());
  }
  std::vector<StructuredDocument> docs;
  try {
    if (root.is_object() && root.contains("documents")) {
      const auto& list = root.at("documents");
      if (!list.is_array()) throw std::invalid_argument("documents: expected an array");
      for (std::size_t d = 0; d < list.size(); ++d)
        docs.push_back(parse_document(list[d], config, "documents[" + std::to_string(d) + "]"));
    } else {
      docs.push_back(parse_document(root, config, "document"));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("structured input: ") + e.what());
  }
  if (docs.empty()) throw std::invalid_argument("structured input has no documents");
  return docs;
}

}  // namespace etc
