// SPDX-License-Identifier: Apache-2.0
#pragma once

// Masked language modelling with whole-word masking, the contrastive
// sentence-prediction (CPC) loss with in-batch negatives, and the combined
// training step.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "etc/autograd.hpp"
#include "etc/config.hpp"
#include "etc/encoder.hpp"
#include "etc/structure.hpp"
#include "etc/tensor.hpp"

namespace etc {

using Rng = std::mt19937_64;

struct MlmTarget {
  std::size_t position = 0;  // long index
  std::int32_t original = 0;
};

// A sentence hidden from the long input. `original` holds its token ids so
// the sentence can be encoded on its own.
struct CpcSentence {
  std::size_t global_row = 0;
  std::size_t begin = 0, end = 0;
  Sentence original;
};

struct MaskedExample {
  EtcInput input;
  std::vector<MlmTarget> mlm_targets;
  std::vector<CpcSentence> cpc;
};

struct MaskedBatch {
  std::vector<MaskedExample> examples;

  std::size_t cpc_count() const;
  std::size_t mlm_count() const;
};

// Each sentence independently with probability `rate`; returns indices in
// increasing order.
std::vector<std::size_t> select_cpc_sentences(std::span<const SentenceSpan> sentences, double rate, Rng& rng);

struct WordMaskResult {
  std::vector<std::int32_t> ids;
  std::vector<MlmTarget> targets;
};

// Samples words (runs starting at word_starts == 1) with probability `rate`
// and targets every piece of a sampled word. Each targeted piece becomes the
// mask id (80%), a random regular id (10%) or stays unchanged (10%).
// Words touching a position with eligible == 0 are never sampled; an empty
// `eligible` allows everything.
WordMaskResult whole_word_mask(std::span<const std::int32_t> ids, std::span<const std::uint8_t> word_starts,
                               double rate, Rng& rng, const ModelConfig& config,
                               std::span<const std::uint8_t> eligible = {});

// CPC sentences are replaced by the mask id in the long input (their summary
// tokens stay); MLM then samples from the remaining words.
MaskedExample mask_example(const EtcInput& input, const TrainConfig& train, const ModelConfig& config, Rng& rng);

// Word-piece logits of the MLM head: LN(GELU(h W + b)) E^T + bias, with E
// the token embedding table.
template <class T>
ag::Var<T> mlm_logits(const ag::Var<T>& hidden, const BoundWeights<T>& weights, T eps);

template <class T>
struct MlmLoss {
  ag::Var<T> loss;
  bool empty = false;  // no targets; loss is a constant zero
};

template <class T>
MlmLoss<T> mlm_loss(const ag::Var<T>& long_hidden, std::span<const MlmTarget> targets,
                    const BoundWeights<T>& weights, T eps);

// score(i, j) = (g1_i W) . g2_j / sqrt(d_x); B x B.
template <class T>
ag::Var<T> cpc_scores(const ag::Var<T>& g1, const ag::Var<T>& g2, const ag::Var<T>& projection);

// Mean over rows of -log softmax(score(i, .))_i. Throws "need negatives" for
// fewer than two rows.
template <class T>
ag::Var<T> cpc_nce_loss(const ag::Var<T>& g1, const ag::Var<T>& g2, const ag::Var<T>& projection);

// Isolated-sentence summaries: each sentence encoded as a flat input with a
// single global token, packed together for efficiency.
template <class T>
ag::Var<T> encode_isolated_sentences(const std::vector<Sentence>& sentences, const BoundWeights<T>& weights,
                                     const ModelConfig& config);

template <class T>
struct AdamState {
  std::vector<Matrix<T>> m, v;
  std::size_t step = 0;
};

// One Adam update from the gradients held by `weights`.
template <class T>
void adam_update(BoundWeights<T>& weights, AdamState<T>& state, const TrainConfig& train);

struct StepMetrics {
  double mlm_loss = 0;
  double cpc_loss = 0;  // NaN when the batch held fewer than two CPC sentences
  double total = 0;
  std::size_t mlm_targets = 0;
  std::size_t cpc_batch = 0;
};

template <class T>
struct LossGraph {
  ag::Var<T> total;
  StepMetrics metrics;
};

// Forward pass of both losses: total = w_mlm * mlm + w_cpc * cpc.
template <class T>
LossGraph<T> pretraining_loss(const MaskedBatch& batch, const BoundWeights<T>& weights, const ModelConfig& config,
                              const TrainConfig& train);

// Loss, backward and one optimizer update. Throws std::runtime_error without
// touching the parameters when the loss is not finite.
template <class T>
StepMetrics pretrain_step(const MaskedBatch& batch, BoundWeights<T>& weights, AdamState<T>& state,
                          const ModelConfig& config, const TrainConfig& train);

// Deterministic training driver over a tokenized corpus.
template <class T>
class Pretrainer {
 public:
  Pretrainer(std::vector<TokenizedDocument> corpus, ModelConfig config, TrainConfig train, std::uint64_t seed);
  Pretrainer(std::vector<TokenizedDocument> corpus, ModelConfig config, TrainConfig train, std::uint64_t seed,
             const ParameterSet<T>& initial);

  MaskedBatch next_batch();
  StepMetrics step();

  std::size_t documents() const { return docs_.size(); }
  const BoundWeights<T>& weights() const { return weights_; }
  ParameterSet<T> parameters() const { return values_of(weights_); }

 private:
  std::vector<EtcInput> docs_;
  ModelConfig config_;
  TrainConfig train_;
  Rng rng_;
  BoundWeights<T> weights_;
  AdamState<T> adam_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

// Documents with at least `min_sentences` sentences, each split to fit and
// laid out as a flat input.
std::vector<EtcInput> prepare_corpus(const std::vector<TokenizedDocument>& corpus, const ModelConfig& config,
                                     std::size_t min_sentences);

}  // namespace etc
