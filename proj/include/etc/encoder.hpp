// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "etc/attention.hpp"
#include "etc/autograd.hpp"
#include "etc/config.hpp"
#include "etc/tensor.hpp"
#include "etc/weights.hpp"

namespace etc {

// A segment of the long input summarized by one global row.
struct SentenceSpan {
  std::size_t global_row = 0;
  std::size_t begin = 0;  // long index, inclusive
  std::size_t end = 0;    // long index, exclusive
};

// Rows owned by one source document inside a (possibly packed) input.
struct DocumentSpan {
  std::size_t global_begin = 0, global_end = 0;
  std::size_t long_begin = 0, long_end = 0;
};

struct EtcInput {
  std::vector<std::int32_t> global_ids, long_ids;
  std::vector<std::int32_t> global_types, long_types;
  PieceMasks masks;
  PieceLabels labels;
  std::vector<std::uint8_t> word_starts;  // per long token: first piece of a word
  std::vector<SentenceSpan> sentences;
  std::vector<DocumentSpan> documents;

  std::size_t n_global() const noexcept { return global_ids.size(); }
  std::size_t n_long() const noexcept { return long_ids.size(); }

  // Throws std::invalid_argument on any inconsistency with `config`.
  void validate(const ModelConfig& config) const;
};

template <class T>
using ParameterSet = Weights<Matrix<T>>;
template <class T>
using BoundWeights = Weights<ag::Var<T>>;

// Truncated normal (2 sigma) with config.init_std for matrices and relative
// vectors; zero biases; unit layer-norm gains. Deterministic in `seed`.
template <class T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

// Checks every tensor shape against `config`.
template <class T>
void check_parameter_shapes(const ParameterSet<T>& params, const ModelConfig& config);

template <class T>
BoundWeights<T> bind(const ParameterSet<T>& params, bool requires_grad);

template <class T>
ParameterSet<T> values_of(const BoundWeights<T>& bound);

template <class T>
struct Encoded {
  ag::Var<T> global;
  ag::Var<T> long_seq;
};

template <class T>
struct EncodedValues {
  Matrix<T> global;
  Matrix<T> long_seq;
};

// token_emb[id] + type_emb[type]; there is no absolute position term.
template <class T>
Encoded<T> embed(const EtcInput& input, const BoundWeights<T>& weights);

// Post-LN residual block for both sequences:
// y = LN(x + Attn(x)); out = LN(y + FFN(y)).
template <class T>
Encoded<T> encoder_layer(const Encoded<T>& hidden, const LayerWeights<ag::Var<T>>& layer, const EtcInput& input,
                         T eps);

// Embedding layer norm followed by the layer stack, starting from already
// summed embeddings (lets callers add extra embedding terms).
template <class T>
Encoded<T> encode_embedded(const Encoded<T>& embedded, const EtcInput& input, const BoundWeights<T>& weights,
                           const ModelConfig& config);

template <class T>
Encoded<T> encode(const EtcInput& input, const BoundWeights<T>& weights, const ModelConfig& config);

// Inference without recording a graph.
template <class T>
EncodedValues<T> encode(const EtcInput& input, const ParameterSet<T>& params, const ModelConfig& config);

}  // namespace etc
