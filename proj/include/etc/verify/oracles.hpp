// SPDX-License-Identifier: Apache-2.0
#pragma once

// Naive reference computations used to check the library. Everything here is
// written with plain loops in double precision and shares no code with the
// kernels it checks beyond the parameter containers.

#include <cstdint>
#include <span>
#include <vector>

#include "etc/attention.hpp"
#include "etc/checkpoint.hpp"
#include "etc/config.hpp"
#include "etc/tensor.hpp"

namespace etc::verify {

using Dense = Matrix<double>;

Dense to_double(const Matrix<float>& m);
Dense to_double(const Matrix<double>& m);

// x W + b with W stored [in, out].
Dense affine(const Dense& x, const Dense& w, const Dense& b);

// Four-piece attention evaluated pair by pair over the concatenated key axis,
// with a separate relative vector looked up for every (query, key) pair.
struct NaiveAttentionOutput {
  Dense global, long_seq;
};
NaiveAttentionOutput naive_global_local_attention(const Dense& x_global, const Dense& x_long,
                                                  const AttentionParams<Dense>& params, const PieceMasks& masks,
                                                  const PieceLabels& labels);

// Unmasked multi-head attention softmax(Q K^T / sqrt(d_z)) V followed by the
// output projection.
Dense standard_attention(const Dense& x, const Projections<Dense>& p, std::size_t heads);

// Star-Transformer connectivity over [relay | n satellites]: the relay sees
// everything, everything sees the relay, satellites see their ring
// neighbours within distance one (no wraparound here).
BoolMatrix star_transformer_pattern(std::size_t n_satellites);

// Relative bias formed by materializing one key-side vector per pair.
Dense per_pair_relative_bias(const Dense& queries, const LabelMatrix& labels, const Dense& vectors, std::size_t head,
                             std::size_t heads);

double cross_entropy_oracle(const Dense& logits, std::span<const std::int32_t> targets);

// -1/B sum_i log softmax_j((g1_i W) . g2_j / sqrt(d))_i
double nce_oracle(const Dense& g1, const Dense& g2, const Dense& projection);

// BERT-layout source checkpoint with random weights, including absolute
// position, pooler and next-sentence tensors. Names carry a "bert/" prefix.
Checkpoint random_bert_checkpoint(const ModelConfig& config, std::size_t max_positions, std::uint64_t seed);

// Post-LN BERT encoder evaluated directly from a BERT-layout checkpoint:
// word + position + type embeddings, embedding layer norm, then per layer
// LN(x + MHA(x)) and LN(y + W2 GELU(W1 y)).
Dense bert_reference_forward(const Checkpoint& source, std::span<const std::int32_t> ids,
                             std::span<const std::int32_t> types, std::size_t heads, std::size_t layers,
                             double eps);

}  // namespace etc::verify
