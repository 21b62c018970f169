// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "etc/autograd.hpp"
#include "etc/relative_position.hpp"
#include "etc/tensor.hpp"
#include "etc/weights.hpp"

namespace etc {

// Per-instance attention masks. The long-to-long piece is only ever stored
// inside its radius band, so the band restriction holds by construction.
struct PieceMasks {
  BoolMatrix g2g, g2l, l2g;
  BandMask l2l;
};

struct PieceLabels {
  LabelMatrix g2g, g2l, l2g;
  BandLabels l2l;
};

// Dense n_l x n_l mask with (i, j) set iff |i - j| <= r.
BoolMatrix build_local_band_mask(std::size_t n_long, std::size_t radius);
// Same relation in band storage; cells pointing outside [0, n_l) are false.
BandMask local_band(std::size_t n_long, std::size_t radius);
BoolMatrix expand_band(const BandMask& band);

// Which query (row) may attend which key (column) over the concatenated
// [global | long] sequence once all four masks are composed.
BoolMatrix realized_pattern(const PieceMasks& masks);

// Full masks and sequence labels for a given geometry; handy for tests and
// the benchmark.
PieceMasks full_masks(std::size_t n_global, std::size_t n_long, std::size_t radius);
PieceLabels sequence_labels(std::size_t n_global, std::size_t n_long, std::size_t radius, std::size_t clip);

// l2l scores in blocked form: queries are padded to `blocks` blocks of
// `block_length` = r+1 rows and each row holds 3(r+1) key slots (left, same
// and right key block). `valid` marks the slots with both indices < n_l and
// |i - j| <= r; everything else is present but must receive the -C penalty.
template <class T>
struct BlockedScores {
  std::size_t blocks = 0;
  std::size_t block_length = 0;
  Matrix<T> scores;
  BoolMatrix valid;
};

template <class T>
BlockedScores<T> blocked_local_scores(const Matrix<T>& queries, const Matrix<T>& keys, std::size_t radius);

// Key positions scored before per-instance masking:
// n_g (n_g + n_l) + n_l (n_g + min(2r + 1, n_l)).
std::size_t count_attention_pairs(std::size_t n_global, std::size_t n_long, std::size_t radius);
std::size_t count_attention_pairs(std::size_t n_global, std::size_t n_long, std::size_t radius,
                                  const PieceMasks& masks);

template <class T>
struct AttentionOutput {
  Matrix<T> global;
  Matrix<T> long_seq;
};

template <class T>
struct AttentionVars {
  ag::Var<T> global;
  ag::Var<T> long_seq;
};

// Dense per-pair evaluation of global-local attention: every score
// e_ij = q_i (k_j + a_ij)^T / sqrt(d_z) - (1 - M_ij) C is formed explicitly,
// one softmax over [global keys | long keys] per query row. Serial; used as
// the reference for the blocked implementation.
template <class T>
AttentionOutput<T> dense_reference_attention(const Matrix<T>& x_global, const Matrix<T>& x_long,
                                             const AttentionParams<Matrix<T>>& params, const PieceMasks& masks,
                                             const PieceLabels& labels);

// Blocked global-local attention on the autodiff graph. The l2l piece is
// scored with band_scores over 3(r+1) slots per query and the relative bias
// with the gather form.
template <class T>
AttentionVars<T> global_local_attention(const ag::Var<T>& x_global, const ag::Var<T>& x_long,
                                        const AttentionParams<ag::Var<T>>& params, const PieceMasks& masks,
                                        const PieceLabels& labels);

template <class T>
AttentionOutput<T> global_local_attention(const Matrix<T>& x_global, const Matrix<T>& x_long,
                                          const AttentionParams<Matrix<T>>& params, const PieceMasks& masks,
                                          const PieceLabels& labels);

// Throws std::invalid_argument describing the first inconsistency.
void validate_layout(std::size_t n_global, std::size_t n_long, const PieceMasks& masks, const PieceLabels& labels);

}  // namespace etc
