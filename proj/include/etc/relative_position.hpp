// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "etc/tensor.hpp"

namespace etc {

using LabelMatrix = Grid<std::int32_t>;
using BandLabels = Band<std::int32_t>;

// Edge-label vocabulary: ids 0..2k are the clipped sequence offsets -k..k,
// structural labels follow in declaration order.
struct RelativeVocab {
  std::size_t clip = 0;
  std::vector<std::string> structural;

  std::size_t size() const noexcept { return 2 * clip + 1 + structural.size(); }
  std::size_t sequence_size() const noexcept { return 2 * clip + 1; }

  std::int32_t sequence_label(std::ptrdiff_t offset) const noexcept;
  // Throws std::invalid_argument for names not in the vocabulary.
  std::int32_t label(std::string_view name) const;
  bool has_label(std::string_view name) const noexcept;
  std::string name(std::int32_t id) const;
};

// id(i, j) = clip(j - (i + row_offset), -k, k) + k
LabelMatrix sequence_relative_labels(std::size_t n_rows, std::size_t n_cols, std::ptrdiff_t row_offset,
                                     std::size_t clip);

// Same labelling for the radius-r band of an n x n relation.
BandLabels band_relative_labels(std::size_t n, std::size_t radius, std::size_t clip);

// bias(i, j) = queries_i . a_{labels(i, j)} for one head. `vectors` holds
// every head side by side (V x heads*d_z); head h owns columns
// [h*d_z, (h+1)*d_z). Computed as an n x V dot-product matrix followed by a
// gather.
template <class T>
Matrix<T> relative_score_bias(const Matrix<T>& queries, const LabelMatrix& labels, const Matrix<T>& vectors,
                              std::size_t head);

}  // namespace etc
