// SPDX-License-Identifier: Apache-2.0
#include "etc/relative_position.hpp"

#include <algorithm>
#include <stdexcept>

#include "etc/kernels.hpp"

namespace etc {

std::int32_t RelativeVocab::sequence_label(std::ptrdiff_t offset) const noexcept {
  const auto k = static_cast<std::ptrdiff_t>(clip);
  return static_cast<std::int32_t>(std::clamp(offset, -k, k) + k);
}

bool RelativeVocab::has_label(std::string_view name) const noexcept {
  return std::find(structural.begin(), structural.end(), name) != structural.end();
}

std::int32_t RelativeVocab::label(std::string_view name) const {
  auto it = std::find(structural.begin(), structural.end(), name);
  if (it == structural.end()) throw std::invalid_argument("unknown structural label '" + std::string(name) + "'");
  return static_cast<std::int32_t>(sequence_size() + static_cast<std::size_t>(it - structural.begin()));
}

std::string RelativeVocab::name(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size()) throw std::out_of_range("label id out of range");
  if (static_cast<std::size_t>(id) < sequence_size()) {
    const auto offset = static_cast<std::ptrdiff_t>(id) - static_cast<std::ptrdiff_t>(clip);
    return "seq" + std::string(offset < 0 ? "" : "+") + std::to_string(offset);
  }
  return structural[static_cast<std::size_t>(id) - sequence_size()];
}

LabelMatrix sequence_relative_labels(std::size_t n_rows, std::size_t n_cols, std::ptrdiff_t row_offset,
                                     std::size_t clip) {
  const RelativeVocab vocab{clip, {}};
  LabelMatrix out(n_rows, n_cols);
  for (std::size_t i = 0; i < n_rows; ++i)
    for (std::size_t j = 0; j < n_cols; ++j)
      out(i, j) = vocab.sequence_label(static_cast<std::ptrdiff_t>(j) -
                                       (static_cast<std::ptrdiff_t>(i) + row_offset));
  return out;
}

BandLabels band_relative_labels(std::size_t n, std::size_t radius, std::size_t clip) {
  const RelativeVocab vocab{clip, {}};
  BandLabels out(n, radius);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < out.width(); ++c)
      out.cells()(i, c) = vocab.sequence_label(static_cast<std::ptrdiff_t>(c) - static_cast<std::ptrdiff_t>(radius));
  return out;
}

template <class T>
Matrix<T> relative_score_bias(const Matrix<T>& queries, const LabelMatrix& labels, const Matrix<T>& vectors,
                              std::size_t head) {
  const std::size_t dz = queries.cols();
  if (labels.rows() != queries.rows()) throw std::invalid_argument("relative_score_bias: label rows != query rows");
  if ((head + 1) * dz > vectors.cols()) throw std::invalid_argument("relative_score_bias: head out of range");
  Matrix<T> head_vectors(vectors.rows(), dz);
  for (std::size_t v = 0; v < vectors.rows(); ++v)
    for (std::size_t c = 0; c < dz; ++c) head_vectors(v, c) = vectors(v, head * dz + c);
  for (std::int32_t id : labels.values())
    if (id < 0 || static_cast<std::size_t>(id) >= vectors.rows())
      throw std::out_of_range("relative_score_bias: label id " + std::to_string(id) + " out of range");

  Matrix<T> dots;  // n x V
  kernels::gemm_nt(queries, head_vectors, dots);
  Matrix<T> out(labels.rows(), labels.cols());
  for (std::size_t i = 0; i < labels.rows(); ++i)
    for (std::size_t j = 0; j < labels.cols(); ++j) out(i, j) = dots(i, static_cast<std::size_t>(labels(i, j)));
  return out;
}

template Matrix<float> relative_score_bias<float>(const Matrix<float>&, const LabelMatrix&, const Matrix<float>&,
                                                  std::size_t);
template Matrix<double> relative_score_bias<double>(const Matrix<double>&, const LabelMatrix&,
                                                    const Matrix<double>&, std::size_t);

}  // namespace etc
