// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel inner loops. The top-level namespace holds the OpenMP
// kernels used by the model; `serial` holds straightforward single-threaded
// versions kept as references for tests and the kernel benchmark.
//
// Blocked band layout: the long sequence is cut into blocks of length r+1.
// A query in block b is scored against the 3(r+1) key slots spanning blocks
// b-1, b, b+1; slot s addresses key (b-1)(r+1) + s, which may fall outside
// [0, n) (padding) or outside the radius (masked later).

#include <cstddef>
#include <cstdint>
#include <vector>

#include "etc/tensor.hpp"

namespace etc::kernels {

inline std::size_t block_length(std::size_t radius) { return radius + 1; }
inline std::size_t slot_count(std::size_t radius) { return 3 * (radius + 1); }
inline std::size_t block_count(std::size_t n, std::size_t radius) {
  return (n + radius) / (radius + 1);
}
// Key index addressed by slot s of query i; negative or >= n means padding.
inline std::ptrdiff_t slot_key(std::size_t query, std::size_t slot, std::size_t radius) {
  const auto len = static_cast<std::ptrdiff_t>(radius + 1);
  return (static_cast<std::ptrdiff_t>(query) / len - 1) * len + static_cast<std::ptrdiff_t>(slot);
}

// c = a * b
template <class T>
void gemm_nn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false);
// c = a * b^T
template <class T>
void gemm_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false);
// c = a^T * b
template <class T>
void gemm_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false);

// out(i, s) = q_i . k_{slot_key(i, s)}; zero for padding slots.
template <class T>
void band_scores(const Matrix<T>& q, const Matrix<T>& k, std::size_t radius, Matrix<T>& out);
// out_i (+)= sum_s w(i, s) x_{slot_key(i, s)}
template <class T>
void band_apply(const Matrix<T>& w, const Matrix<T>& x, std::size_t radius, Matrix<T>& out,
                bool accumulate = false);
// out_j (+)= sum over (i, s) with slot_key(i, s) == j of w(i, s) x_i
template <class T>
void band_scatter(const Matrix<T>& w, const Matrix<T>& x, std::size_t radius, Matrix<T>& out,
                  bool accumulate = false);

// Row softmax. Rows whose maximum is <= guard come back as all zeros and are
// flagged in `guarded` (when non-null).
template <class T>
void softmax_rows(const Matrix<T>& scores, T guard, Matrix<T>& out, std::vector<std::uint8_t>* guarded = nullptr);

// Row-wise layer norm; mean and reciprocal std are written per row.
template <class T>
void layer_norm_rows(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, T eps, Matrix<T>& out,
                     std::vector<T>& mean, std::vector<T>& rstd);

template <class T>
T gelu(T x);
template <class T>
T gelu_derivative(T x);

namespace serial {

template <class T>
void gemm_nn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false);
template <class T>
void gemm_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false);
template <class T>
void gemm_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate = false);
template <class T>
void band_scores(const Matrix<T>& q, const Matrix<T>& k, std::size_t radius, Matrix<T>& out);
template <class T>
void band_apply(const Matrix<T>& w, const Matrix<T>& x, std::size_t radius, Matrix<T>& out,
                bool accumulate = false);
template <class T>
void band_scatter(const Matrix<T>& w, const Matrix<T>& x, std::size_t radius, Matrix<T>& out,
                  bool accumulate = false);
template <class T>
void softmax_rows(const Matrix<T>& scores, T guard, Matrix<T>& out, std::vector<std::uint8_t>* guarded = nullptr);

}  // namespace serial

// Threads used by the parallel kernels; 0 restores the OpenMP default.
void set_num_threads(int n);
int num_threads();

}  // namespace etc::kernels
