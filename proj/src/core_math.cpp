// SPDX-License-Identifier: Apache-2.0
#include "etc/core_math.hpp"

#include <stdexcept>
#include <vector>

#include "etc/kernels.hpp"

namespace etc {

template <class T>
Matrix<T> masked_softmax(const Matrix<T>& scores, T mask_constant) {
  if (!all_finite(scores)) throw std::domain_error("non-finite scores");
  Matrix<T> out;
  kernels::softmax_rows(scores, -mask_constant / T{2}, out);
  return out;
}

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, T eps) {
  if (x.cols() == 0) throw std::invalid_argument("layer_norm: empty feature dimension");
  if (!(eps > T{0})) throw std::invalid_argument("layer_norm: eps must be positive");
  if (gain.size() != x.cols() || bias.size() != x.cols())
    throw std::invalid_argument("layer_norm: shape mismatch (x width " + std::to_string(x.cols()) + ", gain " +
                                std::to_string(gain.size()) + ", bias " + std::to_string(bias.size()) + ")");
  Matrix<T> out;
  std::vector<T> mean, rstd;
  kernels::layer_norm_rows(x, gain, bias, eps, out, mean, rstd);
  return out;
}

template <class T>
Matrix<T> gelu(const Matrix<T>& x) {
  Matrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = kernels::gelu(x.data()[i]);
  return out;
}

template <class T>
Matrix<T> feed_forward(const Matrix<T>& x, const Matrix<T>& w1, const Matrix<T>& b1, const Matrix<T>& w2,
                       const Matrix<T>& b2) {
  if (w1.rows() != x.cols() || b1.size() != w1.cols() || w2.rows() != w1.cols() || b2.size() != w2.cols() ||
      w2.cols() != x.cols())
    throw std::invalid_argument("feed_forward: shape mismatch");
  Matrix<T> hidden;
  kernels::gemm_nn(x, w1, hidden);
  for (std::size_t r = 0; r < hidden.rows(); ++r)
    for (std::size_t c = 0; c < hidden.cols(); ++c) hidden(r, c) = kernels::gelu(hidden(r, c) + b1.data()[c]);
  Matrix<T> out;
  kernels::gemm_nn(hidden, w2, out);
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += b2.data()[c];
  return out;
}

#define ETC_INSTANTIATE_CORE(T)                                                                             \
  template Matrix<T> masked_softmax<T>(const Matrix<T>&, T);                                                \
  template Matrix<T> layer_norm<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, T);                \
  template Matrix<T> gelu<T>(const Matrix<T>&);                                                             \
  template Matrix<T> feed_forward<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, \
                                     const Matrix<T>&);

ETC_INSTANTIATE_CORE(float)
ETC_INSTANTIATE_CORE(double)

}  // namespace etc
