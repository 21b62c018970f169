// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "etc/tensor.hpp"

namespace etc {

// Additive penalty for masked attention pairs.
inline constexpr double kMaskConstant = 10000.0;
inline constexpr double kLayerNormEps = 1e-12;

// Row softmax over scores that already carry the -C mask penalty. A row whose
// entries are all <= -C/2 is fully masked and comes back as zeros.
template <class T>
Matrix<T> masked_softmax(const Matrix<T>& scores, T mask_constant = static_cast<T>(kMaskConstant));

// gain * (x - mean) / sqrt(var + eps) + bias, per row of x.
template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias,
                     T eps = static_cast<T>(kLayerNormEps));

template <class T>
Matrix<T> gelu(const Matrix<T>& x);

// W2 * GELU(W1 x + b1) + b2 per row; weights are [in, out].
template <class T>
Matrix<T> feed_forward(const Matrix<T>& x, const Matrix<T>& w1, const Matrix<T>& b1, const Matrix<T>& w2,
                       const Matrix<T>& b2);

}  // namespace etc
