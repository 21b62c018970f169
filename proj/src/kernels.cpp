// SPDX-License-Identifier: Apache-2.0
#include "etc/kernels.hpp"

#include <omp.h>

#include <cmath>
#include <stdexcept>

namespace etc::kernels {
namespace {

template <class T>
void prepare(Matrix<T>& c, std::size_t rows, std::size_t cols, bool accumulate) {
  if (accumulate) {
    if (c.rows() != rows || c.cols() != cols) throw std::invalid_argument("kernel: accumulator shape mismatch");
  } else {
    c = Matrix<T>(rows, cols);
  }
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline long as_long(std::size_t v) { return static_cast<long>(v); }

}  // namespace

void set_num_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int num_threads() { return omp_get_max_threads(); }

template <class T>
void gemm_nn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate) {
  if (a.cols() != b.rows()) throw std::invalid_argument("gemm_nn: inner dimension mismatch");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  prepare(c, m, n, accumulate);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(m); ++i) {
    T* out = c.data() + i * n;
    const T* arow = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate) {
  if (a.cols() != b.cols()) throw std::invalid_argument("gemm_nt: inner dimension mismatch");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  prepare(c, m, n, accumulate);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(m); ++i) {
    const T* arow = a.data() + i * k;
    T* out = c.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += dot(arow, b.data() + j * k, k);
  }
}

template <class T>
void gemm_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate) {
  if (a.rows() != b.rows()) throw std::invalid_argument("gemm_tn: inner dimension mismatch");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  prepare(c, m, n, accumulate);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < as_long(m); ++i) {
    T* out = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a(p, i);
      if (av == T{0}) continue;
      const T* brow = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += av * brow[j];
    }
  }
}

template <class T>
void band_scores(const Matrix<T>& q, const Matrix<T>& k, std::size_t radius, Matrix<T>& out) {
  if (q.rows() != k.rows() || q.cols() != k.cols()) throw std::invalid_argument("band_scores: shape mismatch");
  const std::size_t n = q.rows(), d = q.cols(), len = block_length(radius), slots = slot_count(radius);
  out = Matrix<T>(n, slots);
  const std::size_t blocks = block_count(n, radius);
  // One query block against its three key blocks per iteration.
#pragma omp parallel for schedule(static)
  for (long b = 0; b < as_long(blocks); ++b) {
    const std::ptrdiff_t first_key = (b - 1) * static_cast<std::ptrdiff_t>(len);
    for (std::size_t i = b * len; i < std::min(n, (b + 1) * len); ++i) {
      const T* qi = q.data() + i * d;
      T* row = out.data() + i * slots;
      for (std::size_t s = 0; s < slots; ++s) {
        const std::ptrdiff_t j = first_key + static_cast<std::ptrdiff_t>(s);
        if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
        row[s] = dot(qi, k.data() + j * d, d);
      }
    }
  }
}

template <class T>
void band_apply(const Matrix<T>& w, const Matrix<T>& x, std::size_t radius, Matrix<T>& out, bool accumulate) {
  const std::size_t n = x.rows(), d = x.cols(), len = block_length(radius), slots = slot_count(radius);
  if (w.rows() != n || w.cols() != slots) throw std::invalid_argument("band_apply: weight shape mismatch");
  prepare(out, n, d, accumulate);
  const std::size_t blocks = block_count(n, radius);
#pragma omp parallel for schedule(static)
  for (long b = 0; b < as_long(blocks); ++b) {
    const std::ptrdiff_t first_key = (b - 1) * static_cast<std::ptrdiff_t>(len);
    for (std::size_t i = b * len; i < std::min(n, (b + 1) * len); ++i) {
      T* zi = out.data() + i * d;
      const T* wi = w.data() + i * slots;
      for (std::size_t s = 0; s < slots; ++s) {
        const std::ptrdiff_t j = first_key + static_cast<std::ptrdiff_t>(s);
        if (j < 0 || j >= static_cast<std::ptrdiff_t>(n) || wi[s] == T{0}) continue;
        const T* xj = x.data() + j * d;
        for (std::size_t c = 0; c < d; ++c) zi[c] += wi[s] * xj[c];
      }
    }
  }
}

template <class T>
void band_scatter(const Matrix<T>& w, const Matrix<T>& x, std::size_t radius, Matrix<T>& out, bool accumulate) {
  const std::size_t n = x.rows(), d = x.cols(), len = block_length(radius), slots = slot_count(radius);
  if (w.rows() != n || w.cols() != slots) throw std::invalid_argument("band_scatter: weight shape mismatch");
  prepare(out, n, d, accumulate);
  const std::size_t blocks = block_count(n, radius);
  // Parallel over key blocks: each key row is written by exactly one thread.
#pragma omp parallel for schedule(static)
  for (long kb = 0; kb < as_long(blocks); ++kb) {
    for (std::size_t j = kb * len; j < std::min(n, (kb + 1) * len); ++j) {
      T* oj = out.data() + j * d;
      for (long qb = std::max(0L, kb - 1); qb <= std::min(as_long(blocks) - 1, kb + 1); ++qb) {
        const auto s = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(j) - (qb - 1) * static_cast<std::ptrdiff_t>(len));
        for (std::size_t i = qb * len; i < std::min(n, (qb + 1) * len); ++i) {
          const T wv = w(i, s);
          if (wv == T{0}) continue;
          const T* xi = x.data() + i * d;
          for (std::size_t c = 0; c < d; ++c) oj[c] += wv * xi[c];
        }
      }
    }
  }
}

template <class T>
void softmax_rows(const Matrix<T>& scores, T guard, Matrix<T>& out, std::vector<std::uint8_t>* guarded) {
  const std::size_t rows = scores.rows(), cols = scores.cols();
  out = Matrix<T>(rows, cols);
  if (guarded) guarded->assign(rows, 0);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < as_long(rows); ++r) {
    const T* in = scores.data() + r * cols;
    T* o = out.data() + r * cols;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, in[c]);
    if (cols == 0 || mx <= guard) {
      if (guarded) (*guarded)[r] = 1;
      continue;
    }
    T sum = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    const T inv = T{1} / sum;
    for (std::size_t c = 0; c < cols; ++c) o[c] *= inv;
  }
}

template <class T>
void layer_norm_rows(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, T eps, Matrix<T>& out,
                     std::vector<T>& mean, std::vector<T>& rstd) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (gain.size() != d || bias.size() != d) throw std::invalid_argument("layer_norm: gain/bias width mismatch");
  out = Matrix<T>(rows, d);
  mean.assign(rows, 0);
  rstd.assign(rows, 0);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < as_long(rows); ++r) {
    const T* in = x.data() + r * d;
    T mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += in[c];
    mu /= static_cast<T>(d);
    T var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    T* o = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) o[c] = gain.data()[c] * (in[c] - mu) * inv + bias.data()[c];
    mean[r] = mu;
    rstd[r] = inv;
  }
}

template <class T>
T gelu(T x) {
  constexpr T kAlpha = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kBeta = static_cast<T>(0.044715);
  return T{0.5} * x * (T{1} + std::tanh(kAlpha * (x + kBeta * x * x * x)));
}

template <class T>
T gelu_derivative(T x) {
  constexpr T kAlpha = static_cast<T>(0.7978845608028654);
  constexpr T kBeta = static_cast<T>(0.044715);
  const T u = kAlpha * (x + kBeta * x * x * x);
  const T t = std::tanh(u);
  const T du = kAlpha * (T{1} + T{3} * kBeta * x * x);
  return T{0.5} * (T{1} + t) + T{0.5} * x * (T{1} - t * t) * du;
}

namespace serial {

template <class T>
void gemm_nn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate) {
  if (a.cols() != b.rows()) throw std::invalid_argument("gemm_nn: inner dimension mismatch");
  prepare(c, a.rows(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(p, j);
      c(i, j) += acc;
    }
}

template <class T>
void gemm_nt(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate) {
  if (a.cols() != b.cols()) throw std::invalid_argument("gemm_nt: inner dimension mismatch");
  prepare(c, a.rows(), b.rows(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < a.cols(); ++p) acc += a(i, p) * b(j, p);
      c(i, j) += acc;
    }
}

template <class T>
void gemm_tn(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c, bool accumulate) {
  if (a.rows() != b.rows()) throw std::invalid_argument("gemm_tn: inner dimension mismatch");
  prepare(c, a.cols(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < a.rows(); ++p) acc += a(p, i) * b(p, j);
      c(i, j) += acc;
    }
}

// The serial band kernels walk key positions of the radius window directly
// and translate each into its blocked slot, rather than walking blocks.
template <class T>
void band_scores(const Matrix<T>& q, const Matrix<T>& k, std::size_t radius, Matrix<T>& out) {
  if (q.rows() != k.rows() || q.cols() != k.cols()) throw std::invalid_argument("band_scores: shape mismatch");
  const std::size_t n = q.rows(), len = block_length(radius);
  out = Matrix<T>(n, slot_count(radius));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t block_start = (i / len) * len;
    const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(block_start) - static_cast<std::ptrdiff_t>(len);
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, lo);
         j < std::min<std::ptrdiff_t>(n, lo + 3 * static_cast<std::ptrdiff_t>(len)); ++j) {
      T acc = 0;
      for (std::size_t c = 0; c < q.cols(); ++c) acc += q(i, c) * k(j, c);
      out(i, j - lo) = acc;
    }
  }
}

template <class T>
void band_apply(const Matrix<T>& w, const Matrix<T>& x, std::size_t radius, Matrix<T>& out, bool accumulate) {
  const std::size_t n = x.rows(), slots = slot_count(radius);
  if (w.rows() != n || w.cols() != slots) throw std::invalid_argument("band_apply: weight shape mismatch");
  prepare(out, n, x.cols(), accumulate);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < slots; ++s) {
      const std::ptrdiff_t j = slot_key(i, s, radius);
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
      for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) += w(i, s) * x(j, c);
    }
}

template <class T>
void band_scatter(const Matrix<T>& w, const Matrix<T>& x, std::size_t radius, Matrix<T>& out, bool accumulate) {
  const std::size_t n = x.rows(), slots = slot_count(radius);
  if (w.rows() != n || w.cols() != slots) throw std::invalid_argument("band_scatter: weight shape mismatch");
  prepare(out, n, x.cols(), accumulate);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < slots; ++s) {
      const std::ptrdiff_t j = slot_key(i, s, radius);
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
      for (std::size_t c = 0; c < x.cols(); ++c) out(j, c) += w(i, s) * x(i, c);
    }
}

template <class T>
void softmax_rows(const Matrix<T>& scores, T guard, Matrix<T>& out, std::vector<std::uint8_t>* guarded) {
  out = Matrix<T>(scores.rows(), scores.cols());
  if (guarded) guarded->assign(scores.rows(), 0);
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : scores.row(r)) mx = std::max(mx, v);
    if (scores.cols() == 0 || mx <= guard) {
      if (guarded) (*guarded)[r] = 1;
      continue;
    }
    T sum = 0;
    for (T v : scores.row(r)) sum += std::exp(v - mx);
    for (std::size_t c = 0; c < scores.cols(); ++c) out(r, c) = std::exp(scores(r, c) - mx) / sum;
  }
}

}  // namespace serial

#define ETC_INSTANTIATE_KERNELS(T)                                                                          \
  template void gemm_nn<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&, bool);                          \
  template void gemm_nt<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&, bool);                          \
  template void gemm_tn<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&, bool);                          \
  template void band_scores<T>(const Matrix<T>&, const Matrix<T>&, std::size_t, Matrix<T>&);               \
  template void band_apply<T>(const Matrix<T>&, const Matrix<T>&, std::size_t, Matrix<T>&, bool);          \
  template void band_scatter<T>(const Matrix<T>&, const Matrix<T>&, std::size_t, Matrix<T>&, bool);        \
  template void softmax_rows<T>(const Matrix<T>&, T, Matrix<T>&, std::vector<std::uint8_t>*);              \
  template void layer_norm_rows<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&, T, Matrix<T>&,    \
                                   std::vector<T>&, std::vector<T>&);                                      \
  template T gelu<T>(T);                                                                                   \
  template T gelu_derivative<T>(T);                                                                        \
  template void serial::gemm_nn<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&, bool);                  \
  template void serial::gemm_nt<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&, bool);                  \
  template void serial::gemm_tn<T>(const Matrix<T>&, const Matrix<T>&, Matrix<T>&, bool);                  \
  template void serial::band_scores<T>(const Matrix<T>&, const Matrix<T>&, std::size_t, Matrix<T>&);       \
  template void serial::band_apply<T>(const Matrix<T>&, const Matrix<T>&, std::size_t, Matrix<T>&, bool);  \
  template void serial::band_scatter<T>(const Matrix<T>&, const Matrix<T>&, std::size_t, Matrix<T>&, bool); \
  template void serial::softmax_rows<T>(const Matrix<T>&, T, Matrix<T>&, std::vector<std::uint8_t>*);

ETC_INSTANTIATE_KERNELS(float)
ETC_INSTANTIATE_KERNELS(double)

}  // namespace etc::kernels
