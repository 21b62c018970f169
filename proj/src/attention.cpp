// SPDX-License-Identifier: Apache-2.0
#include "etc/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "etc/core_math.hpp"
#include "etc/kernels.hpp"

namespace etc {
namespace {

std::string dims(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

template <class G>
void expect_shape(const G& g, std::size_t rows, std::size_t cols, const char* what) {
  if (g.rows() != rows || g.cols() != cols)
    throw std::invalid_argument(std::string(what) + " has shape " + dims(g.rows(), g.cols()) + ", expected " +
                                dims(rows, cols));
}

bool band_allows(const BandMask& band, std::size_t i, std::ptrdiff_t j) {
  if (j < 0 || static_cast<std::size_t>(j) >= band.size()) return false;
  const auto uj = static_cast<std::size_t>(j);
  return band.in_band(i, uj) && band.at(i, uj) != 0;
}

template <class P>
void check_params(const AttentionParams<P>& p, std::size_t d_x) {
  if (p.heads == 0 || d_x % p.heads != 0)
    throw std::invalid_argument("attention: width " + std::to_string(d_x) + " not divisible by " +
                                std::to_string(p.heads) + " heads");
}

}  // namespace

BoolMatrix build_local_band_mask(std::size_t n_long, std::size_t radius) {
  BoolMatrix out(n_long, n_long);
  for (std::size_t i = 0; i < n_long; ++i)
    for (std::size_t j = 0; j < n_long; ++j) out(i, j) = (i > j ? i - j : j - i) <= radius;
  return out;
}

BandMask local_band(std::size_t n_long, std::size_t radius) {
  BandMask band(n_long, radius);
  for (std::size_t i = 0; i < n_long; ++i)
    for (std::size_t c = 0; c < band.width(); ++c) {
      const auto j = static_cast<std::ptrdiff_t>(i + c) - static_cast<std::ptrdiff_t>(radius);
      band.cells()(i, c) = j >= 0 && j < static_cast<std::ptrdiff_t>(n_long);
    }
  return band;
}

BoolMatrix expand_band(const BandMask& band) {
  const std::size_t n = band.size();
  BoolMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (band.in_band(i, j)) out(i, j) = band.at(i, j);
  return out;
}

BoolMatrix realized_pattern(const PieceMasks& masks) {
  const std::size_t ng = masks.g2g.rows(), nl = masks.l2l.size(), n = ng + nl;
  BoolMatrix out(n, n);
  for (std::size_t i = 0; i < ng; ++i) {
    for (std::size_t j = 0; j < ng; ++j) out(i, j) = masks.g2g(i, j);
    for (std::size_t j = 0; j < nl; ++j) out(i, ng + j) = masks.g2l(i, j);
  }
  const BoolMatrix l2l = expand_band(masks.l2l);
  for (std::size_t i = 0; i < nl; ++i) {
    for (std::size_t j = 0; j < ng; ++j) out(ng + i, j) = masks.l2g(i, j);
    for (std::size_t j = 0; j < nl; ++j) out(ng + i, ng + j) = l2l(i, j);
  }
  return out;
}

PieceMasks full_masks(std::size_t n_global, std::size_t n_long, std::size_t radius) {
  return PieceMasks{BoolMatrix(n_global, n_global, 1), BoolMatrix(n_global, n_long, 1),
                    BoolMatrix(n_long, n_global, 1), local_band(n_long, radius)};
}

PieceLabels sequence_labels(std::size_t n_global, std::size_t n_long, std::size_t radius, std::size_t clip) {
  return PieceLabels{sequence_relative_labels(n_global, n_global, 0, clip),
                     sequence_relative_labels(n_global, n_long, 0, clip),
                     sequence_relative_labels(n_long, n_global, 0, clip), band_relative_labels(n_long, radius, clip)};
}

void validate_layout(std::size_t n_global, std::size_t n_long, const PieceMasks& masks, const PieceLabels& labels) {
  expect_shape(masks.g2g, n_global, n_global, "M_g2g");
  expect_shape(masks.g2l, n_global, n_long, "M_g2l");
  expect_shape(masks.l2g, n_long, n_global, "M_l2g");
  if (masks.l2l.size() != n_long) throw std::invalid_argument("M_l2l band covers " + std::to_string(masks.l2l.size()) +
                                                              " rows, expected " + std::to_string(n_long));
  expect_shape(labels.g2g, n_global, n_global, "g2g labels");
  expect_shape(labels.g2l, n_global, n_long, "g2l labels");
  expect_shape(labels.l2g, n_long, n_global, "l2g labels");
  if (labels.l2l.size() != n_long || labels.l2l.radius() != masks.l2l.radius())
    throw std::invalid_argument("l2l labels do not match the l2l mask band");
}

template <class T>
BlockedScores<T> blocked_local_scores(const Matrix<T>& queries, const Matrix<T>& keys, std::size_t radius) {
  const std::size_t n = queries.rows();
  BlockedScores<T> out;
  out.block_length = kernels::block_length(radius);
  out.blocks = kernels::block_count(n, radius);
  const std::size_t rows = out.blocks * out.block_length, slots = kernels::slot_count(radius);
  Matrix<T> compact;
  kernels::band_scores(queries, keys, radius, compact);
  out.scores = Matrix<T>(rows, slots);
  out.valid = BoolMatrix(rows, slots);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < slots; ++s) {
      out.scores(i, s) = compact(i, s);
      const std::ptrdiff_t j = kernels::slot_key(i, s, radius);
      const auto ii = static_cast<std::ptrdiff_t>(i);
      out.valid(i, s) = j >= 0 && j < static_cast<std::ptrdiff_t>(n) && std::abs(ii - j) <= static_cast<std::ptrdiff_t>(radius);
    }
  return out;
}

std::size_t count_attention_pairs(std::size_t n_global, std::size_t n_long, std::size_t radius) {
  return n_global * (n_global + n_long) + n_long * (n_global + std::min(2 * radius + 1, n_long));
}

std::size_t count_attention_pairs(std::size_t n_global, std::size_t n_long, std::size_t radius,
                                  const PieceMasks& masks) {
  if (masks.g2g.rows() != n_global || masks.l2l.size() != n_long || masks.l2l.radius() != radius)
    throw std::invalid_argument("count_attention_pairs: masks do not match (n_g, n_l, r)");
  return count_attention_pairs(n_global, n_long, radius);
}

template <class T>
AttentionOutput<T> dense_reference_attention(const Matrix<T>& x_global, const Matrix<T>& x_long,
                                             const AttentionParams<Matrix<T>>& params, const PieceMasks& masks,
                                             const PieceLabels& labels) {
  const std::size_t ng = x_global.rows(), nl = x_long.rows(), dx = x_global.cols();
  if (x_long.cols() != dx) throw std::invalid_argument("attention: global and long widths differ");
  check_params(params, dx);
  validate_layout(ng, nl, masks, labels);
  const std::size_t heads = params.heads, dz = dx / heads;
  const T c_mask = static_cast<T>(kMaskConstant);
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dz));

  auto project = [](const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& b) {
    if (w.rows() != x.cols() || b.size() != w.cols()) throw std::invalid_argument("attention: projection shape mismatch");
    Matrix<T> out(x.rows(), w.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        T acc = 0;
        for (std::size_t p = 0; p < x.cols(); ++p) acc += x(i, p) * w(p, j);
        out(i, j) = acc + b.data()[j];
      }
    return out;
  };
  const auto& pg = params.global;
  const auto& pl = params.for_long();
  const Matrix<T> qg = project(x_global, pg.query_w, pg.query_b), kg = project(x_global, pg.key_w, pg.key_b),
                  vg = project(x_global, pg.value_w, pg.value_b);
  const Matrix<T> ql = project(x_long, pl.query_w, pl.query_b), kl = project(x_long, pl.key_w, pl.key_b),
                  vl = project(x_long, pl.value_w, pl.value_b);
  const Matrix<T>& rel = params.relative_keys;
  if (rel.cols() != dx) throw std::invalid_argument("attention: relative key width mismatch");

  // Key j of the joint axis: j < n_g is global, otherwise long j - n_g.
  auto attend = [&](const Matrix<T>& q, std::size_t i, bool query_is_global, std::size_t head, T* z) {
    const std::size_t n_keys = ng + nl;
    std::vector<T> e(n_keys);
    for (std::size_t j = 0; j < n_keys; ++j) {
      const bool key_global = j < ng;
      const std::size_t kj = key_global ? j : j - ng;
      bool allowed;
      std::int32_t label;
      if (query_is_global) {
        allowed = key_global ? masks.g2g(i, kj) : masks.g2l(i, kj);
        label = key_global ? labels.g2g(i, kj) : labels.g2l(i, kj);
      } else if (key_global) {
        allowed = masks.l2g(i, kj);
        label = labels.l2g(i, kj);
      } else {
        const bool inside = masks.l2l.in_band(i, kj);
        allowed = inside && masks.l2l.at(i, kj);
        label = inside ? labels.l2l.at(i, kj) : 0;
      }
      if (label < 0 || static_cast<std::size_t>(label) >= rel.rows())
        throw std::out_of_range("attention: label id " + std::to_string(label) + " out of range");
      const Matrix<T>& keys = key_global ? kg : kl;
      T acc = 0;
      for (std::size_t c = 0; c < dz; ++c) {
        const T key_plus_rel = keys(kj, head * dz + c) + rel(static_cast<std::size_t>(label), head * dz + c);
        acc += q(i, head * dz + c) * key_plus_rel;
      }
      e[j] = acc * inv_sqrt - (allowed ? T{0} : c_mask);
    }
    const Matrix<T> alpha = masked_softmax(Matrix<T>(1, n_keys, std::span<const T>(e)), c_mask);
    for (std::size_t j = 0; j < n_keys; ++j) {
      const Matrix<T>& values = j < ng ? vg : vl;
      const std::size_t vj = j < ng ? j : j - ng;
      for (std::size_t c = 0; c < dz; ++c) z[head * dz + c] += alpha(0, j) * values(vj, head * dz + c);
    }
  };

  Matrix<T> zg(ng, dx), zl(nl, dx);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < ng; ++i) attend(qg, i, true, h, zg.row(i).data());
    for (std::size_t i = 0; i < nl; ++i) attend(ql, i, false, h, zl.row(i).data());
  }
  return AttentionOutput<T>{project(zg, pg.output_w, pg.output_b), project(zl, pl.output_w, pl.output_b)};
}

template <class T>
AttentionVars<T> global_local_attention(const ag::Var<T>& x_global, const ag::Var<T>& x_long,
                                        const AttentionParams<ag::Var<T>>& params, const PieceMasks& masks,
                                        const PieceLabels& labels) {
  using ag::Var;
  const std::size_t ng = x_global.rows(), nl = x_long.rows(), dx = x_global.cols();
  if (x_long.cols() != dx) throw std::invalid_argument("attention: global and long widths differ");
  check_params(params, dx);
  validate_layout(ng, nl, masks, labels);
  if (params.relative_keys.cols() != dx) throw std::invalid_argument("attention: relative key width mismatch");
  const std::size_t heads = params.heads, dz = dx / heads, radius = masks.l2l.radius();
  const std::size_t slots = kernels::slot_count(radius);
  const T c_mask = static_cast<T>(kMaskConstant);
  const T guard = -c_mask / T{2};
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dz));

  // Global rows: [g2g | g2l] joint key axis.
  Matrix<T> penalty_g(ng, ng + nl);
  LabelMatrix labels_g(ng, ng + nl);
  for (std::size_t i = 0; i < ng; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      penalty_g(i, j) = masks.g2g(i, j) ? T{0} : -c_mask;
      labels_g(i, j) = labels.g2g(i, j);
    }
    for (std::size_t j = 0; j < nl; ++j) {
      penalty_g(i, ng + j) = masks.g2l(i, j) ? T{0} : -c_mask;
      labels_g(i, ng + j) = labels.g2l(i, j);
    }
  }
  // Long rows: [l2g | blocked l2l slots]. Slots outside the band, past
  // either end of the sequence, or masked by M_l2l take the penalty.
  Matrix<T> penalty_l(nl, ng + slots);
  LabelMatrix labels_l(nl, ng + slots);
  for (std::size_t i = 0; i < nl; ++i) {
    for (std::size_t j = 0; j < ng; ++j) {
      penalty_l(i, j) = masks.l2g(i, j) ? T{0} : -c_mask;
      labels_l(i, j) = labels.l2g(i, j);
    }
    for (std::size_t s = 0; s < slots; ++s) {
      const std::ptrdiff_t j = kernels::slot_key(i, s, radius);
      const bool ok = band_allows(masks.l2l, i, j);
      penalty_l(i, ng + s) = ok ? T{0} : -c_mask;
      labels_l(i, ng + s) = ok ? labels.l2l.at(i, static_cast<std::size_t>(j)) : -1;
    }
  }

  const auto& pg = params.global;
  const auto& pl = params.for_long();
  auto project = [](const Var<T>& x, const Var<T>& w, const Var<T>& b) { return ag::add_row(ag::matmul(x, w), b); };
  const Var<T> qg = project(x_global, pg.query_w, pg.query_b), kg = project(x_global, pg.key_w, pg.key_b),
               vg = project(x_global, pg.value_w, pg.value_b);
  const Var<T> ql = project(x_long, pl.query_w, pl.query_b), kl = project(x_long, pl.key_w, pl.key_b),
               vl = project(x_long, pl.value_w, pl.value_b);

  std::vector<Var<T>> heads_g, heads_l;
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dz;
    const Var<T> rel = ag::slice_cols(params.relative_keys, c0, dz);
    const Var<T> kg_h = ag::slice_cols(kg, c0, dz), vg_h = ag::slice_cols(vg, c0, dz);
    const Var<T> kl_h = ag::slice_cols(kl, c0, dz), vl_h = ag::slice_cols(vl, c0, dz);
    if (ng > 0) {
      const Var<T> q = ag::slice_cols(qg, c0, dz);
      const Var<T> parts[] = {ag::matmul_nt(q, kg_h), ag::matmul_nt(q, kl_h)};
      Var<T> s = ag::add(ag::concat_cols<T>(parts), ag::relative_bias(q, rel, labels_g));
      s = ag::add_constant(ag::scale(s, inv_sqrt), penalty_g);
      const Var<T> p = ag::softmax(s, guard);
      heads_g.push_back(ag::add(ag::matmul(ag::slice_cols(p, 0, ng), vg_h), ag::matmul(ag::slice_cols(p, ng, nl), vl_h)));
    }
    if (nl > 0) {
      const Var<T> q = ag::slice_cols(ql, c0, dz);
      const Var<T> parts[] = {ag::matmul_nt(q, kg_h), ag::band_scores(q, kl_h, radius)};
      Var<T> s = ag::add(ag::concat_cols<T>(parts), ag::relative_bias(q, rel, labels_l));
      s = ag::add_constant(ag::scale(s, inv_sqrt), penalty_l);
      const Var<T> p = ag::softmax(s, guard);
      heads_l.push_back(ag::add(ag::matmul(ag::slice_cols(p, 0, ng), vg_h),
                                ag::band_apply(ag::slice_cols(p, ng, slots), vl_h, radius)));
    }
  }

  AttentionVars<T> out;
  out.global = ng > 0 ? project(ag::concat_cols<T>(heads_g), pg.output_w, pg.output_b) : ag::constant(Matrix<T>(0, dx));
  out.long_seq = nl > 0 ? project(ag::concat_cols<T>(heads_l), pl.output_w, pl.output_b) : ag::constant(Matrix<T>(0, dx));
  return out;
}

template <class T>
AttentionOutput<T> global_local_attention(const Matrix<T>& x_global, const Matrix<T>& x_long,
                                          const AttentionParams<Matrix<T>>& params, const PieceMasks& masks,
                                          const PieceLabels& labels) {
  ag::NoGradGuard no_grad;
  auto bind = [](const Matrix<T>& m) { return ag::constant(m); };
  auto bind_proj = [&](const Projections<Matrix<T>>& p) {
    return Projections<ag::Var<T>>{bind(p.query_w), bind(p.query_b), bind(p.key_w),    bind(p.key_b),
                                   bind(p.value_w), bind(p.value_b), bind(p.output_w), bind(p.output_b)};
  };
  AttentionParams<ag::Var<T>> bound;
  bound.global = bind_proj(params.global);
  if (params.long_side) bound.long_side = bind_proj(*params.long_side);
  bound.relative_keys = bind(params.relative_keys);
  bound.heads = params.heads;
  auto vars = global_local_attention(ag::constant(x_global), ag::constant(x_long), bound, masks, labels);
  return AttentionOutput<T>{vars.global.value(), vars.long_seq.value()};
}

#define ETC_INSTANTIATE_ATTENTION(T)                                                                            \
  template BlockedScores<T> blocked_local_scores<T>(const Matrix<T>&, const Matrix<T>&, std::size_t);           \
  template AttentionOutput<T> dense_reference_attention<T>(const Matrix<T>&, const Matrix<T>&,                  \
                                                           const AttentionParams<Matrix<T>>&, const PieceMasks&, \
                                                           const PieceLabels&);                                  \
  template AttentionVars<T> global_local_attention<T>(const ag::Var<T>&, const ag::Var<T>&,                    \
                                                      const AttentionParams<ag::Var<T>>&, const PieceMasks&,    \
                                                      const PieceLabels&);                                      \
  template AttentionOutput<T> global_local_attention<T>(const Matrix<T>&, const Matrix<T>&,                     \
                                                        const AttentionParams<Matrix<T>>&, const PieceMasks&,   \
                                                        const PieceLabels&);

ETC_INSTANTIATE_ATTENTION(float)
ETC_INSTANTIATE_ATTENTION(double)

}  // namespace etc
