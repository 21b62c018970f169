// SPDX-License-Identifier: Apache-2.0
#include "etc/verify/oracles.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace etc::verify {
namespace {

constexpr double kPi = 3.14159265358979323846;

double gelu_tanh(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / kPi) * (x + 0.044715 * x * x * x)));
}

Dense layer_norm_rows(const Dense& x, const Dense& gain, const Dense& bias, double eps) {
  Dense out(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mean = 0, var = 0;
    for (std::size_t c = 0; c < x.cols(); ++c) mean += x(i, c);
    mean /= d;
    for (std::size_t c = 0; c < x.cols(); ++c) var += (x(i, c) - mean) * (x(i, c) - mean);
    var /= d;
    for (std::size_t c = 0; c < x.cols(); ++c)
      out(i, c) = gain.data()[c] * (x(i, c) - mean) / std::sqrt(var + eps) + bias.data()[c];
  }
  return out;
}

// Softmax over the allowed entries of one row; all-masked rows give zeros.
std::vector<double> allowed_softmax(const std::vector<double>& scores, const std::vector<bool>& allowed) {
  std::vector<double> p(scores.size(), 0.0);
  double mx = -INFINITY;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (allowed[j]) mx = std::max(mx, scores[j]);
  if (mx == -INFINITY) return p;
  double z = 0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (allowed[j]) z += (p[j] = std::exp(scores[j] - mx));
  for (double& v : p) v /= z;
  return p;
}

Dense add(const Dense& a, const Dense& b) {
  Dense out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Dense fetch(const Checkpoint& c, const std::string& name) { return to_double(c.at(name)); }

}  // namespace

Dense to_double(const Matrix<float>& m) { return cast<double>(m); }
Dense to_double(const Matrix<double>& m) { return m; }

Dense affine(const Dense& x, const Dense& w, const Dense& b) {
  if (x.cols() != w.rows() || b.size() != w.cols()) throw std::invalid_argument("affine: shape mismatch");
  Dense out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      double acc = b.data()[j];
      for (std::size_t p = 0; p < x.cols(); ++p) acc += x(i, p) * w(p, j);
      out(i, j) = acc;
    }
  return out;
}

NaiveAttentionOutput naive_global_local_attention(const Dense& x_global, const Dense& x_long,
                                                  const AttentionParams<Dense>& params, const PieceMasks& masks,
                                                  const PieceLabels& labels) {
  const std::size_t ng = x_global.rows(), nl = x_long.rows();
  const std::size_t dx = ng ? x_global.cols() : x_long.cols();
  const std::size_t heads = params.heads, dz = dx / heads;
  const auto& pg = params.global;
  const auto& pl = params.for_long();
  const Dense qg = affine(x_global, pg.query_w, pg.query_b), kg = affine(x_global, pg.key_w, pg.key_b),
              vg = affine(x_global, pg.value_w, pg.value_b);
  const Dense ql = affine(x_long, pl.query_w, pl.query_b), kl = affine(x_long, pl.key_w, pl.key_b),
              vl = affine(x_long, pl.value_w, pl.value_b);
  const Dense& rel = params.relative_keys;
  const BoolMatrix l2l = expand_band(masks.l2l);

  // Query row q over keys [global 0..ng) then [long 0..nl).
  auto row = [&](const Dense& q, std::size_t i, bool global_query, Dense& z) {
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> scores(ng + nl);
      std::vector<bool> allowed(ng + nl);
      for (std::size_t j = 0; j < ng + nl; ++j) {
        const bool gk = j < ng;
        const std::size_t kj = gk ? j : j - ng;
        std::int32_t label = 0;
        if (global_query) {
          allowed[j] = gk ? masks.g2g(i, kj) : masks.g2l(i, kj);
          label = gk ? labels.g2g(i, kj) : labels.g2l(i, kj);
        } else if (gk) {
          allowed[j] = masks.l2g(i, kj);
          label = labels.l2g(i, kj);
        } else {
          allowed[j] = l2l(i, kj);
          label = allowed[j] ? labels.l2l.at(i, kj) : 0;
        }
        if (!allowed[j]) continue;
        // The pair's own key vector k_j + a_label.
        std::vector<double> key(dz);
        for (std::size_t c = 0; c < dz; ++c)
          key[c] = (gk ? kg : kl)(kj, h * dz + c) + rel(static_cast<std::size_t>(label), h * dz + c);
        double s = 0;
        for (std::size_t c = 0; c < dz; ++c) s += q(i, h * dz + c) * key[c];
        scores[j] = s / std::sqrt(static_cast<double>(dz));
      }
      const auto p = allowed_softmax(scores, allowed);
      for (std::size_t j = 0; j < ng + nl; ++j) {
        if (p[j] == 0) continue;
        const Dense& v = j < ng ? vg : vl;
        const std::size_t vj = j < ng ? j : j - ng;
        for (std::size_t c = 0; c < dz; ++c) z(i, h * dz + c) += p[j] * v(vj, h * dz + c);
      }
    }
  };
  Dense zg(ng, dx), zl(nl, dx);
  for (std::size_t i = 0; i < ng; ++i) row(qg, i, true, zg);
  for (std::size_t i = 0; i < nl; ++i) row(ql, i, false, zl);
  return {affine(zg, pg.output_w, pg.output_b), affine(zl, pl.output_w, pl.output_b)};
}

Dense standard_attention(const Dense& x, const Projections<Dense>& p, std::size_t heads) {
  const std::size_t n = x.rows(), dx = x.cols(), dz = dx / heads;
  const Dense q = affine(x, p.query_w, p.query_b), k = affine(x, p.key_w, p.key_b), v = affine(x, p.value_w, p.value_b);
  Dense z(n, dx);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t c = 0; c < dz; ++c) acc += q(i, h * dz + c) * k(j, h * dz + c);
        s[j] = acc / std::sqrt(static_cast<double>(dz));
        mx = std::max(mx, s[j]);
      }
      double zsum = 0;
      for (double& e : s) zsum += (e = std::exp(e - mx));
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < dz; ++c) z(i, h * dz + c) += s[j] / zsum * v(j, h * dz + c);
    }
  return affine(z, p.output_w, p.output_b);
}

BoolMatrix star_transformer_pattern(std::size_t n) {
  BoolMatrix out(n + 1, n + 1);
  for (std::size_t j = 0; j <= n; ++j) out(0, j) = out(j, 0) = 1;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i == j || i + 1 == j || j + 1 == i) out(1 + i, 1 + j) = 1;
  return out;
}

Dense per_pair_relative_bias(const Dense& queries, const LabelMatrix& labels, const Dense& vectors, std::size_t head,
                             std::size_t heads) {
  const std::size_t dz = vectors.cols() / heads;
  Dense out(labels.rows(), labels.cols());
  for (std::size_t i = 0; i < labels.rows(); ++i)
    for (std::size_t j = 0; j < labels.cols(); ++j) {
      const auto l = static_cast<std::size_t>(labels(i, j));
      std::vector<double> a(dz);
      for (std::size_t c = 0; c < dz; ++c) a[c] = vectors(l, head * dz + c);
      double s = 0;
      for (std::size_t c = 0; c < dz; ++c) s += queries(i, c) * a[c];
      out(i, j) = s;
    }
  return out;
}

double cross_entropy_oracle(const Dense& logits, std::span<const std::int32_t> targets) {
  double total = 0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    double z = 0;
    for (std::size_t j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j));
    total += -std::log(std::exp(logits(i, static_cast<std::size_t>(targets[i]))) / z);
  }
  return total / static_cast<double>(logits.rows());
}

double nce_oracle(const Dense& g1, const Dense& g2, const Dense& projection) {
  const std::size_t b = g1.rows(), d = g1.cols();
  Dense scores(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) {
        double proj = 0;
        for (std::size_t p = 0; p < d; ++p) proj += g1(i, p) * projection(p, c);
        s += proj * g2(j, c);
      }
      scores(i, j) = s / std::sqrt(static_cast<double>(d));
    }
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < b; ++j) z += std::exp(scores(i, j));
    total -= std::log(std::exp(scores(i, i)) / z);
  }
  return total / static_cast<double>(b);
}

Checkpoint random_bert_checkpoint(const ModelConfig& config, std::size_t max_positions, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 0.5f);
  auto random = [&](std::size_t r, std::size_t c) {
    Matrix<float> m(r, c);
    for (float& v : m.values()) v = normal(rng);
    return m;
  };
  auto around_one = [&](std::size_t c) {
    Matrix<float> m = random(1, c);
    for (float& v : m.values()) v = 1.0f + 0.1f * v;
    return m;
  };
  const std::size_t d = config.hidden, f = config.ffn_width();
  Checkpoint c;
  c.add("bert/embeddings/word_embeddings", random(config.vocab_size, d), true);
  c.add("bert/embeddings/position_embeddings", random(max_positions, d), true);
  c.add("bert/embeddings/token_type_embeddings", random(config.type_vocab_size, d), true);
  c.add("bert/embeddings/LayerNorm/gamma", around_one(d));
  c.add("bert/embeddings/LayerNorm/beta", random(1, d));
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "bert/encoder/layer_" + std::to_string(l) + "/";
    for (const char* m : {"query", "key", "value"}) {
      c.add(p + "attention/self/" + m + "/kernel", random(d, d), true);
      c.add(p + "attention/self/" + m + "/bias", random(1, d));
    }
    c.add(p + "attention/output/dense/kernel", random(d, d), true);
    c.add(p + "attention/output/dense/bias", random(1, d));
    c.add(p + "attention/output/LayerNorm/gamma", around_one(d));
    c.add(p + "attention/output/LayerNorm/beta", random(1, d));
    c.add(p + "intermediate/dense/kernel", random(d, f), true);
    c.add(p + "intermediate/dense/bias", random(1, f));
    c.add(p + "output/dense/kernel", random(f, d), true);
    c.add(p + "output/dense/bias", random(1, d));
    c.add(p + "output/LayerNorm/gamma", around_one(d));
    c.add(p + "output/LayerNorm/beta", random(1, d));
  }
  c.add("bert/pooler/dense/kernel", random(d, d), true);
  c.add("bert/pooler/dense/bias", random(1, d));
  c.add("cls/predictions/transform/dense/kernel", random(d, d), true);
  c.add("cls/predictions/transform/dense/bias", random(1, d));
  c.add("cls/predictions/transform/LayerNorm/gamma", around_one(d));
  c.add("cls/predictions/transform/LayerNorm/beta", random(1, d));
  c.add("cls/predictions/output_bias", random(1, config.vocab_size));
  c.add("cls/seq_relationship/output_weights", random(2, d), true);
  c.add("cls/seq_relationship/output_bias", random(1, 2));
  return c;
}

Dense bert_reference_forward(const Checkpoint& src, std::span<const std::int32_t> ids,
                             std::span<const std::int32_t> types, std::size_t heads, std::size_t layers,
                             double eps) {
  const Dense words = fetch(src, "bert/embeddings/word_embeddings");
  const Dense positions = fetch(src, "bert/embeddings/position_embeddings");
  const Dense type_table = fetch(src, "bert/embeddings/token_type_embeddings");
  const std::size_t n = ids.size(), d = words.cols();
  Dense x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      x(i, c) = words(static_cast<std::size_t>(ids[i]), c) + positions(i, c) +
                type_table(static_cast<std::size_t>(types[i]), c);
  x = layer_norm_rows(x, fetch(src, "bert/embeddings/LayerNorm/gamma"), fetch(src, "bert/embeddings/LayerNorm/beta"),
                      eps);
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string p = "bert/encoder/layer_" + std::to_string(l) + "/";
    Projections<Dense> proj;
    proj.query_w = fetch(src, p + "attention/self/query/kernel");
    proj.query_b = fetch(src, p + "attention/self/query/bias");
    proj.key_w = fetch(src, p + "attention/self/key/kernel");
    proj.key_b = fetch(src, p + "attention/self/key/bias");
    proj.value_w = fetch(src, p + "attention/self/value/kernel");
    proj.value_b = fetch(src, p + "attention/self/value/bias");
    proj.output_w = fetch(src, p + "attention/output/dense/kernel");
    proj.output_b = fetch(src, p + "attention/output/dense/bias");
    const Dense y = layer_norm_rows(add(x, standard_attention(x, proj, heads)),
                                    fetch(src, p + "attention/output/LayerNorm/gamma"),
                                    fetch(src, p + "attention/output/LayerNorm/beta"), eps);
    Dense inner = affine(y, fetch(src, p + "intermediate/dense/kernel"), fetch(src, p + "intermediate/dense/bias"));
    for (double& v : inner.values()) v = gelu_tanh(v);
    const Dense ffn = affine(inner, fetch(src, p + "output/dense/kernel"), fetch(src, p + "output/dense/bias"));
    x = layer_norm_rows(add(y, ffn), fetch(src, p + "output/LayerNorm/gamma"), fetch(src, p + "output/LayerNorm/beta"),
                        eps);
  }
  return x;
}

}  // namespace etc::verify
