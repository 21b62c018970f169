// SPDX-License-Identifier: Apache-2.0
#pragma once

// Parameter layout shared by plain-value parameter sets (P = Matrix<T>) and
// their autodiff-bound counterparts (P = ag::Var<T>). Kernels are [in, out];
// biases and layer-norm vectors are 1 x width.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace etc {

enum class Sharing { kShared, kSeparate };

template <class P>
struct Projections {
  P query_w, query_b;
  P key_w, key_b;
  P value_w, value_b;
  P output_w, output_b;
};

// In shared mode only `global` exists and long rows/keys use it as well.
template <class P>
struct AttentionParams {
  Projections<P> global;
  std::optional<Projections<P>> long_side;
  P relative_keys;  // V x d_x; head h owns columns [h*d_z, (h+1)*d_z)
  std::size_t heads = 1;

  const Projections<P>& for_long() const { return long_side ? *long_side : global; }
  Sharing sharing() const { return long_side ? Sharing::kSeparate : Sharing::kShared; }
};

template <class P>
struct LayerWeights {
  AttentionParams<P> attention;
  P attention_ln_gain, attention_ln_bias;
  P ffn_in_w, ffn_in_b;
  P ffn_out_w, ffn_out_b;
  P ffn_ln_gain, ffn_ln_bias;
};

template <class P>
struct Weights {
  P token_embedding;  // vocab x d_x
  P type_embedding;   // 2 x d_x
  P embedding_ln_gain, embedding_ln_bias;
  std::vector<LayerWeights<P>> layers;
  P mlm_transform_w, mlm_transform_b;
  P mlm_ln_gain, mlm_ln_bias;
  P mlm_output_bias;  // 1 x vocab; output weights are tied to token_embedding
  P cpc_projection;   // d_x x d_x
};

namespace detail {

template <class P, class F>
void visit_projections(const std::string& prefix, Projections<P>& p, F&& f) {
  f(prefix + "self/query/kernel", p.query_w);
  f(prefix + "self/query/bias", p.query_b);
  f(prefix + "self/key/kernel", p.key_w);
  f(prefix + "self/key/bias", p.key_b);
  f(prefix + "self/value/kernel", p.value_w);
  f(prefix + "self/value/bias", p.value_b);
  f(prefix + "output/dense/kernel", p.output_w);
  f(prefix + "output/dense/bias", p.output_b);
}

}  // namespace detail

// Visits every tensor with its canonical name, in a fixed order. Duplicated
// attention sets carry `global/` and `long/` prefixes; shared sets do not.
template <class P, class F>
void for_each_parameter(Weights<P>& w, F&& f) {
  f(std::string("embeddings/word_embeddings"), w.token_embedding);
  f(std::string("embeddings/token_type_embeddings"), w.type_embedding);
  f(std::string("embeddings/LayerNorm/gamma"), w.embedding_ln_gain);
  f(std::string("embeddings/LayerNorm/beta"), w.embedding_ln_bias);
  for (std::size_t i = 0; i < w.layers.size(); ++i) {
    auto& layer = w.layers[i];
    const std::string base = "layer_" + std::to_string(i) + "/";
    if (layer.attention.long_side) {
      detail::visit_projections("global/" + base + "attention/", layer.attention.global, f);
      detail::visit_projections("long/" + base + "attention/", *layer.attention.long_side, f);
    } else {
      detail::visit_projections(base + "attention/", layer.attention.global, f);
    }
    f(base + "attention/relative_keys", layer.attention.relative_keys);
    f(base + "attention/output/LayerNorm/gamma", layer.attention_ln_gain);
    f(base + "attention/output/LayerNorm/beta", layer.attention_ln_bias);
    f(base + "intermediate/dense/kernel", layer.ffn_in_w);
    f(base + "intermediate/dense/bias", layer.ffn_in_b);
    f(base + "output/dense/kernel", layer.ffn_out_w);
    f(base + "output/dense/bias", layer.ffn_out_b);
    f(base + "output/LayerNorm/gamma", layer.ffn_ln_gain);
    f(base + "output/LayerNorm/beta", layer.ffn_ln_bias);
  }
  f(std::string("cls/predictions/transform/dense/kernel"), w.mlm_transform_w);
  f(std::string("cls/predictions/transform/dense/bias"), w.mlm_transform_b);
  f(std::string("cls/predictions/transform/LayerNorm/gamma"), w.mlm_ln_gain);
  f(std::string("cls/predictions/transform/LayerNorm/beta"), w.mlm_ln_bias);
  f(std::string("cls/predictions/output_bias"), w.mlm_output_bias);
  f(std::string("cls/cpc/projection"), w.cpc_projection);
}

template <class P, class F>
void for_each_parameter(const Weights<P>& w, F&& f) {
  for_each_parameter(const_cast<Weights<P>&>(w),
                     [&f](const std::string& name, P& p) { f(name, static_cast<const P&>(p)); });
}

// Same structure with each tensor mapped through `fn`.
template <class Q, class P, class Fn>
Weights<Q> map_weights(const Weights<P>& src, Fn&& fn) {
  auto map_proj = [&fn](const Projections<P>& p) {
    return Projections<Q>{fn(p.query_w), fn(p.query_b), fn(p.key_w),    fn(p.key_b),
                          fn(p.value_w), fn(p.value_b), fn(p.output_w), fn(p.output_b)};
  };
  Weights<Q> out;
  out.token_embedding = fn(src.token_embedding);
  out.type_embedding = fn(src.type_embedding);
  out.embedding_ln_gain = fn(src.embedding_ln_gain);
  out.embedding_ln_bias = fn(src.embedding_ln_bias);
  for (const auto& layer : src.layers) {
    LayerWeights<Q> l;
    l.attention.global = map_proj(layer.attention.global);
    if (layer.attention.long_side) l.attention.long_side = map_proj(*layer.attention.long_side);
    l.attention.relative_keys = fn(layer.attention.relative_keys);
    l.attention.heads = layer.attention.heads;
    l.attention_ln_gain = fn(layer.attention_ln_gain);
    l.attention_ln_bias = fn(layer.attention_ln_bias);
    l.ffn_in_w = fn(layer.ffn_in_w);
    l.ffn_in_b = fn(layer.ffn_in_b);
    l.ffn_out_w = fn(layer.ffn_out_w);
    l.ffn_out_b = fn(layer.ffn_out_b);
    l.ffn_ln_gain = fn(layer.ffn_ln_gain);
    l.ffn_ln_bias = fn(layer.ffn_ln_bias);
    out.layers.push_back(std::move(l));
  }
  out.mlm_transform_w = fn(src.mlm_transform_w);
  out.mlm_transform_b = fn(src.mlm_transform_b);
  out.mlm_ln_gain = fn(src.mlm_ln_gain);
  out.mlm_ln_bias = fn(src.mlm_ln_bias);
  out.mlm_output_bias = fn(src.mlm_output_bias);
  out.cpc_projection = fn(src.cpc_projection);
  return out;
}

}  // namespace etc
