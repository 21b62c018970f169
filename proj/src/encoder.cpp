// SPDX-License-Identifier: Apache-2.0
#include "etc/encoder.hpp"

#include <array>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace etc {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void check_ids(const std::vector<std::int32_t>& ids, std::size_t limit, const char* what) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= limit)
      throw std::invalid_argument(std::string(what) + " " + std::to_string(ids[i]) + " at position " +
                                  std::to_string(i) + " is out of range");
}

template <class G>
void check_labels(const G& grid, std::size_t vocab, const char* what) {
  for (std::int32_t v : grid.values())
    if (v < 0 || static_cast<std::size_t>(v) >= vocab)
      throw std::invalid_argument(std::string(what) + " label " + std::to_string(v) + " outside the vocabulary");
}

template <class T>
class Initializer {
 public:
  Initializer(std::uint64_t seed, double stddev) : rng_(seed), normal_(0.0, 1.0), std_(stddev) {}

  Matrix<T> normal(std::size_t rows, std::size_t cols) {
    Matrix<T> m(rows, cols);
    for (T& v : m.values()) {
      double z = normal_(rng_);
      while (std::abs(z) > 2.0) z = normal_(rng_);
      v = static_cast<T>(z * std_);
    }
    return m;
  }
  static Matrix<T> zeros(std::size_t cols) { return Matrix<T>(1, cols); }
  static Matrix<T> ones(std::size_t cols) { return Matrix<T>(1, cols, T{1}); }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
  double std_;
};

template <class T>
Projections<Matrix<T>> init_projections(Initializer<T>& init, std::size_t d) {
  Projections<Matrix<T>> p;
  p.query_w = init.normal(d, d);
  p.query_b = Initializer<T>::zeros(d);
  p.key_w = init.normal(d, d);
  p.key_b = Initializer<T>::zeros(d);
  p.value_w = init.normal(d, d);
  p.value_b = Initializer<T>::zeros(d);
  p.output_w = init.normal(d, d);
  p.output_b = Initializer<T>::zeros(d);
  return p;
}

void expect(const std::string& name, std::size_t rows, std::size_t cols, std::size_t want_rows,
            std::size_t want_cols) {
  if (rows != want_rows || cols != want_cols)
    throw std::invalid_argument("parameter " + name + " has shape [" + std::to_string(rows) + ", " +
                                std::to_string(cols) + "], expected [" + std::to_string(want_rows) + ", " +
                                std::to_string(want_cols) + "]");
}

template <class T>
void expect_projections(const std::string& prefix, const Projections<Matrix<T>>& p, std::size_t d) {
  expect(prefix + "query/kernel", p.query_w.rows(), p.query_w.cols(), d, d);
  expect(prefix + "query/bias", p.query_b.rows(), p.query_b.cols(), 1, d);
  expect(prefix + "key/kernel", p.key_w.rows(), p.key_w.cols(), d, d);
  expect(prefix + "key/bias", p.key_b.rows(), p.key_b.cols(), 1, d);
  expect(prefix + "value/kernel", p.value_w.rows(), p.value_w.cols(), d, d);
  expect(prefix + "value/bias", p.value_b.rows(), p.value_b.cols(), 1, d);
  expect(prefix + "output/kernel", p.output_w.rows(), p.output_w.cols(), d, d);
  expect(prefix + "output/bias", p.output_b.rows(), p.output_b.cols(), 1, d);
}

template <class T>
ag::Var<T> feed_forward(const ag::Var<T>& x, const LayerWeights<ag::Var<T>>& layer) {
  auto inner = ag::gelu(ag::add_row(ag::matmul(x, layer.ffn_in_w), layer.ffn_in_b));
  return ag::add_row(ag::matmul(inner, layer.ffn_out_w), layer.ffn_out_b);
}

}  // namespace

void EtcInput::validate(const ModelConfig& config) const {
  const std::size_t ng = n_global(), nl = n_long();
  require(global_types.size() == ng, "global_types has " + std::to_string(global_types.size()) + " entries, expected " +
                                         std::to_string(ng));
  require(long_types.size() == nl,
          "long_types has " + std::to_string(long_types.size()) + " entries, expected " + std::to_string(nl));
  require(ng <= config.max_global,
          "global input length " + std::to_string(ng) + " exceeds max_global " + std::to_string(config.max_global));
  require(nl <= config.max_long,
          "long input length " + std::to_string(nl) + " exceeds max_long " + std::to_string(config.max_long));
  check_ids(global_ids, config.vocab_size, "global token id");
  check_ids(long_ids, config.vocab_size, "long token id");
  check_ids(global_types, config.type_vocab_size, "global type id");
  check_ids(long_types, config.type_vocab_size, "long type id");
  validate_layout(ng, nl, masks, labels);
  require(masks.l2l.radius() == config.local_radius, "l2l band radius " + std::to_string(masks.l2l.radius()) +
                                                         " does not match local_radius " +
                                                         std::to_string(config.local_radius));
  const std::size_t vocab = config.relative_vocab().size();
  check_labels(labels.g2g, vocab, "g2g");
  check_labels(labels.g2l, vocab, "g2l");
  check_labels(labels.l2g, vocab, "l2g");
  check_labels(labels.l2l.cells(), vocab, "l2l");
  require(word_starts.empty() || word_starts.size() == nl, "word_starts must cover every long token");
  for (const auto& s : sentences)
    require(s.global_row < ng && s.begin <= s.end && s.end <= nl, "sentence span out of range");
}

template <class T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.hidden, f = config.ffn_width();
  Initializer<T> init(seed, config.init_std);
  ParameterSet<T> p;
  p.token_embedding = init.normal(config.vocab_size, d);
  p.type_embedding = init.normal(config.type_vocab_size, d);
  p.embedding_ln_gain = Initializer<T>::ones(d);
  p.embedding_ln_bias = Initializer<T>::zeros(d);
  const std::size_t rel = config.relative_vocab().size();
  for (std::size_t l = 0; l < config.layers; ++l) {
    LayerWeights<Matrix<T>> layer;
    layer.attention.heads = config.heads;
    layer.attention.global = init_projections(init, d);
    if (config.sharing == Sharing::kSeparate) layer.attention.long_side = init_projections(init, d);
    layer.attention.relative_keys = init.normal(rel, d);
    layer.attention_ln_gain = Initializer<T>::ones(d);
    layer.attention_ln_bias = Initializer<T>::zeros(d);
    layer.ffn_in_w = init.normal(d, f);
    layer.ffn_in_b = Initializer<T>::zeros(f);
    layer.ffn_out_w = init.normal(f, d);
    layer.ffn_out_b = Initializer<T>::zeros(d);
    layer.ffn_ln_gain = Initializer<T>::ones(d);
    layer.ffn_ln_bias = Initializer<T>::zeros(d);
    p.layers.push_back(std::move(layer));
  }
  p.mlm_transform_w = init.normal(d, d);
  p.mlm_transform_b = Initializer<T>::zeros(d);
  p.mlm_ln_gain = Initializer<T>::ones(d);
  p.mlm_ln_bias = Initializer<T>::zeros(d);
  p.mlm_output_bias = Initializer<T>::zeros(config.vocab_size);
  p.cpc_projection = init.normal(d, d);
  return p;
}

template <class T>
void check_parameter_shapes(const ParameterSet<T>& p, const ModelConfig& config) {
  const std::size_t d = config.hidden, f = config.ffn_width(), rel = config.relative_vocab().size();
  expect("embeddings/word_embeddings", p.token_embedding.rows(), p.token_embedding.cols(), config.vocab_size, d);
  expect("embeddings/token_type_embeddings", p.type_embedding.rows(), p.type_embedding.cols(),
         config.type_vocab_size, d);
  expect("embeddings/LayerNorm/gamma", p.embedding_ln_gain.rows(), p.embedding_ln_gain.cols(), 1, d);
  expect("embeddings/LayerNorm/beta", p.embedding_ln_bias.rows(), p.embedding_ln_bias.cols(), 1, d);
  if (p.layers.size() != config.layers)
    throw std::invalid_argument("parameter set has " + std::to_string(p.layers.size()) + " layers, expected " +
                                std::to_string(config.layers));
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& l = p.layers[i];
    const std::string base = "layer_" + std::to_string(i) + "/";
    if ((config.sharing == Sharing::kSeparate) != l.attention.long_side.has_value())
      throw std::invalid_argument(base + "attention: sharing mode does not match the config");
    if (l.attention.heads != config.heads) throw std::invalid_argument(base + "attention: head count mismatch");
    expect_projections(base + "attention/", l.attention.global, d);
    if (l.attention.long_side) expect_projections("long/" + base + "attention/", *l.attention.long_side, d);
    expect(base + "attention/relative_keys", l.attention.relative_keys.rows(), l.attention.relative_keys.cols(), rel,
           d);
    expect(base + "attention/output/LayerNorm/gamma", l.attention_ln_gain.rows(), l.attention_ln_gain.cols(), 1, d);
    expect(base + "attention/output/LayerNorm/beta", l.attention_ln_bias.rows(), l.attention_ln_bias.cols(), 1, d);
    expect(base + "intermediate/dense/kernel", l.ffn_in_w.rows(), l.ffn_in_w.cols(), d, f);
    expect(base + "intermediate/dense/bias", l.ffn_in_b.rows(), l.ffn_in_b.cols(), 1, f);
    expect(base + "output/dense/kernel", l.ffn_out_w.rows(), l.ffn_out_w.cols(), f, d);
    expect(base + "output/dense/bias", l.ffn_out_b.rows(), l.ffn_out_b.cols(), 1, d);
    expect(base + "output/LayerNorm/gamma", l.ffn_ln_gain.rows(), l.ffn_ln_gain.cols(), 1, d);
    expect(base + "output/LayerNorm/beta", l.ffn_ln_bias.rows(), l.ffn_ln_bias.cols(), 1, d);
  }
  expect("cls/predictions/transform/dense/kernel", p.mlm_transform_w.rows(), p.mlm_transform_w.cols(), d, d);
  expect("cls/predictions/transform/dense/bias", p.mlm_transform_b.rows(), p.mlm_transform_b.cols(), 1, d);
  expect("cls/predictions/transform/LayerNorm/gamma", p.mlm_ln_gain.rows(), p.mlm_ln_gain.cols(), 1, d);
  expect("cls/predictions/transform/LayerNorm/beta", p.mlm_ln_bias.rows(), p.mlm_ln_bias.cols(), 1, d);
  expect("cls/predictions/output_bias", p.mlm_output_bias.rows(), p.mlm_output_bias.cols(), 1, config.vocab_size);
  expect("cls/cpc/projection", p.cpc_projection.rows(), p.cpc_projection.cols(), d, d);
}

template <class T>
BoundWeights<T> bind(const ParameterSet<T>& params, bool requires_grad) {
  return map_weights<ag::Var<T>>(params, [requires_grad](const Matrix<T>& m) { return ag::Var<T>(m, requires_grad); });
}

template <class T>
ParameterSet<T> values_of(const BoundWeights<T>& bound) {
  return map_weights<Matrix<T>>(bound, [](const ag::Var<T>& v) { return v.value(); });
}

template <class T>
Encoded<T> embed(const EtcInput& input, const BoundWeights<T>& w) {
  auto side = [&](const std::vector<std::int32_t>& ids, const std::vector<std::int32_t>& types) {
    if (ids.size() != types.size()) throw std::invalid_argument("embed: ids and types differ in length");
    return ag::add(ag::gather_rows(w.token_embedding, std::span<const std::int32_t>(ids)),
                   ag::gather_rows(w.type_embedding, std::span<const std::int32_t>(types)));
  };
  return {side(input.global_ids, input.global_types), side(input.long_ids, input.long_types)};
}

template <class T>
Encoded<T> encoder_layer(const Encoded<T>& hidden, const LayerWeights<ag::Var<T>>& layer, const EtcInput& input,
                         T eps) {
  const std::size_t ng = hidden.global.rows(), nl = hidden.long_seq.rows();
  auto attn = global_local_attention(hidden.global, hidden.long_seq, layer.attention, input.masks, input.labels);
  // Position-wise parts run on both sequences stacked as one matrix.
  const std::array<ag::Var<T>, 2> xs{hidden.global, hidden.long_seq};
  const std::array<ag::Var<T>, 2> as{attn.global, attn.long_seq};
  auto x = ag::concat_rows<T>(xs);
  auto a = ag::concat_rows<T>(as);
  auto y = ag::layer_norm(ag::add(x, a), layer.attention_ln_gain, layer.attention_ln_bias, eps);
  auto z = ag::layer_norm(ag::add(y, feed_forward(y, layer)), layer.ffn_ln_gain, layer.ffn_ln_bias, eps);
  return {ag::slice_rows(z, 0, ng), ag::slice_rows(z, ng, nl)};
}

template <class T>
Encoded<T> encode_embedded(const Encoded<T>& embedded, const EtcInput& input, const BoundWeights<T>& w,
                           const ModelConfig& config) {
  const T eps = static_cast<T>(config.layer_norm_eps);
  const std::size_t ng = embedded.global.rows(), nl = embedded.long_seq.rows();
  const std::array<ag::Var<T>, 2> parts{embedded.global, embedded.long_seq};
  auto normed = ag::layer_norm(ag::concat_rows<T>(parts), w.embedding_ln_gain, w.embedding_ln_bias, eps);
  Encoded<T> h{ag::slice_rows(normed, 0, ng), ag::slice_rows(normed, ng, nl)};
  for (const auto& layer : w.layers) h = encoder_layer(h, layer, input, eps);
  return h;
}

template <class T>
Encoded<T> encode(const EtcInput& input, const BoundWeights<T>& w, const ModelConfig& config) {
  input.validate(config);
  return encode_embedded(embed(input, w), input, w, config);
}

template <class T>
EncodedValues<T> encode(const EtcInput& input, const ParameterSet<T>& params, const ModelConfig& config) {
  ag::NoGradGuard guard;
  auto out = encode(input, bind(params, false), config);
  return {out.global.value(), out.long_seq.value()};
}

#define ETC_INSTANTIATE(T)                                                                                        \
  template ParameterSet<T> init_parameters<T>(const ModelConfig&, std::uint64_t);                                \
  template void check_parameter_shapes<T>(const ParameterSet<T>&, const ModelConfig&);                           \
  template BoundWeights<T> bind<T>(const ParameterSet<T>&, bool);                                                \
  template ParameterSet<T> values_of<T>(const BoundWeights<T>&);                                                 \
  template Encoded<T> embed<T>(const EtcInput&, const BoundWeights<T>&);                                         \
  template Encoded<T> encoder_layer<T>(const Encoded<T>&, const LayerWeights<ag::Var<T>>&, const EtcInput&, T); \
  template Encoded<T> encode_embedded<T>(const Encoded<T>&, const EtcInput&, const BoundWeights<T>&,             \
                                         const ModelConfig&);                                                    \
  template Encoded<T> encode<T>(const EtcInput&, const BoundWeights<T>&, const ModelConfig&);                    \
  template EncodedValues<T> encode<T>(const EtcInput&, const ParameterSet<T>&, const ModelConfig&);

ETC_INSTANTIATE(float)
ETC_INSTANTIATE(double)

#undef ETC_INSTANTIATE

}  // namespace etc
