// SPDX-License-Identifier: Apache-2.0
#include "etc/pretraining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace etc {

std::size_t MaskedBatch::cpc_count() const {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.cpc.size();
  return n;
}

std::size_t MaskedBatch::mlm_count() const {
  std::size_t n = 0;
  for (const auto& e : examples) n += e.mlm_targets.size();
  return n;
}

std::vector<std::size_t> select_cpc_sentences(std::span<const SentenceSpan> sentences, double rate, Rng& rng) {
  if (rate < 0 || rate > 1) throw std::invalid_argument("cpc rate must lie in [0, 1]");
  std::bernoulli_distribution pick(rate);
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < sentences.size(); ++i)
    if (pick(rng)) chosen.push_back(i);
  return chosen;
}

WordMaskResult whole_word_mask(std::span<const std::int32_t> ids, std::span<const std::uint8_t> word_starts,
                               double rate, Rng& rng, const ModelConfig& config,
                               std::span<const std::uint8_t> eligible) {
  if (rate < 0 || rate > 1) throw std::invalid_argument("mlm rate must lie in [0, 1]");
  if (!word_starts.empty() && word_starts.size() != ids.size())
    throw std::invalid_argument("word_starts must cover every token");
  if (!eligible.empty() && eligible.size() != ids.size())
    throw std::invalid_argument("eligibility flags must cover every token");
  WordMaskResult out{std::vector<std::int32_t>(ids.begin(), ids.end()), {}};
  std::bernoulli_distribution pick(rate);
  std::uniform_real_distribution<double> action(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> random_id(kFirstRegularId,
                                                        static_cast<std::int32_t>(config.vocab_size) - 1);
  std::size_t begin = 0;
  while (begin < ids.size()) {
    std::size_t end = begin + 1;
    while (end < ids.size() && !word_starts.empty() && !word_starts[end]) ++end;
    bool allowed = true;
    if (!eligible.empty())
      for (std::size_t i = begin; i < end; ++i) allowed = allowed && eligible[i];
    if (allowed && pick(rng)) {
      for (std::size_t i = begin; i < end; ++i) {
        out.targets.push_back({i, ids[i]});
        const double u = action(rng);
        if (u < 0.8)
          out.ids[i] = config.reserved.mask;
        else if (u < 0.9)
          out.ids[i] = random_id(rng);
      }
    }
    begin = end;
  }
  return out;
}

namespace {

MaskedExample mask_selected(const EtcInput& input, const std::vector<std::size_t>& selected,
                            const TrainConfig& train, const ModelConfig& config, Rng& rng) {
  MaskedExample ex;
  ex.input = input;
  std::vector<std::uint8_t> eligible(input.n_long(), 1);
  for (std::size_t idx : selected) {
    const SentenceSpan& s = input.sentences.at(idx);
    CpcSentence c;
    c.global_row = s.global_row;
    c.begin = s.begin;
    c.end = s.end;
    c.original.ids.assign(input.long_ids.begin() + static_cast<std::ptrdiff_t>(s.begin),
                          input.long_ids.begin() + static_cast<std::ptrdiff_t>(s.end));
    if (!input.word_starts.empty())
      c.original.word_starts.assign(input.word_starts.begin() + static_cast<std::ptrdiff_t>(s.begin),
                                    input.word_starts.begin() + static_cast<std::ptrdiff_t>(s.end));
    for (std::size_t t = s.begin; t < s.end; ++t) {
      ex.input.long_ids[t] = config.reserved.mask;
      eligible[t] = 0;
    }
    ex.cpc.push_back(std::move(c));
  }
  auto masked = whole_word_mask(ex.input.long_ids, input.word_starts, train.mlm_rate, rng, config, eligible);
  ex.input.long_ids = std::move(masked.ids);
  ex.mlm_targets = std::move(masked.targets);
  return ex;
}

template <class T>
ag::Var<T> stack(const std::vector<ag::Var<T>>& parts) {
  return ag::concat_rows<T>(std::span<const ag::Var<T>>(parts));
}

std::vector<std::int32_t> as_ids(const std::vector<std::size_t>& rows) {
  std::vector<std::int32_t> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(static_cast<std::int32_t>(r));
  return out;
}

}  // namespace

MaskedExample mask_example(const EtcInput& input, const TrainConfig& train, const ModelConfig& config, Rng& rng) {
  const auto selected = select_cpc_sentences(input.sentences, train.cpc_rate, rng);
  return mask_selected(input, selected, train, config, rng);
}

template <class T>
ag::Var<T> mlm_logits(const ag::Var<T>& hidden, const BoundWeights<T>& w, T eps) {
  auto h = ag::gelu(ag::add_row(ag::matmul(hidden, w.mlm_transform_w), w.mlm_transform_b));
  h = ag::layer_norm(h, w.mlm_ln_gain, w.mlm_ln_bias, eps);
  return ag::add_row(ag::matmul_nt(h, w.token_embedding), w.mlm_output_bias);
}

template <class T>
MlmLoss<T> mlm_loss(const ag::Var<T>& long_hidden, std::span<const MlmTarget> targets, const BoundWeights<T>& w,
                    T eps) {
  if (targets.empty()) return {ag::constant(Matrix<T>(1, 1)), true};
  std::vector<std::int32_t> rows, labels;
  for (const auto& t : targets) {
    if (t.position >= long_hidden.rows()) throw std::out_of_range("mlm target position outside the long input");
    rows.push_back(static_cast<std::int32_t>(t.position));
    labels.push_back(t.original);
  }
  auto logits = mlm_logits(ag::gather_rows(long_hidden, std::span<const std::int32_t>(rows)), w, eps);
  return {ag::cross_entropy(logits, std::span<const std::int32_t>(labels)), false};
}

template <class T>
ag::Var<T> cpc_scores(const ag::Var<T>& g1, const ag::Var<T>& g2, const ag::Var<T>& projection) {
  if (g1.rows() != g2.rows() || g1.cols() != g2.cols())
    throw std::invalid_argument("cpc: g1 and g2 must have the same shape");
  const T inv = T{1} / std::sqrt(static_cast<T>(g1.cols()));
  return ag::scale(ag::matmul_nt(ag::matmul(g1, projection), g2), inv);
}

template <class T>
ag::Var<T> cpc_nce_loss(const ag::Var<T>& g1, const ag::Var<T>& g2, const ag::Var<T>& projection) {
  if (g1.rows() < 2) throw std::invalid_argument("need negatives");
  std::vector<std::int32_t> targets(g1.rows());
  std::iota(targets.begin(), targets.end(), 0);
  return ag::cross_entropy(cpc_scores(g1, g2, projection), std::span<const std::int32_t>(targets));
}

template <class T>
ag::Var<T> encode_isolated_sentences(const std::vector<Sentence>& sentences, const BoundWeights<T>& w,
                                     const ModelConfig& config) {
  if (sentences.empty()) throw std::invalid_argument("no sentences to encode");
  std::vector<EtcInput> inputs;
  for (const auto& s : sentences) inputs.push_back(build_flat_input({s}, config));
  std::vector<PackedSlot> placement;
  const auto packed = pack_inputs(inputs, config, &placement);
  std::vector<ag::Var<T>> globals;
  std::vector<std::size_t> bin_offset;
  std::size_t offset = 0;
  for (const auto& in : packed) {
    globals.push_back(encode(in, w, config).global);
    bin_offset.push_back(offset);
    offset += in.n_global();
  }
  std::vector<std::size_t> rows;
  for (const auto& slot : placement)
    rows.push_back(bin_offset[slot.bin] + packed[slot.bin].documents[slot.document].global_begin);
  const auto ids = as_ids(rows);
  return ag::gather_rows(stack(globals), std::span<const std::int32_t>(ids));
}

template <class T>
void adam_update(BoundWeights<T>& weights, AdamState<T>& state, const TrainConfig& train) {
  std::vector<ag::Var<T>*> params;
  for_each_parameter(weights, [&](const std::string&, ag::Var<T>& v) { params.push_back(&v); });
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("optimizer state does not match parameters");
  ++state.step;
  if (train.learning_rate == 0) return;
  const double b1 = train.beta1, b2 = train.beta2;
  const double t = static_cast<double>(state.step);
  const T step_size = static_cast<T>(train.learning_rate * std::sqrt(1 - std::pow(b2, t)) / (1 - std::pow(b1, t)));
  const T eps = static_cast<T>(train.adam_eps);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    if (!p.has_grad()) continue;
    const Matrix<T>& g = p.node()->grad;
    Matrix<T>& value = p.mutable_value();
    Matrix<T>& m = state.m[k];
    Matrix<T>& v = state.v[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T gi = g.data()[i];
      m.data()[i] = static_cast<T>(b1) * m.data()[i] + static_cast<T>(1 - b1) * gi;
      v.data()[i] = static_cast<T>(b2) * v.data()[i] + static_cast<T>(1 - b2) * gi * gi;
      value.data()[i] -= step_size * m.data()[i] / (std::sqrt(v.data()[i]) + eps);
    }
  }
}

template <class T>
LossGraph<T> pretraining_loss(const MaskedBatch& batch, const BoundWeights<T>& w, const ModelConfig& config,
                              const TrainConfig& train) {
  const T eps = static_cast<T>(config.layer_norm_eps);
  std::vector<ag::Var<T>> mlm_rows, g1_rows;
  std::vector<std::int32_t> mlm_labels;
  std::vector<Sentence> isolated;
  for (const auto& ex : batch.examples) {
    if (ex.mlm_targets.empty() && ex.cpc.empty()) continue;
    const Encoded<T> h = encode(ex.input, w, config);
    if (!ex.mlm_targets.empty()) {
      std::vector<std::size_t> pos;
      for (const auto& t : ex.mlm_targets) {
        pos.push_back(t.position);
        mlm_labels.push_back(t.original);
      }
      const auto ids = as_ids(pos);
      mlm_rows.push_back(ag::gather_rows(h.long_seq, std::span<const std::int32_t>(ids)));
    }
    if (!ex.cpc.empty()) {
      std::vector<std::size_t> rows;
      for (const auto& c : ex.cpc) {
        rows.push_back(c.global_row);
        isolated.push_back(c.original);
      }
      const auto ids = as_ids(rows);
      g1_rows.push_back(ag::gather_rows(h.global, std::span<const std::int32_t>(ids)));
    }
  }

  LossGraph<T> out;
  out.metrics.mlm_targets = mlm_labels.size();
  out.metrics.cpc_batch = isolated.size();
  ag::Var<T> mlm = ag::constant(Matrix<T>(1, 1));
  if (!mlm_labels.empty())
    mlm = ag::cross_entropy(mlm_logits(stack(mlm_rows), w, eps), std::span<const std::int32_t>(mlm_labels));
  out.metrics.mlm_loss = static_cast<double>(mlm.scalar());
  out.total = ag::scale(mlm, static_cast<T>(train.mlm_weight));
  out.metrics.cpc_loss = std::numeric_limits<double>::quiet_NaN();
  if (isolated.size() >= 2) {
    ag::Var<T> g2;
    if (train.cpc_stop_gradient) {
      ag::NoGradGuard guard;
      g2 = ag::constant(encode_isolated_sentences(isolated, w, config).value());
    } else {
      g2 = encode_isolated_sentences(isolated, w, config);
    }
    auto cpc = cpc_nce_loss(stack(g1_rows), g2, w.cpc_projection);
    out.metrics.cpc_loss = static_cast<double>(cpc.scalar());
    out.total = ag::add(out.total, ag::scale(cpc, static_cast<T>(train.cpc_weight)));
  }
  out.metrics.total = static_cast<double>(out.total.scalar());
  return out;
}

template <class T>
StepMetrics pretrain_step(const MaskedBatch& batch, BoundWeights<T>& weights, AdamState<T>& state,
                          const ModelConfig& config, const TrainConfig& train) {
  for_each_parameter(weights, [](const std::string&, ag::Var<T>& v) { v.zero_grad(); });
  LossGraph<T> graph = pretraining_loss(batch, weights, config, train);
  if (!std::isfinite(graph.metrics.total))
    throw std::runtime_error("non-finite loss at optimizer step " + std::to_string(state.step + 1) +
                             " (mlm=" + std::to_string(graph.metrics.mlm_loss) +
                             ", cpc=" + std::to_string(graph.metrics.cpc_loss) + ")");
  ag::backward(graph.total);
  adam_update(weights, state, train);
  return graph.metrics;
}

std::vector<EtcInput> prepare_corpus(const std::vector<TokenizedDocument>& corpus, const ModelConfig& config,
                                     std::size_t min_sentences) {
  std::vector<EtcInput> out;
  for (const auto& doc : corpus) {
    if (doc.size() < min_sentences) continue;
    StructuredDocument structured;
    structured.contexts.push_back(doc);
    for (const auto& piece : split_to_fit(structured, config))
      for (const auto& ctx : piece.contexts) out.push_back(build_flat_input(ctx, config));
  }
  if (out.empty())
    throw std::invalid_argument("empty corpus: no document has at least " + std::to_string(min_sentences) +
                                " sentences");
  return out;
}

template <class T>
Pretrainer<T>::Pretrainer(std::vector<TokenizedDocument> corpus, ModelConfig config, TrainConfig train,
                          std::uint64_t seed)
    : Pretrainer(std::move(corpus), config, train, seed, init_parameters<T>(config, seed)) {}

template <class T>
Pretrainer<T>::Pretrainer(std::vector<TokenizedDocument> corpus, ModelConfig config, TrainConfig train,
                          std::uint64_t seed, const ParameterSet<T>& initial)
    : docs_(prepare_corpus(corpus, config, train.min_sentences)),
      config_(std::move(config)),
      train_(train),
      rng_(seed ^ 0x9e3779b97f4a7c15ull),
      weights_(bind(initial, true)) {
  check_parameter_shapes(initial, config_);
  order_.resize(docs_.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

template <class T>
MaskedBatch Pretrainer<T>::next_batch() {
  const std::size_t count = std::min(std::max<std::size_t>(train_.docs_per_step, 1), docs_.size());
  std::vector<const EtcInput*> inputs;
  for (std::size_t k = 0; k < count; ++k) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    inputs.push_back(&docs_[order_[cursor_++]]);
  }
  std::vector<std::vector<std::size_t>> selected;
  std::size_t total = 0, available = 0;
  for (const auto* in : inputs) {
    selected.push_back(select_cpc_sentences(in->sentences, train_.cpc_rate, rng_));
    total += selected.back().size();
    available += in->sentences.size();
  }
  // The contrastive loss needs at least one negative: top up to two sentences.
  if (train_.cpc_rate > 0 && available >= 2) {
    while (total < 2) {
      const std::size_t e = std::uniform_int_distribution<std::size_t>(0, inputs.size() - 1)(rng_);
      const std::size_t s = std::uniform_int_distribution<std::size_t>(0, inputs[e]->sentences.size() - 1)(rng_);
      auto& sel = selected[e];
      if (std::find(sel.begin(), sel.end(), s) != sel.end()) continue;
      sel.insert(std::upper_bound(sel.begin(), sel.end(), s), s);
      ++total;
    }
  }
  MaskedBatch batch;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    batch.examples.push_back(mask_selected(*inputs[k], selected[k], train_, config_, rng_));
  return batch;
}

template <class T>
StepMetrics Pretrainer<T>::step() {
  const MaskedBatch batch = next_batch();
  return pretrain_step(batch, weights_, adam_, config_, train_);
}

#define ETC_INSTANTIATE(T)                                                                                      \
  template ag::Var<T> mlm_logits<T>(const ag::Var<T>&, const BoundWeights<T>&, T);                             \
  template MlmLoss<T> mlm_loss<T>(const ag::Var<T>&, std::span<const MlmTarget>, const BoundWeights<T>&, T);    \
  template ag::Var<T> cpc_scores<T>(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&);                  \
  template ag::Var<T> cpc_nce_loss<T>(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&);                \
  template ag::Var<T> encode_isolated_sentences<T>(const std::vector<Sentence>&, const BoundWeights<T>&,       \
                                                   const ModelConfig&);                                        \
  template void adam_update<T>(BoundWeights<T>&, AdamState<T>&, const TrainConfig&);                           \
  template LossGraph<T> pretraining_loss<T>(const MaskedBatch&, const BoundWeights<T>&, const ModelConfig&,    \
                                            const TrainConfig&);                                               \
  template StepMetrics pretrain_step<T>(const MaskedBatch&, BoundWeights<T>&, AdamState<T>&, const ModelConfig&, \
                                        const TrainConfig&);                                                   \
  template class Pretrainer<T>;

ETC_INSTANTIATE(float)
ETC_INSTANTIATE(double)

#undef ETC_INSTANTIATE

}  // namespace etc
