// SPDX-License-Identifier: Apache-2.0
#include "etc/verify/suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "json.hpp"

#include "etc/attention.hpp"
#include "etc/checkpoint.hpp"
#include "etc/core_math.hpp"
#include "etc/encoder.hpp"
#include "etc/kernels.hpp"
#include "etc/pretraining.hpp"
#include "etc/structure.hpp"
#include "etc/verify/gradient_check.hpp"
#include "etc/verify/oracles.hpp"

namespace etc::verify {
namespace {

using Rng = std::mt19937_64;

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

CheckResult result(const std::string& name, bool passed, std::string detail) {
  return CheckResult{name, passed, std::move(detail)};
}

// Runs `body`, turning any exception into a failed check.
CheckResult guarded(const std::string& name, const std::function<CheckResult()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return result(name, false, std::string("unexpected exception: ") + e.what());
  }
}

template <class F>
bool throws_with(F&& f, const std::string& needle) {
  try {
    f();
  } catch (const std::exception& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

template <class T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> normal(0.0, stddev);
  Matrix<T> m(r, c);
  for (T& v : m.values()) v = static_cast<T>(normal(rng));
  return m;
}

template <class T>
Projections<Matrix<T>> random_projections(std::size_t d, Rng& rng, double stddev) {
  return {random_matrix<T>(d, d, rng, stddev), random_matrix<T>(1, d, rng, 0.1), random_matrix<T>(d, d, rng, stddev),
          random_matrix<T>(1, d, rng, 0.1),    random_matrix<T>(d, d, rng, stddev), random_matrix<T>(1, d, rng, 0.1),
          random_matrix<T>(d, d, rng, stddev), random_matrix<T>(1, d, rng, 0.1)};
}

template <class T>
AttentionParams<Matrix<T>> random_attention(std::size_t d, std::size_t heads, std::size_t vocab, bool separate,
                                            Rng& rng, double stddev) {
  AttentionParams<Matrix<T>> p;
  p.heads = heads;
  p.global = random_projections<T>(d, rng, stddev);
  if (separate) p.long_side = random_projections<T>(d, rng, stddev);
  p.relative_keys = random_matrix<T>(vocab, d, rng, 0.5);
  return p;
}

AttentionParams<Dense> to_double(const AttentionParams<Matrix<float>>& p) {
  auto conv = [](const Projections<Matrix<float>>& q) {
    return Projections<Dense>{verify::to_double(q.query_w), verify::to_double(q.query_b), verify::to_double(q.key_w),
                              verify::to_double(q.key_b),   verify::to_double(q.value_w), verify::to_double(q.value_b),
                              verify::to_double(q.output_w), verify::to_double(q.output_b)};
  };
  AttentionParams<Dense> out;
  out.heads = p.heads;
  out.global = conv(p.global);
  if (p.long_side) out.long_side = conv(*p.long_side);
  out.relative_keys = verify::to_double(p.relative_keys);
  return out;
}

double diff(const Matrix<float>& a, const Dense& b) { return max_abs_diff(verify::to_double(a), b); }

ModelConfig small_config(std::size_t hidden, std::size_t heads, std::size_t radius, Sharing sharing) {
  ModelConfig c;
  c.layers = 2;
  c.hidden = hidden;
  c.heads = heads;
  c.local_radius = radius;
  c.clip_distance = 3;
  c.vocab_size = 64;
  c.max_global = 64;
  c.max_long = 512;
  c.sharing = sharing;
  c.init_std = 0.2;
  return c;
}

Sentence random_sentence(std::size_t len, Rng& rng, std::size_t vocab) {
  std::uniform_int_distribution<std::int32_t> tok(kFirstRegularId, static_cast<std::int32_t>(vocab) - 1);
  Sentence s;
  for (std::size_t i = 0; i < len; ++i) {
    s.ids.push_back(tok(rng));
    s.word_starts.push_back(i == 0 || rng() % 3 != 0 ? 1 : 0);
  }
  return s;
}

StructuredDocument random_document(Rng& rng, std::size_t vocab, std::size_t max_contexts, std::size_t max_sentences,
                                   std::size_t max_len) {
  StructuredDocument doc;
  const std::size_t contexts = 1 + rng() % max_contexts;
  for (std::size_t c = 0; c < contexts; ++c) {
    std::vector<Sentence> sentences;
    const std::size_t n = 1 + rng() % max_sentences;
    for (std::size_t s = 0; s < n; ++s) sentences.push_back(random_sentence(1 + rng() % max_len, rng, vocab));
    doc.contexts.push_back(std::move(sentences));
  }
  return doc;
}

Matrix<float> rows_of(const Matrix<float>& m, std::size_t begin, std::size_t end) {
  Matrix<float> out(end - begin, m.cols());
  for (std::size_t i = begin; i < end; ++i)
    std::copy(m.row(i).begin(), m.row(i).end(), out.row(i - begin).begin());
  return out;
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <class F>
bool throws_kind(F&& f, CheckpointError::Kind kind) {
  try {
    f();
  } catch (const CheckpointError& e) {
    return e.kind() == kind;
  } catch (...) {
    return false;
  }
  return false;
}

// Source tensor for a lift plan entry in a "bert/"-prefixed checkpoint.
const Matrix<float>& bert_source(const Checkpoint& src, const std::string& name) {
  for (const std::string prefix : {"bert/encoder/", "bert/", ""})
    if (src.contains(prefix + name)) return src.at(prefix + name);
  return src.at(name);
}

}  // namespace

CheckResult check_oracle_equivalence(std::uint64_t seed, std::size_t trials, bool fault) {
  const std::string name = "oracle_equivalence";
  return guarded(name, [&] {
    double worst_dense = 0, worst_naive = 0;
    std::size_t configs = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      Rng rng((seed + t % 3) * 1000003ull + t);
      const std::size_t heads = std::size_t{1} << (rng() % 3);
      const std::size_t dz = std::size_t{2} << (rng() % 3);
      const std::size_t d = heads * dz;
      std::size_t ng = rng() % 9, nl = rng() % 65;
      if (ng + nl == 0) nl = 1;
      const std::size_t r = rng() % 9, clip = 1 + rng() % 4;
      const RelativeVocab vocab{clip, default_structural_labels()};
      std::bernoulli_distribution keep(0.75);
      std::uniform_int_distribution<std::int32_t> label(0, static_cast<std::int32_t>(vocab.size()) - 1);
      PieceMasks masks = full_masks(ng, nl, r);
      PieceLabels labels = sequence_labels(ng, nl, r, clip);
      for (auto* m : {&masks.g2g, &masks.g2l, &masks.l2g})
        for (auto& v : m->values()) v = keep(rng);
      for (std::size_t i = 0; i < nl; ++i)
        for (std::size_t c = 0; c < masks.l2l.width(); ++c)
          masks.l2l.cells()(i, c) = masks.l2l.cells()(i, c) && keep(rng);
      for (auto* l : {&labels.g2g, &labels.g2l, &labels.l2g, &labels.l2l.cells()})
        for (auto& v : l->values()) v = label(rng);
      const auto params = random_attention<float>(d, heads, vocab.size(), rng() % 2 == 0, rng, 1.0 / std::sqrt(double(d)));
      const auto xg = random_matrix<float>(ng, d, rng), xl = random_matrix<float>(nl, d, rng);

      auto blocked = global_local_attention(xg, xl, params, masks, labels);
      if (fault && t == trials / 2 && blocked.long_seq.size() > 0) blocked.long_seq.data()[0] += 1e-3f;
      if (fault && t == trials / 2 && blocked.long_seq.size() == 0) blocked.global.data()[0] += 1e-3f;
      const auto dense = dense_reference_attention(xg, xl, params, masks, labels);
      const auto naive = naive_global_local_attention(verify::to_double(xg), verify::to_double(xl),
                                                      to_double(params), masks, labels);
      worst_dense = std::max({worst_dense, static_cast<double>(max_abs_diff(blocked.global, dense.global)),
                              static_cast<double>(max_abs_diff(blocked.long_seq, dense.long_seq))});
      worst_naive = std::max({worst_naive, diff(blocked.global, naive.global), diff(blocked.long_seq, naive.long_seq)});
      ++configs;
    }
    const bool ok = configs >= 100 && worst_dense <= 1e-5 && worst_naive <= 1e-5;
    return result(name, ok,
                  std::to_string(configs) + " configs, blocked-vs-dense " + sci(worst_dense) + ", blocked-vs-naive " +
                      sci(worst_naive) + " (tol 1e-5)");
  });
}

CheckResult check_all_global(std::uint64_t seed, bool fault) {
  const std::string name = "all_global";
  return guarded(name, [&] {
    Rng rng(seed);
    double worst = 0;
    for (std::size_t n : {1u, 5u, 12u}) {
      const std::size_t heads = 4, d = 16;
      auto params = random_attention<float>(d, heads, 9, false, rng, 0.4);
      params.relative_keys.fill(0.0f);
      const auto x = random_matrix<float>(n, d, rng);
      auto out = global_local_attention(x, Matrix<float>(0, d), params, full_masks(n, 0, 2),
                                        sequence_labels(n, 0, 2, 1));
      if (fault) out.global.data()[0] += 1e-3f;
      worst = std::max(worst, diff(out.global, standard_attention(verify::to_double(x), to_double(params).global, heads)));
    }
    return result(name, worst <= 1e-5, "max error vs standard attention " + sci(worst) + " (tol 1e-5)");
  });
}

CheckResult check_star_pattern(bool fault) {
  const std::string name = "star_pattern";
  return guarded(name, [&] {
    std::size_t mismatches = 0;
    for (std::size_t n = 1; n <= 16; ++n) {
      BoolMatrix realized = realized_pattern(full_masks(1, n, 1));
      if (fault && n == 8) realized(3, 7) = 1;
      if (!(realized == star_transformer_pattern(n))) ++mismatches;
    }
    return result(name, mismatches == 0, std::to_string(mismatches) + " of 16 lengths differ from the star pattern");
  });
}

CheckResult check_pair_counts(std::uint64_t seed, std::size_t tuples, bool fault) {
  const std::string name = "pair_counts";
  return guarded(name, [&] {
    Rng rng(seed);
    std::size_t bad = 0;
    for (std::size_t t = 0; t < tuples; ++t) {
      const std::size_t ng = rng() % 65, nl = rng() % 4097, r = rng() % 257;
      const std::size_t band = 2 * r + 1 < nl ? 2 * r + 1 : nl;
      const std::size_t expected = ng * ng + ng * nl + nl * ng + nl * band;
      std::size_t got = count_attention_pairs(ng, nl, r);
      if (fault && t == 0) ++got;
      if (got != expected) ++bad;
    }
    return result(name, bad == 0, std::to_string(tuples - bad) + "/" + std::to_string(tuples) + " tuples match");
  });
}

CheckResult check_relative_bias_gather(std::uint64_t seed, bool fault) {
  const std::string name = "relative_bias_gather";
  return guarded(name, [&] {
    Rng rng(seed);
    double worst = 0;
    for (int t = 0; t < 10; ++t) {
      const std::size_t heads = 1 + rng() % 3, dz = 1 + rng() % 6, n = 1 + rng() % 20, m = 1 + rng() % 20, v = 1 + rng() % 12;
      const auto vectors = random_matrix<double>(v, heads * dz, rng);
      LabelMatrix labels(n, m);
      for (auto& l : labels.values()) l = static_cast<std::int32_t>(rng() % v);
      for (std::size_t h = 0; h < heads; ++h) {
        const auto q = random_matrix<double>(n, dz, rng);
        auto fast = relative_score_bias(q, labels, vectors, h);
        if (fault) fast.data()[0] += 1.0;
        worst = std::max(worst, max_abs_diff(fast, per_pair_relative_bias(q, labels, vectors, h, heads)));
      }
    }
    return result(name, worst <= 1e-12, "gather vs per-pair vectors " + sci(worst));
  });
}

CheckResult check_core_math(std::uint64_t seed, bool fault) {
  const std::string name = "core_math";
  return guarded(name, [&] {
    Rng rng(seed);
    std::vector<std::string> failures;
    auto scores = random_matrix<double>(6, 9, rng, 3.0);
    for (std::size_t c = 0; c < 9; ++c) scores(2, c) = -kMaskConstant + scores(2, c);
    auto p = masked_softmax(scores);
    if (fault) p(0, 0) += 0.5;
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0;
      for (double v : p.row(i)) s += v;
      if (i == 2 ? s != 0 : std::abs(s - 1) > 1e-12) failures.push_back("softmax row " + std::to_string(i));
    }
    Matrix<double> bad(1, 2, {1.0, NAN});
    if (!throws_with([&] { masked_softmax(bad); }, "non-finite")) failures.push_back("non-finite scores accepted");
    const auto x = random_matrix<double>(5, 16, rng, 4.0);
    const auto y = layer_norm(x, Matrix<double>(1, 16, 1.0), Matrix<double>(1, 16), 1e-12);
    for (std::size_t i = 0; i < 5; ++i) {
      double mean = 0, var = 0;
      for (double v : y.row(i)) mean += v;
      mean /= 16;
      for (double v : y.row(i)) var += (v - mean) * (v - mean);
      if (std::abs(mean) > 1e-12 || std::abs(var / 16 - 1) > 1e-9) failures.push_back("layer norm row " + std::to_string(i));
    }
    const auto g = gelu(Matrix<double>(1, 3, {0.0, 10.0, -10.0}));
    if (g(0, 0) != 0 || std::abs(g(0, 1) - 10) > 1e-9 || std::abs(g(0, 2)) > 1e-9) failures.push_back("gelu limits");
    const auto w1 = random_matrix<double>(16, 8, rng), b1 = random_matrix<double>(1, 8, rng);
    const auto w2 = random_matrix<double>(8, 16, rng), b2 = random_matrix<double>(1, 16, rng);
    Dense inner = affine(x, w1, b1);
    for (double& v : inner.values()) v = 0.5 * v * (1 + std::tanh(std::sqrt(2 / 3.14159265358979323846) * (v + 0.044715 * v * v * v)));
    if (max_abs_diff(feed_forward(x, w1, b1, w2, b2), affine(inner, w2, b2)) > 1e-10) failures.push_back("feed forward");
    std::string detail = failures.empty() ? "softmax, layer norm, gelu, feed-forward agree" : "";
    for (const auto& f : failures) detail += (detail.empty() ? "" : ", ") + f;
    return result(name, failures.empty(), detail);
  });
}

CheckResult check_parallel_kernels(std::uint64_t seed, bool fault) {
  const std::string name = "parallel_kernels";
  return guarded(name, [&] {
    Rng rng(seed);
    const int previous = kernels::num_threads();
    kernels::set_num_threads(4);
    double worst = 0;
    for (int t = 0; t < 6; ++t) {
      const std::size_t n = 1 + rng() % 70, k = 1 + rng() % 20, m = 1 + rng() % 30, r = rng() % 6;
      const auto a = random_matrix<float>(n, k, rng), b = random_matrix<float>(k, m, rng), bt = random_matrix<float>(m, k, rng);
      const auto at = random_matrix<float>(k, n, rng);
      Matrix<float> p, s;
      kernels::gemm_nn(a, b, p);
      kernels::serial::gemm_nn(a, b, s);
      if (fault) p.data()[0] += 1.0f;
      worst = std::max(worst, static_cast<double>(max_abs_diff(p, s)));
      kernels::gemm_nt(a, bt, p);
      kernels::serial::gemm_nt(a, bt, s);
      worst = std::max(worst, static_cast<double>(max_abs_diff(p, s)));
      kernels::gemm_tn(at, b, p);
      kernels::serial::gemm_tn(at, b, s);
      worst = std::max(worst, static_cast<double>(max_abs_diff(p, s)));
      const auto q = random_matrix<float>(n, k, rng), kk = random_matrix<float>(n, k, rng);
      kernels::band_scores(q, kk, r, p);
      kernels::serial::band_scores(q, kk, r, s);
      worst = std::max(worst, static_cast<double>(max_abs_diff(p, s)));
      const auto w = random_matrix<float>(n, kernels::slot_count(r), rng);
      kernels::band_apply(w, kk, r, p);
      kernels::serial::band_apply(w, kk, r, s);
      worst = std::max(worst, static_cast<double>(max_abs_diff(p, s)));
      kernels::band_scatter(w, kk, r, p);
      kernels::serial::band_scatter(w, kk, r, s);
      worst = std::max(worst, static_cast<double>(max_abs_diff(p, s)));
      kernels::softmax_rows(a, -5000.0f, p);
      kernels::serial::softmax_rows(a, -5000.0f, s);
      worst = std::max(worst, static_cast<double>(max_abs_diff(p, s)));
    }
    kernels::set_num_threads(previous);
    return result(name, worst <= 1e-5, "parallel vs serial kernels " + sci(worst));
  });
}

CheckResult check_gradients(std::uint64_t seed, bool fault) {
  const std::string name = "gradients";
  return guarded(name, [&] {
    const GradientFixture f = make_gradient_fixture(seed);
    auto mlm = finite_difference_check(f.params, f.mlm_loss());
    auto cpc = finite_difference_check(f.params, f.cpc_loss());
    if (fault) mlm.worst += 1.0;
    const bool ok = mlm.worst < 1e-3 && cpc.worst < 1e-3;
    return result(name, ok,
                  std::to_string(mlm.groups.size()) + " groups; MLM worst " + sci(mlm.worst) + " (" + mlm.worst_group +
                      "), CPC worst " + sci(cpc.worst) + " (" + cpc.worst_group + ") (tol 1e-3)");
  });
}

CheckResult check_cpc_analytics(std::uint64_t seed, bool fault) {
  const std::string name = "cpc_analytics";
  return guarded(name, [&] {
    Rng rng(seed);
    std::vector<std::string> failures;
    // Identical summaries: every score equal, loss ln B.
    const auto row = random_matrix<double>(1, 8, rng);
    Matrix<double> same(4, 8);
    for (std::size_t i = 0; i < 4; ++i) std::copy(row.row(0).begin(), row.row(0).end(), same.row(i).begin());
    const auto proj = ag::constant(random_matrix<double>(8, 8, rng));
    double uniform = cpc_nce_loss(ag::constant(same), ag::constant(same), proj).scalar();
    if (fault) uniform += 1e-3;
    const double uniform_err = std::abs(uniform - std::log(4.0));
    if (uniform_err > 1e-6) failures.push_back("identical embeddings loss " + fixed(uniform, 6));
    double worst = 0;
    for (int t = 0; t < 20; ++t) {
      const auto g1 = random_matrix<double>(5, 8, rng), g2 = random_matrix<double>(5, 8, rng);
      const auto p = random_matrix<double>(8, 8, rng);
      const double got = cpc_nce_loss(ag::constant(g1), ag::constant(g2), ag::constant(p)).scalar();
      worst = std::max(worst, std::abs(got - nce_oracle(g1, g2, p)));
      if (got < 0) failures.push_back("negative NCE loss");
    }
    if (worst > 1e-8) failures.push_back("NCE oracle error " + sci(worst));
    if (!throws_with([&] { cpc_nce_loss(ag::constant(row), ag::constant(row), proj); }, "need negatives"))
      failures.push_back("B < 2 accepted");
    // MLM cross-entropy against the loop oracle, and ln V for uniform logits.
    double ce_worst = 0;
    for (int t = 0; t < 10; ++t) {
      const auto logits = random_matrix<double>(4, 11, rng, 2.0);
      std::vector<std::int32_t> targets;
      for (int i = 0; i < 4; ++i) targets.push_back(static_cast<std::int32_t>(rng() % 11));
      const double got = ag::cross_entropy(ag::constant(logits), std::span<const std::int32_t>(targets)).scalar();
      ce_worst = std::max(ce_worst, std::abs(got - cross_entropy_oracle(logits, targets)));
    }
    if (ce_worst > 1e-8) failures.push_back("cross-entropy oracle error " + sci(ce_worst));
    const std::vector<std::int32_t> one{3};
    const double flat = ag::cross_entropy(ag::constant(Matrix<double>(1, 50, 0.25)), std::span<const std::int32_t>(one)).scalar();
    if (std::abs(flat - std::log(50.0)) > 1e-12) failures.push_back("uniform logits loss");
    std::string detail = "ln4 error " + sci(uniform_err) + ", NCE oracle " + sci(worst) + ", CE oracle " + sci(ce_worst);
    for (const auto& f : failures) detail += "; " + f;
    return result(name, failures.empty(), detail);
  });
}

CheckResult check_masking_rates(std::uint64_t seed, bool fault) {
  const std::string name = "masking_rates";
  return guarded(name, [&] {
    Rng rng(seed);
    ModelConfig config;
    std::vector<SentenceSpan> spans(10000);
    const auto chosen = select_cpc_sentences(spans, 0.10, rng);
    double cpc_fraction = static_cast<double>(chosen.size()) / spans.size();
    if (fault) cpc_fraction += 0.05;

    // 10,000 sentences of 8-20 pieces, words of 1-3 pieces.
    std::vector<std::int32_t> ids;
    std::vector<std::uint8_t> starts;
    for (int s = 0; s < 10000; ++s) {
      const std::size_t len = 8 + rng() % 13;
      for (std::size_t i = 0; i < len; ++i) {
        ids.push_back(kFirstRegularId + static_cast<std::int32_t>(rng() % 400));
        starts.push_back(i == 0 || rng() % 2 == 0 ? 1 : 0);
      }
    }
    const auto masked = whole_word_mask(ids, starts, 0.15, rng, config);
    const double piece_fraction = static_cast<double>(masked.targets.size()) / ids.size();
    std::vector<std::uint8_t> targeted(ids.size(), 0);
    for (const auto& t : masked.targets) targeted[t.position] = 1;
    std::size_t partial = 0, words = 0;
    for (std::size_t b = 0; b < ids.size();) {
      std::size_t e = b + 1;
      while (e < ids.size() && !starts[e]) ++e;
      std::size_t hit = 0;
      for (std::size_t i = b; i < e; ++i) hit += targeted[i];
      if (hit != 0 && hit != e - b) ++partial;
      ++words;
      b = e;
    }
    std::size_t mask_id = 0;
    for (const auto& t : masked.targets) mask_id += masked.ids[t.position] == config.reserved.mask;
    const double mask_share = masked.targets.empty() ? 0 : static_cast<double>(mask_id) / masked.targets.size();

    // CPC sentences are never MLM targets.
    std::size_t overlap = 0;
    Rng doc_rng(seed + 1);
    TrainConfig train;
    train.cpc_rate = 0.3;
    for (int d = 0; d < 50; ++d) {
      std::vector<Sentence> sentences;
      for (int s = 0; s < 8; ++s) sentences.push_back(random_sentence(4 + doc_rng() % 6, doc_rng, config.vocab_size));
      const auto ex = mask_example(build_flat_input(sentences, config), train, config, doc_rng);
      for (const auto& t : ex.mlm_targets)
        for (const auto& c : ex.cpc) overlap += t.position >= c.begin && t.position < c.end;
      for (const auto& c : ex.cpc)
        for (std::size_t i = c.begin; i < c.end; ++i) overlap += ex.input.long_ids[i] != config.reserved.mask;
    }
    const bool ok = std::abs(cpc_fraction - 0.10) <= 0.01 && std::abs(piece_fraction - 0.15) <= 0.01 && partial == 0 &&
                    std::abs(mask_share - 0.8) <= 0.02 && overlap == 0;
    return result(name, ok,
                  "cpc fraction " + fixed(cpc_fraction) + ", piece fraction " + fixed(piece_fraction) + ", " +
                      std::to_string(partial) + " partial words of " + std::to_string(words) + ", mask share " +
                      fixed(mask_share, 3) + ", cpc/mlm overlap " + std::to_string(overlap));
  });
}

CheckResult check_structure_layout(bool fault) {
  const std::string name = "structure_layout";
  return guarded(name, [&] {
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
      if (!ok) failures.push_back(what);
    };
    ModelConfig config = small_config(8, 2, 2, Sharing::kShared);
    const RelativeVocab vocab = config.relative_vocab();
    const auto member = vocab.label(labels::kSegmentMember);
    const auto nonmember = vocab.label(labels::kSegmentNonmember);
    Rng rng(3);
    auto sent = [&](std::size_t n) { return random_sentence(n, rng, config.vocab_size); };

    // Flat recipe, sentences [3, 2].
    const std::vector<Sentence> two{sent(3), sent(2)};
    EtcInput flat = build_flat_input(two, config);
    expect(flat.n_long() == 5 && flat.n_global() == 2, "flat sizes");
    for (std::size_t t = 0; t < 5; ++t) {
      expect(flat.labels.g2l(0, t) == (t < 3 ? member : nonmember), "flat g2l row 0");
      expect(flat.labels.g2l(1, t) == (t >= 3 ? member : nonmember), "flat g2l row 1");
    }
    const EtcInput single = build_flat_input({sent(1)}, config);
    expect(single.n_long() == 1 && single.n_global() == 1 && single.masks.g2g(0, 0) && single.masks.g2l(0, 0) &&
               single.masks.l2g(0, 0) && single.masks.l2l.at(0, 0),
           "single token masks");
    BuildOptions hard;
    hard.hard_g2l = true;
    const EtcInput flat_hard = build_flat_input(two, config, hard);
    std::size_t asym = 0;
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t t = 0; t < 5; ++t) {
        expect(flat_hard.masks.g2l(a, t) == (flat_hard.labels.g2l(a, t) == member), "hard g2l keeps members only");
        asym += !flat_hard.masks.l2g(t, a);
      }
    expect(asym == 0, "hard g2l changed l2g");

    // Two contexts x two sentences x three tokens.
    StructuredDocument doc;
    doc.contexts = {{sent(3), sent(3)}, {sent(3), sent(3)}};
    EtcInput h = build_hierarchical_input(doc, hard, config);
    if (fault) h.masks.g2l(0, 0) = 0;
    expect(h.n_long() == 12 && h.n_global() == 6, "hierarchy sizes");
    for (std::size_t a = 0; a < 6; ++a) {
      std::size_t trues = 0;
      for (std::size_t t = 0; t < 12; ++t) trues += h.masks.g2l(a, t);
      const bool context_row = h.global_ids[a] == config.reserved.context_summary;
      expect(trues == (context_row ? 6u : 3u), "hard g2l count row " + std::to_string(a));
    }
    const auto h_l2l = expand_band(h.masks.l2l);
    expect(!h_l2l(5, 6) && h_l2l(4, 5), "context boundary in l2l");
    BuildOptions flat_opt;
    flat_opt.flat_structure = true;
    const EtcInput hf = build_hierarchical_input(doc, flat_opt, config);
    expect(hf.masks.l2l == local_band(12, config.local_radius), "flat structure keeps the full band");
    for (auto l : hf.labels.g2l.values()) expect(l == member || l == nonmember, "flat structure g2l labels");

    // A single context is the flat layout plus one context row.
    StructuredDocument one;
    one.contexts = {two};
    const EtcInput h1 = build_hierarchical_input(one, {}, config);
    expect(h1.n_global() == flat.n_global() + 1 && h1.long_ids == flat.long_ids, "single context sizes");
    for (std::size_t a = 0; a < 2; ++a) {
      for (std::size_t b = 0; b < 2; ++b) expect(h1.labels.g2g(a + 1, b + 1) == flat.labels.g2g(a, b), "single context g2g");
      for (std::size_t t = 0; t < 5; ++t) expect(h1.labels.g2l(a + 1, t) == flat.labels.g2l(a, t), "single context g2l");
    }
    expect(h1.labels.l2l == flat.labels.l2l && h1.masks.l2l == flat.masks.l2l, "single context l2l");

    // Packing and splitting.
    ModelConfig small = config;
    small.max_long = 10;
    const auto packed = pack_inputs({build_flat_input({sent(3)}, small), build_flat_input({sent(4)}, small)}, small);
    expect(packed.size() == 1 && packed[0].n_long() == 7, "packed size");
    if (packed.size() == 1) {
      const auto l2l = expand_band(packed[0].masks.l2l);
      for (std::size_t i = 0; i < 7; ++i)
        for (std::size_t j = 0; j < 7; ++j)
          if ((i < 3) != (j < 3)) expect(!l2l(i, j), "cross-document l2l");
      expect(!packed[0].masks.g2l(0, 5) && !packed[0].masks.l2g(5, 0) && !packed[0].masks.g2g(0, 1),
             "cross-document masks");
    }
    small.max_long = 8;
    StructuredDocument big;
    big.contexts = {{sent(4), sent(4), sent(4)}};
    const auto pieces = split_to_fit(big, small);
    expect(pieces.size() == 2 && pieces[0].token_count() == 8 && pieces[1].token_count() == 4, "split at sentence boundary");

    // Mention links and label errors.
    StructuredDocument linked = doc;
    linked.mention_links.push_back({0, 4, 6, labels::kMentionLink});
    const EtcInput hl = build_hierarchical_input(linked, {}, config);
    const auto link = vocab.label(labels::kMentionLink);
    expect(hl.n_global() == 7 && hl.labels.g2l(6, 4) == link && hl.labels.l2g(5, 6) == link &&
               hl.labels.g2l(6, 0) == nonmember,
           "mention link labels");
    linked.mention_links[0].label = "no-such-label";
    expect(throws_with([&] { build_hierarchical_input(linked, {}, config); }, "unknown structural label"),
           "unknown label rejected");
    expect(throws_with([&] { build_flat_input(std::vector<Sentence>(70, sent(1)), config); }, "overflow"),
           "overflow rejected");
    const auto text_doc = document_from_text("A b. C d.", config.vocab_size);
    expect(build_flat_input(text_doc.contexts[0], config).n_global() == 2, "text sentences");

    std::string detail = failures.empty() ? "flat, hierarchical, packing and split layouts as specified" : "";
    for (const auto& f : failures) detail += (detail.empty() ? "" : ", ") + f;
    return result(name, failures.empty(), detail);
  });
}

CheckResult check_context_permutation(std::uint64_t seed, bool fault) {
  const std::string name = "context_permutation";
  return guarded(name, [&] {
    Rng rng(seed);
    const ModelConfig config = small_config(16, 2, 2, Sharing::kSeparate);
    const auto params = init_parameters<float>(config, seed);
    StructuredDocument doc;
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<Sentence> s;
      for (std::size_t k = 0; k < 2 + c % 2; ++k) s.push_back(random_sentence(2 + rng() % 4, rng, config.vocab_size));
      doc.contexts.push_back(std::move(s));
    }
    const std::vector<std::size_t> perm{2, 0, 1};
    StructuredDocument moved;
    for (std::size_t p : perm) moved.contexts.push_back(doc.contexts[p]);
    const EtcInput a = build_hierarchical_input(doc, {}, config), b = build_hierarchical_input(moved, {}, config);
    const auto ea = encode(a, params, config);
    auto eb = encode(b, params, config);
    if (fault) eb.long_seq.data()[0] += 1e-3f;

    // Start offsets of each context's rows in both layouts.
    auto starts = [](const StructuredDocument& d) {
      std::vector<std::pair<std::size_t, std::size_t>> out;
      std::size_t g = 0, l = 0;
      for (const auto& ctx : d.contexts) {
        out.emplace_back(g, l);
        g += 1 + ctx.size();
        for (const auto& s : ctx) l += s.ids.size();
      }
      return out;
    };
    const auto sa = starts(doc), sb = starts(moved);
    double worst = 0;
    for (std::size_t k = 0; k < perm.size(); ++k) {
      const std::size_t c = perm[k];
      const auto& ctx = doc.contexts[c];
      std::size_t tokens = 0;
      for (const auto& s : ctx) tokens += s.ids.size();
      worst = std::max(worst, static_cast<double>(max_abs_diff(rows_of(ea.global, sa[c].first, sa[c].first + 1 + ctx.size()),
                                                               rows_of(eb.global, sb[k].first, sb[k].first + 1 + ctx.size()))));
      worst = std::max(worst, static_cast<double>(max_abs_diff(rows_of(ea.long_seq, sa[c].second, sa[c].second + tokens),
                                                               rows_of(eb.long_seq, sb[k].second, sb[k].second + tokens))));
    }
    return result(name, worst <= 1e-5, "permuted contexts, max row difference " + sci(worst) + " (tol 1e-5)");
  });
}

CheckResult check_packing_isolation(std::uint64_t seed, std::size_t pairs, bool fault) {
  const std::string name = "packing_isolation";
  return guarded(name, [&] {
    Rng rng(seed);
    double worst = 0;
    std::size_t packed_pairs = 0;
    for (std::size_t t = 0; t < pairs; ++t) {
      const ModelConfig config = small_config(16, 2, 1 + rng() % 4, t % 2 ? Sharing::kShared : Sharing::kSeparate);
      const auto params = init_parameters<float>(config, seed + t);
      std::vector<EtcInput> docs;
      for (int d = 0; d < 2; ++d) {
        const auto doc = random_document(rng, config.vocab_size, 2, 4, 8);
        BuildOptions opt;
        opt.hard_g2l = rng() % 2 == 0;
        docs.push_back(build_hierarchical_input(doc, opt, config));
      }
      const auto packed = pack_inputs(docs, config);
      if (packed.size() != 1) continue;
      ++packed_pairs;
      auto joint = encode(packed[0], params, config);
      if (fault && t == 0) joint.long_seq.data()[0] += 1e-3f;
      for (std::size_t d = 0; d < 2; ++d) {
        const auto alone = encode(docs[d], params, config);
        const DocumentSpan& span = packed[0].documents[d];
        worst = std::max(worst, static_cast<double>(max_abs_diff(rows_of(joint.global, span.global_begin, span.global_end),
                                                                 alone.global)));
        worst = std::max(worst, static_cast<double>(max_abs_diff(rows_of(joint.long_seq, span.long_begin, span.long_end),
                                                                 alone.long_seq)));
      }
    }
    const bool ok = packed_pairs == pairs && worst <= 1e-5;
    return result(name, ok,
                  std::to_string(packed_pairs) + " packed pairs, max difference " + sci(worst) + " (tol 1e-5)");
  });
}

CheckResult check_checkpoint_roundtrip(std::uint64_t seed, bool fault) {
  const std::string name = "checkpoint_roundtrip";
  return guarded(name, [&] {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / ("etc_verify_" + std::to_string(seed));
    fs::create_directories(dir);
    std::vector<std::string> failures;
    const ModelConfig config = small_config(16, 2, 2, Sharing::kSeparate);
    const auto params = init_parameters<float>(config, seed);
    const std::string a = (dir / "a").string(), b = (dir / "b").string();
    save_parameters(params, config, a);
    save_parameters(params, config, b);
    auto loaded = to_parameters<float>(load_checkpoint(a), config);
    if (fault) loaded.cpc_projection.data()[0] += 1.0f;
    bool identical = true;
    std::vector<const Matrix<float>*> original;
    for_each_parameter(params, [&](const std::string&, const Matrix<float>& m) { original.push_back(&m); });
    std::size_t k = 0;
    for_each_parameter(loaded, [&](const std::string&, const Matrix<float>& m) {
      identical = identical && std::memcmp(m.data(), original[k]->data(), m.size() * sizeof(float)) == 0 &&
                  m.same_shape(*original[k]);
      ++k;
    });
    if (!identical) failures.push_back("round trip not bitwise identical");
    if (read_bytes(blob_path(a)) != read_bytes(blob_path(b)) || read_bytes(manifest_path(a)) != read_bytes(manifest_path(b)))
      failures.push_back("repeated saves differ");

    if (!throws_kind([&] { save_checkpoint(Checkpoint{}, (dir / "empty").string()); }, CheckpointError::Kind::kNoTensors))
      failures.push_back("empty checkpoint accepted");
    const std::string blob = read_bytes(blob_path(a));
    {
      std::ofstream(blob_path(b), std::ios::binary | std::ios::trunc).write(blob.data(), static_cast<std::streamsize>(blob.size() - 4));
    }
    if (!throws_kind([&] { load_checkpoint(b); }, CheckpointError::Kind::kTruncatedBlob))
      failures.push_back("truncated blob not detected");
    {
      std::ofstream(blob_path(b), std::ios::binary | std::ios::trunc).write(blob.data(), static_cast<std::streamsize>(blob.size()));
      auto manifest = nlohmann::json::parse(read_bytes(manifest_path(a)));
      manifest[0]["dtype"] = "bf16";
      std::ofstream(manifest_path(b), std::ios::trunc) << manifest.dump();
    }
    if (!throws_kind([&] { load_checkpoint(b); }, CheckpointError::Kind::kUnsupportedDtype))
      failures.push_back("unknown dtype not detected");
    const Checkpoint full = load_checkpoint(a);
    Checkpoint partial;
    for (const auto& e : full.manifest())
      if (e.name != "cls/cpc/projection") partial.add(e.name, full.at(e.name));
    if (!throws_kind([&] { to_parameters<float>(partial, config); }, CheckpointError::Kind::kMissingTensor))
      failures.push_back("missing tensor not detected");
    ModelConfig wider = config;
    wider.intermediate = 3 * config.hidden;
    if (!throws_kind([&] { to_parameters<float>(load_checkpoint(a), wider); }, CheckpointError::Kind::kShapeMismatch))
      failures.push_back("shape mismatch not detected");
    fs::remove_all(dir);
    std::string detail = failures.empty() ? "bitwise round trip, deterministic bytes, distinct load errors" : "";
    for (const auto& f : failures) detail += (detail.empty() ? "" : ", ") + f;
    return result(name, failures.empty(), detail);
  });
}

CheckResult check_lift_rules(std::uint64_t seed, bool fault) {
  const std::string name = "lift_rules";
  return guarded(name, [&] {
    namespace fs = std::filesystem;
    std::vector<std::string> failures;
    ModelConfig config = small_config(16, 2, 2, Sharing::kSeparate);
    config.vocab_size = 40;
    const Checkpoint src = random_bert_checkpoint(config, 32, seed);
    for (Sharing sharing : {Sharing::kSeparate, Sharing::kShared}) {
      auto lifted = lift_bert(src, config, sharing, seed);
      if (fault) lifted.layers[0].attention.global.query_w.data()[0] += 1.0f;
      std::map<std::string, const Matrix<float>*> by_name;
      for_each_parameter(lifted, [&](const std::string& n, const Matrix<float>& m) { by_name[n] = &m; });
      std::size_t copied = 0;
      for (const auto& [to, from] : lift_copy_plan(config, sharing)) {
        const auto& s = bert_source(src, from);
        const auto& d = *by_name.at(to);
        if (s.size() != d.size() || !std::equal(s.values().begin(), s.values().end(), d.values().begin()))
          failures.push_back(std::string(to_string(sharing)) + " " + to + " differs from " + from);
        ++copied;
      }
      for (const auto& [n, m] : by_name) {
        if (n.find("position") != std::string::npos || n.find("seq_relationship") != std::string::npos ||
            n.find("pooler") != std::string::npos)
          failures.push_back("discarded tensor present: " + n);
        (void)m;
      }
      if (sharing == Sharing::kSeparate) {
        const auto& l = lifted.layers[1].attention;
        if (!l.long_side || !(l.long_side->query_w == l.global.query_w) || !(l.long_side->output_w == l.global.output_w))
          failures.push_back("global and long copies differ");
      } else if (lifted.layers[0].attention.long_side) {
        failures.push_back("shared lift produced a long set");
      }
      bool random_nonzero = false;
      for (float v : lifted.layers[0].attention.relative_keys.values()) random_nonzero = random_nonzero || v != 0;
      if (!random_nonzero) failures.push_back("relative vectors not initialized");
      if (copied == 0) failures.push_back("empty copy plan");
    }
    ModelConfig narrow = config;
    narrow.hidden = 8;
    if (!throws_with([&] { lift_bert(src, narrow, Sharing::kSeparate, seed); }, "embeddings/word_embeddings"))
      failures.push_back("hidden mismatch not reported by tensor name");
    ModelConfig deeper = config;
    deeper.layers = 3;
    if (!throws_with([&] { lift_bert(src, deeper, Sharing::kSeparate, seed); }, "layers"))
      failures.push_back("layer count mismatch not reported");
    ModelConfig wider = config;
    wider.intermediate = 48;
    if (!throws_with([&] { lift_bert(src, wider, Sharing::kSeparate, seed); }, "intermediate/dense/kernel"))
      failures.push_back("FFN mismatch not reported by tensor name");

    // lift(save(lift(x))) reproduces the copied tensors bitwise.
    const fs::path dir = fs::temp_directory_path() / ("etc_lift_" + std::to_string(seed));
    fs::create_directories(dir);
    const auto first = lift_bert(src, config, Sharing::kSeparate, seed);
    save_parameters(first, config, (dir / "lifted").string());
    const auto second = lift_bert(load_checkpoint((dir / "lifted").string()), config, Sharing::kSeparate, seed + 1);
    std::map<std::string, const Matrix<float>*> a, b;
    for_each_parameter(first, [&](const std::string& n, const Matrix<float>& m) { a[n] = &m; });
    for_each_parameter(second, [&](const std::string& n, const Matrix<float>& m) { b[n] = &m; });
    for (const auto& entry : lift_copy_plan(config, Sharing::kSeparate))
      if (!(*a.at(entry.first) == *b.at(entry.first))) failures.push_back("relift changed " + entry.first);
    fs::remove_all(dir);

    std::string detail = failures.empty() ? "copy plan honoured in both sharing modes; mismatches named; relift idempotent" : "";
    for (std::size_t i = 0; i < failures.size() && i < 5; ++i) detail += (detail.empty() ? "" : ", ") + failures[i];
    return result(name, failures.empty(), detail);
  });
}

CheckResult check_lifted_forward(std::uint64_t seed, bool fault) {
  const std::string name = "lifted_forward";
  return guarded(name, [&] {
    ModelConfig config = small_config(16, 4, 2, Sharing::kSeparate);
    config.vocab_size = 40;
    const std::size_t n = 12;
    const Checkpoint src = random_bert_checkpoint(config, 32, seed);
    Rng rng(seed);
    double worst = 0;
    for (Sharing sharing : {Sharing::kSeparate, Sharing::kShared}) {
      config.sharing = sharing;
      auto lifted = lift_bert(src, config, sharing, seed);
      for (auto& l : lifted.layers) l.attention.relative_keys.fill(0.0f);
      EtcInput in;
      for (std::size_t i = 0; i < n; ++i) {
        in.global_ids.push_back(kFirstRegularId + static_cast<std::int32_t>(rng() % 24));
        in.global_types.push_back(static_cast<std::int32_t>(rng() % 2));
      }
      in.masks = full_masks(n, 0, config.local_radius);
      in.labels = sequence_labels(n, 0, config.local_radius, config.clip_distance);
      const auto w = bind(lifted, false);
      ag::NoGradGuard guard;
      auto embedded = embed(in, w);
      // External absolute positions: add the source's position rows.
      const Matrix<float>& pos = src.at("bert/embeddings/position_embeddings");
      Matrix<float>& g = embedded.global.mutable_value();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < g.cols(); ++c) g(i, c) += pos(i, c);
      auto out = encode_embedded(embedded, in, w, config).global.value();
      if (fault) out.data()[0] += 1e-3f;
      const Dense ref = bert_reference_forward(src, in.global_ids, in.global_types, config.heads, config.layers,
                                               config.layer_norm_eps);
      worst = std::max(worst, diff(out, ref));
    }
    return result(name, worst <= 1e-4, "all-global lifted model vs BERT reference " + sci(worst) + " (tol 1e-4)");
  });
}

CheckResult check_optimizer(std::uint64_t seed, bool fault) {
  const std::string name = "optimizer";
  return guarded(name, [&] {
    std::vector<std::string> failures;
    ModelConfig config = small_config(8, 2, 1, Sharing::kSeparate);
    config.vocab_size = 32;
    Rng rng(seed);
    MaskedBatch batch;
    TrainConfig train;
    train.cpc_rate = 0.5;
    for (int d = 0; d < 3; ++d) {
      std::vector<Sentence> s;
      for (int k = 0; k < 3; ++k) s.push_back(random_sentence(3, rng, config.vocab_size));
      const EtcInput in = build_flat_input(s, config);
      batch.examples.push_back(mask_example(in, train, config, rng));
      batch.examples.back().cpc.clear();
    }
    // Force exactly two CPC sentences so both losses are present.
    for (int d = 0; d < 2; ++d) {
      auto& ex = batch.examples[static_cast<std::size_t>(d)];
      const SentenceSpan& s = ex.input.sentences[0];
      CpcSentence c{s.global_row, s.begin, s.end, {}};
      Rng local(seed + static_cast<std::uint64_t>(d));
      c.original = random_sentence(s.end - s.begin, local, config.vocab_size);
      ex.cpc.push_back(c);
    }
    auto params = init_parameters<float>(config, seed);
    auto weights = bind(params, true);
    AdamState<float> state;
    TrainConfig frozen = train;
    frozen.learning_rate = 0;
    const StepMetrics m = pretrain_step(batch, weights, state, config, frozen);
    const auto after = values_of(weights);
    bool unchanged = true;
    std::vector<const Matrix<float>*> before;
    for_each_parameter(params, [&](const std::string&, const Matrix<float>& x) { before.push_back(&x); });
    std::size_t k = 0;
    for_each_parameter(after, [&](const std::string&, const Matrix<float>& x) {
      unchanged = unchanged && std::memcmp(x.data(), before[k]->data(), x.size() * sizeof(float)) == 0;
      ++k;
    });
    if (fault) unchanged = false;
    if (!unchanged) failures.push_back("zero learning rate changed parameters");
    const double expected = 0.8 * m.mlm_loss + 0.2 * m.cpc_loss;
    if (!(std::abs(m.total - expected) <= 1e-5 * std::max(1.0, std::abs(expected))))
      failures.push_back("total is not 0.8 mlm + 0.2 cpc");
    TrainConfig moving = train;
    moving.learning_rate = 1e-2;
    pretrain_step(batch, weights, state, config, moving);
    if (values_of(weights).cpc_projection == params.cpc_projection) failures.push_back("update did not move parameters");
    // A poisoned parameter aborts the step and leaves parameters untouched.
    weights.token_embedding.mutable_value().data()[static_cast<std::size_t>(batch.examples[0].input.long_ids[0]) * config.hidden] = NAN;
    const auto poisoned = values_of(weights);
    bool aborted = false;
    try {
      pretrain_step(batch, weights, state, config, moving);
    } catch (const std::exception&) {
      aborted = true;
    }
    const auto after_abort = values_of(weights);
    if (!aborted) failures.push_back("non-finite loss not rejected");
    if (!(after_abort.cpc_projection == poisoned.cpc_projection)) failures.push_back("aborted step changed parameters");
    std::string detail = failures.empty() ? "zero-lr step bitwise no-op; weighted total; non-finite loss aborts" : "";
    for (const auto& f : failures) detail += (detail.empty() ? "" : ", ") + f;
    return result(name, failures.empty(), detail);
  });
}

bool VerifyReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string VerifyReport::text() const {
  std::string out;
  std::vector<std::string> failed;
  for (const auto& c : checks) {
    out += (c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail + "\n";
    if (!c.passed) failed.push_back(c.name);
  }
  if (failed.empty()) {
    out += "ALL PASS\n";
  } else {
    out += "FAILED:";
    for (const auto& f : failed) out += " " + f;
    out += "\n";
  }
  return out;
}

std::string VerifyReport::json() const {
  nlohmann::json j;
  j["all_passed"] = all_passed();
  j["checks"] = nlohmann::json::array();
  for (const auto& c : checks) j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
  return j.dump(2) + "\n";
}

std::vector<std::string> check_names() {
  return {"oracle_equivalence", "all_global",       "star_pattern",         "pair_counts",        "relative_bias_gather",
          "core_math",          "parallel_kernels", "gradients",            "cpc_analytics",      "masking_rates",
          "structure_layout",   "context_permutation", "packing_isolation", "checkpoint_roundtrip", "lift_rules",
          "lifted_forward",     "optimizer"};
}

VerifyReport run_verification(const VerifyOptions& o) {
  const auto names = check_names();
  if (!o.fault.empty() && std::find(names.begin(), names.end(), o.fault) == names.end())
    throw std::invalid_argument("unknown check '" + o.fault + "' for fault injection");
  auto f = [&o](const char* n) { return o.fault == n; };
  const std::uint64_t s = o.seed;
  VerifyReport r;
  r.checks.push_back(check_oracle_equivalence(s, o.trials, f("oracle_equivalence")));
  r.checks.push_back(check_all_global(s, f("all_global")));
  r.checks.push_back(check_star_pattern(f("star_pattern")));
  r.checks.push_back(check_pair_counts(s, 20, f("pair_counts")));
  r.checks.push_back(check_relative_bias_gather(s, f("relative_bias_gather")));
  r.checks.push_back(check_core_math(s, f("core_math")));
  r.checks.push_back(check_parallel_kernels(s, f("parallel_kernels")));
  r.checks.push_back(check_gradients(s, f("gradients")));
  r.checks.push_back(check_cpc_analytics(s, f("cpc_analytics")));
  r.checks.push_back(check_masking_rates(s, f("masking_rates")));
  r.checks.push_back(check_structure_layout(f("structure_layout")));
  r.checks.push_back(check_context_permutation(s, f("context_permutation")));
  r.checks.push_back(check_packing_isolation(s, 20, f("packing_isolation")));
  r.checks.push_back(check_checkpoint_roundtrip(s, f("checkpoint_roundtrip")));
  r.checks.push_back(check_lift_rules(s, f("lift_rules")));
  r.checks.push_back(check_lifted_forward(s, f("lifted_forward")));
  r.checks.push_back(check_optimizer(s, f("optimizer")));
  return r;
}

}  // namespace etc::verify
