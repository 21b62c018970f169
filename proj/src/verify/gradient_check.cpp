// SPDX-License-Identifier: Apache-2.0
#include "etc/verify/gradient_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "etc/structure.hpp"

namespace etc::verify {

GradientReport finite_difference_check(const ParameterSet<double>& params, const LossFn& loss, double eps,
                                       double floor) {
  BoundWeights<double> bound = bind(params, true);
  ag::backward(loss(bound));
  std::vector<std::pair<std::string, Matrix<double>>> analytic;
  for_each_parameter(bound, [&](const std::string& name, const ag::Var<double>& v) { analytic.emplace_back(name, v.grad()); });

  BoundWeights<double> probe = bind(params, false);
  std::vector<ag::Var<double>*> vars;
  for_each_parameter(probe, [&](const std::string&, ag::Var<double>& v) { vars.push_back(&v); });

  ag::NoGradGuard guard;
  GradientReport report;
  for (std::size_t k = 0; k < vars.size(); ++k) {
    Matrix<double>& value = vars[k]->mutable_value();
    const Matrix<double>& g = analytic[k].second;
    GroupError e;
    e.name = analytic[k].first;
    e.entries = value.size();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double up = loss(probe).scalar();
      value.data()[i] = saved - eps;
      const double down = loss(probe).scalar();
      value.data()[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      e.max_abs_diff = std::max(e.max_abs_diff, std::abs(numeric - g.data()[i]));
      e.scale = std::max({e.scale, std::abs(numeric), std::abs(g.data()[i])});
    }
    e.relative = e.max_abs_diff / std::max(e.scale, floor);
    if (report.groups.empty() || e.relative > report.worst) {
      report.worst = e.relative;
      report.worst_group = e.name;
    }
    report.groups.push_back(std::move(e));
  }
  return report;
}

LossFn GradientFixture::mlm_loss() const {
  return [this](const BoundWeights<double>& w) {
    const auto h = encode(mlm_input, w, config);
    return etc::mlm_loss<double>(h.long_seq, mlm_targets, w, config.layer_norm_eps).loss;
  };
}

LossFn GradientFixture::cpc_loss() const {
  return [this](const BoundWeights<double>& w) {
    const auto h = encode(cpc_input, w, config);
    std::vector<std::int32_t> rows(cpc_rows.begin(), cpc_rows.end());
    const auto g1 = ag::gather_rows(h.global, std::span<const std::int32_t>(rows));
    const auto g2 = encode_isolated_sentences(cpc_sentences, w, config);
    return cpc_nce_loss(g1, g2, w.cpc_projection);
  };
}

GradientFixture make_gradient_fixture(std::uint64_t seed) {
  GradientFixture f;
  f.config.layers = 2;
  f.config.hidden = 8;
  f.config.heads = 2;
  f.config.local_radius = 1;
  f.config.clip_distance = 2;
  f.config.vocab_size = 32;
  f.config.max_global = 8;
  f.config.max_long = 16;
  f.config.init_std = 0.3;
  f.config.sharing = Sharing::kSeparate;
  f.params = init_parameters<double>(f.config, seed);
  // Nonzero biases and gains so every group carries gradient signal.
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> jitter(0.0, 0.1);
  for_each_parameter(f.params, [&](const std::string& name, Matrix<double>& m) {
    if (m.rows() == 1)
      for (double& v : m.values()) v += jitter(rng);
    (void)name;
  });

  std::uniform_int_distribution<std::int32_t> token(kFirstRegularId, static_cast<std::int32_t>(f.config.vocab_size) - 1);
  std::vector<Sentence> sentences(2);
  for (auto& s : sentences) {
    for (int i = 0; i < 3; ++i) s.ids.push_back(token(rng));
    s.word_starts = {1, 0, 1};
  }
  f.mlm_input = build_flat_input(sentences, f.config);
  for (std::size_t pos : {1u, 4u}) {
    f.mlm_targets.push_back({pos, f.mlm_input.long_ids[pos]});
    f.mlm_input.long_ids[pos] = f.config.reserved.mask;
  }
  f.cpc_input = build_flat_input(sentences, f.config);
  for (auto& id : f.cpc_input.long_ids) id = f.config.reserved.mask;
  f.cpc_rows = {0, 1};
  f.cpc_sentences = sentences;
  return f;
}

}  // namespace etc::verify
