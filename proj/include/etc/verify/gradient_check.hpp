// SPDX-License-Identifier: Apache-2.0
#pragma once

// Central finite differences against the autodiff gradients, grouped by
// parameter tensor.

#include <functional>
#include <string>
#include <vector>

#include "etc/autograd.hpp"
#include "etc/config.hpp"
#include "etc/encoder.hpp"
#include "etc/pretraining.hpp"

namespace etc::verify {

struct GroupError {
  std::string name;
  double max_abs_diff = 0;
  double scale = 0;     // max(|analytic|, |numeric|) over the group
  double relative = 0;  // max_abs_diff / max(scale, floor)
  std::size_t entries = 0;
};

struct GradientReport {
  std::vector<GroupError> groups;
  double worst = 0;
  std::string worst_group;
};

using LossFn = std::function<ag::Var<double>(const BoundWeights<double>&)>;

GradientReport finite_difference_check(const ParameterSet<double>& params, const LossFn& loss, double eps = 1e-3,
                                       double floor = 1e-6);

// Two-layer model (d_x = 8, h = 2, n_g = 2, n_l = 6, r = 1) with an MLM
// input and a CPC batch of two masked sentences.
struct GradientFixture {
  ModelConfig config;
  ParameterSet<double> params;
  EtcInput mlm_input;
  std::vector<MlmTarget> mlm_targets;
  EtcInput cpc_input;
  std::vector<std::size_t> cpc_rows;
  std::vector<Sentence> cpc_sentences;

  LossFn mlm_loss() const;
  LossFn cpc_loss() const;
};

GradientFixture make_gradient_fixture(std::uint64_t seed);

}  // namespace etc::verify
