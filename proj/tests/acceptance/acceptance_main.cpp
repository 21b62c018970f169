// SPDX-License-Identifier: Apache-2.0
// One pass/fail line per acceptance criterion; exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "etc/config.hpp"
#include "etc/pretraining.hpp"
#include "etc/tokenizer.hpp"
#include "etc/verify/suite.hpp"

namespace {

using etc::verify::CheckResult;

struct Outcome {
  bool passed = false;
  std::string detail;
};

Outcome combine(std::initializer_list<CheckResult> checks) {
  Outcome o{true, ""};
  for (const auto& c : checks) {
    o.passed = o.passed && c.passed;
    if (!o.detail.empty()) o.detail += "; ";
    o.detail += c.name + ": " + c.detail;
  }
  return o;
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.precision(digits);
  s << std::fixed << v;
  return s.str();
}

Outcome complexity() {
  Outcome o = combine({etc::verify::check_pair_counts(7, 20)});
  etc::cli::BenchArgs args;
  args.lengths = {512, 1024, 2048};
  args.repeats = 9;
  const auto rows = etc::cli::run_bench(args, 7);
  std::string ratios;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double etc_ratio = rows[i].etc_ms / rows[i - 1].etc_ms;
    const double dense_ratio = rows[i].dense_ms / rows[i - 1].dense_ms;
    const bool ok = !rows[i].dense_oom && !rows[i - 1].dense_oom && etc_ratio >= 1.5 && etc_ratio <= 2.6 &&
                    dense_ratio >= 3.0 && dense_ratio <= 5.0;
    o.passed = o.passed && ok;
    ratios += " n_l " + std::to_string(rows[i - 1].n_l) + "->" + std::to_string(rows[i].n_l) + ": etc x" +
              fmt(etc_ratio, 2) + ", dense x" + fmt(dense_ratio, 2) + ";";
  }
  o.detail += "; timing" + ratios + " (etc in [1.5, 2.6], dense in [3.0, 5.0])";
  return o;
}

Outcome pretraining_smoke() {
  const std::string root = ETC_SOURCE_DIR;
  const auto config = etc::load_model_config(root + "/configs/toy.json");
  const auto train = etc::load_train_config(root + "/configs/toy.json");
  std::ifstream in(root + "/data/toy_corpus.txt");
  std::stringstream text;
  text << in.rdbuf();
  etc::Pretrainer<float> trainer(etc::tokenize_corpus(text.str(), config.vocab_size), config, train, 7);
  constexpr std::size_t kSteps = 200, kWindow = 20;
  std::vector<etc::StepMetrics> history;
  for (std::size_t s = 0; s < kSteps; ++s) history.push_back(trainer.step());
  const double mlm_start = history.front().mlm_loss;
  double mlm_end = 0, cpc_ratio = 0, cpc_loss = 0;
  std::size_t cpc_steps = 0;
  for (std::size_t s = kSteps - kWindow; s < kSteps; ++s) {
    mlm_end += history[s].mlm_loss / kWindow;
    if (history[s].cpc_batch >= 2 && std::isfinite(history[s].cpc_loss)) {
      cpc_ratio += history[s].cpc_loss / std::log(static_cast<double>(history[s].cpc_batch));
      cpc_loss += history[s].cpc_loss;
      ++cpc_steps;
    }
  }
  const double drop = 1.0 - mlm_end / mlm_start;
  cpc_ratio = cpc_steps ? cpc_ratio / cpc_steps : INFINITY;
  cpc_loss = cpc_steps ? cpc_loss / cpc_steps : INFINITY;
  Outcome o;
  o.passed = drop >= 0.30 && cpc_ratio < 1.0;
  o.detail = "MLM " + fmt(mlm_start) + " -> " + fmt(mlm_end) + " (drop " + fmt(100 * drop, 1) +
             "%, need >= 30%); CPC final mean " + fmt(cpc_loss) + " = " + fmt(cpc_ratio) + " x ln B (need < 1)";
  return o;
}

}  // namespace

int main() {
  namespace v = etc::verify;
  const std::uint64_t seed = 7;
  struct Criterion {
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"oracle equivalence", 120, [&] { return combine({v::check_oracle_equivalence(seed, 102)}); }},
      {"special cases", 0, [&] { return combine({v::check_all_global(seed), v::check_star_pattern()}); }},
      {"complexity", 300, complexity},
      {"gradients", 0, [&] { return combine({v::check_gradients(seed)}); }},
      {"CPC analytics", 0, [&] { return combine({v::check_cpc_analytics(seed)}); }},
      {"masking rates", 0, [&] { return combine({v::check_masking_rates(seed)}); }},
      {"packing isolation", 0, [&] { return combine({v::check_packing_isolation(seed, 20)}); }},
      {"lifting", 0,
       [&] {
         return combine({v::check_checkpoint_roundtrip(seed), v::check_lift_rules(seed), v::check_lifted_forward(seed)});
       }},
      {"pre-training smoke", 600, pretraining_smoke},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.passed = false;
      o.detail += "; over time budget of " + fmt(c.budget_s, 0) + " s";
    }
    all = all && o.passed;
    std::cout << "criterion " << i + 1 << " " << (o.passed ? "PASS" : "FAIL") << " [" << c.name << "] (" << fmt(secs, 1)
              << " s) " << o.detail << std::endl;
  }
  std::cout << (all ? "ACCEPTANCE: ALL PASS" : "ACCEPTANCE: FAILURES") << std::endl;
  return all ? 0 : 1;
}
