// SPDX-License-Identifier: Apache-2.0
#pragma once

// Property suites behind `etc verify` and the acceptance binary. Every check
// is deterministic in its seed; `fault` perturbs the checked computation so
// the harness itself can be tested.

#include <cstdint>
#include <string>
#include <vector>

namespace etc::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Blocked vs dense reference vs naive oracle over random geometries, masks
// and labels (single precision), spread over three seeds.
CheckResult check_oracle_equivalence(std::uint64_t seed, std::size_t trials, bool fault = false);
// n_l = 0 with full masks and zero relative vectors is plain attention.
CheckResult check_all_global(std::uint64_t seed, bool fault = false);
// r = 1, n_g = 1 realizes the Star-Transformer pattern.
CheckResult check_star_pattern(bool fault = false);
CheckResult check_pair_counts(std::uint64_t seed, std::size_t tuples, bool fault = false);
CheckResult check_relative_bias_gather(std::uint64_t seed, bool fault = false);
CheckResult check_core_math(std::uint64_t seed, bool fault = false);
CheckResult check_parallel_kernels(std::uint64_t seed, bool fault = false);
CheckResult check_gradients(std::uint64_t seed, bool fault = false);
CheckResult check_cpc_analytics(std::uint64_t seed, bool fault = false);
CheckResult check_masking_rates(std::uint64_t seed, bool fault = false);
CheckResult check_structure_layout(bool fault = false);
CheckResult check_context_permutation(std::uint64_t seed, bool fault = false);
CheckResult check_packing_isolation(std::uint64_t seed, std::size_t pairs, bool fault = false);
CheckResult check_checkpoint_roundtrip(std::uint64_t seed, bool fault = false);
CheckResult check_lift_rules(std::uint64_t seed, bool fault = false);
CheckResult check_lifted_forward(std::uint64_t seed, bool fault = false);
CheckResult check_optimizer(std::uint64_t seed, bool fault = false);

struct VerifyOptions {
  std::uint64_t seed = 7;
  std::size_t trials = 102;  // random attention configurations
  std::string fault;         // name of a check to perturb; empty for none
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool all_passed() const;
  std::string text() const;
  std::string json() const;
};

std::vector<std::string> check_names();
VerifyReport run_verification(const VerifyOptions& options);

}  // namespace etc::verify
