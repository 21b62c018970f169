// SPDX-License-Identifier: Apache-2.0
#pragma once

// Subcommands of the `etc` executable. Each returns a process exit code:
// 0 success, 1 verification failure, 2 usage or input error.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "etc/config.hpp"
#include "etc/tensor.hpp"

namespace etc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Thrown for malformed user input; mapped to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::uint64_t seed = 7;
  std::string config_path;
  std::string out;
  Precision precision = Precision::kSingle;
  int threads = 0;  // 0 keeps the command default
  std::optional<Sharing> sharing;
};

// Model/training configuration from --config (or defaults) with CLI
// overrides applied.
ModelConfig resolve_model_config(const CommonOptions& common);
TrainConfig resolve_train_config(const CommonOptions& common);

struct VerifyArgs {
  std::size_t trials = 102;
  std::string fault;
};
int cmd_verify(const CommonOptions& common, const VerifyArgs& args, std::ostream& out, std::ostream& err);

struct BenchRow {
  std::size_t n_l = 0, n_g = 0, r = 0;
  double etc_ms = 0, dense_ms = 0;  // negative when out of memory
  std::size_t pairs = 0;
  std::size_t peak_bytes = 0;
  bool etc_oom = false, dense_oom = false;
};

struct BenchArgs {
  std::vector<std::size_t> lengths{256, 512, 1024, 2048};
  std::size_t repeats = 5;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t radius = 32;
  std::size_t n_global = 32;  // 0: n_l / 16
  std::size_t dense_limit_bytes = std::size_t{4} << 30;
};

// Median forward wall time of blocked attention and of a dense all-global
// baseline over the same tokens.
std::vector<BenchRow> run_bench(const BenchArgs& args, std::uint64_t seed);
std::string bench_csv(const std::vector<BenchRow>& rows);
std::string bench_svg(const std::vector<BenchRow>& rows);
int cmd_bench(const CommonOptions& common, const BenchArgs& args, std::ostream& out, std::ostream& err);

struct PretrainArgs {
  std::string corpus;
  std::optional<std::size_t> steps;
};
// Writes <out>/metrics.csv (deterministic), <out>/timing.csv and the
// checkpoint <out>/checkpoint.*.
int cmd_pretrain(const CommonOptions& common, const PretrainArgs& args, std::ostream& out, std::ostream& err);

struct EncodeArgs {
  std::string input;
  std::string checkpoint;  // empty: freshly initialized from --seed
  bool hard_g2l = false;
  bool flat_structure = false;
};
int cmd_encode(const CommonOptions& common, const EncodeArgs& args, std::ostream& out, std::ostream& err);

struct LiftArgs {
  std::string source;
};
int cmd_lift(const CommonOptions& common, const LiftArgs& args, std::ostream& out, std::ostream& err);

// Parses "a,b,c" into ascending positive integers.
std::vector<std::size_t> parse_lengths(const std::string& text);

}  // namespace etc::cli
