// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "CLI11.hpp"

#include "commands.hpp"
#include "etc/checkpoint.hpp"

namespace {

bool on_off(const std::string& value) { return value == "on"; }

}  // namespace

int main(int argc, char** argv) {
  using namespace etc::cli;
  CLI::App app{"ETC: global-local attention encoder"};
  app.require_subcommand(1);

  CommonOptions common;
  std::string precision = "single", sharing;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Random seed")->capture_default_str();
    sub->add_option("--config", common.config_path, "JSON model/training config")->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "Output path");
    sub->add_option("--precision", precision, "single or double")->check(CLI::IsMember({"single", "double"}));
    sub->add_option("--threads", common.threads, "Worker threads")->check(CLI::NonNegativeNumber);
    sub->add_option("--sharing", sharing, "shared or separate")->check(CLI::IsMember({"shared", "separate"}));
  };

  VerifyArgs verify_args;
  auto* verify = app.add_subcommand("verify", "Run every property and oracle suite");
  add_common(verify);
  verify->add_option("--trials", verify_args.trials, "Random attention configurations")->capture_default_str();
  verify->add_option("--fault", verify_args.fault, "Perturb the named check (test hook)");

  BenchArgs bench_args;
  std::string lengths;
  std::string ng_rule = "fixed";
  auto* bench = app.add_subcommand("bench", "Attention wall time vs long input length");
  add_common(bench);
  bench->add_option("--lengths", lengths, "Ascending long lengths, e.g. 256,512,1024");
  bench->add_option("--repeats", bench_args.repeats, "Timed repeats per length")->capture_default_str();
  bench->add_option("--radius", bench_args.radius, "Local radius r")->capture_default_str();
  bench->add_option("--global", bench_args.n_global, "Global length for the fixed rule")->capture_default_str();
  bench->add_option("--global-rule", ng_rule, "fixed or sixteenth (n_g = n_l / 16)")
      ->check(CLI::IsMember({"fixed", "sixteenth"}));
  bench->add_option("--hidden", bench_args.hidden, "Model width")->capture_default_str();
  bench->add_option("--heads", bench_args.heads, "Attention heads")->capture_default_str();

  PretrainArgs pretrain_args;
  std::size_t steps = 200;
  auto* pretrain = app.add_subcommand("pretrain", "MLM + CPC pre-training on a text corpus");
  add_common(pretrain);
  pretrain->add_option("--corpus", pretrain_args.corpus, "Plain text, documents separated by blank lines")
      ->required()
      ->check(CLI::ExistingFile);
  pretrain->add_option("--steps", steps, "Optimizer steps")->capture_default_str();

  EncodeArgs encode_args;
  std::string hard_g2l = "off", flat_structure = "off";
  auto* encode = app.add_subcommand("encode", "Encode text or structured JSON");
  add_common(encode);
  encode->add_option("--input", encode_args.input, "Text or structured JSON input")->required()->check(CLI::ExistingFile);
  encode->add_option("--checkpoint", encode_args.checkpoint, "Checkpoint name (without extension)");
  encode->add_option("--hard-g2l", hard_g2l, "on or off")->check(CLI::IsMember({"on", "off"}));
  encode->add_option("--flat-structure", flat_structure, "on or off")->check(CLI::IsMember({"on", "off"}));

  LiftArgs lift_args;
  auto* lift = app.add_subcommand("lift", "Initialize from a BERT-layout checkpoint");
  add_common(lift);
  lift->add_option("--src", lift_args.source, "Source checkpoint name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    common.precision = etc::parse_precision(precision);
    if (!sharing.empty()) common.sharing = etc::parse_sharing(sharing);
    if (*verify) return cmd_verify(common, verify_args, std::cout, std::cerr);
    if (*bench) {
      if (!lengths.empty()) bench_args.lengths = parse_lengths(lengths);
      if (ng_rule == "sixteenth") bench_args.n_global = 0;
      return cmd_bench(common, bench_args, std::cout, std::cerr);
    }
    if (*pretrain) {
      pretrain_args.steps = steps;
      return cmd_pretrain(common, pretrain_args, std::cout, std::cerr);
    }
    if (*encode) {
      encode_args.hard_g2l = on_off(hard_g2l);
      encode_args.flat_structure = on_off(flat_structure);
      return cmd_encode(common, encode_args, std::cout, std::cerr);
    }
    if (*lift) return cmd_lift(common, lift_args, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
