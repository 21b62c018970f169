// SPDX-License-Identifier: Apache-2.0
// Parallel kernels vs their serial references, and blocked vs dense
// global-local attention.
#include <benchmark/benchmark.h>

#include <random>

#include "etc/attention.hpp"
#include "etc/encoder.hpp"
#include "etc/kernels.hpp"

namespace {

using etc::Matrix;

Matrix<float> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  Matrix<float> m(r, c);
  for (float& v : m.values()) v = normal(rng);
  return m;
}

void BM_GemmParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix<float> c;
  for (auto _ : state) {
    etc::kernels::gemm_nn(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_GemmParallel)->Arg(128)->Arg(256)->Arg(512);

void BM_GemmSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix<float> c;
  for (auto _ : state) {
    etc::kernels::serial::gemm_nn(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}
BENCHMARK(BM_GemmSerial)->Arg(128)->Arg(256)->Arg(512);

void BM_BandScoresParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_matrix(n, 64, 3), k = random_matrix(n, 64, 4);
  Matrix<float> out;
  for (auto _ : state) {
    etc::kernels::band_scores(q, k, 32, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_BandScoresParallel)->Arg(1024)->Arg(4096);

void BM_BandScoresSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto q = random_matrix(n, 64, 3), k = random_matrix(n, 64, 4);
  Matrix<float> out;
  for (auto _ : state) {
    etc::kernels::serial::band_scores(q, k, 32, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_BandScoresSerial)->Arg(1024)->Arg(4096);

struct AttentionCase {
  etc::AttentionParams<Matrix<float>> params;
  Matrix<float> xg, xl;
  etc::PieceMasks masks;
  etc::PieceLabels labels;
};

AttentionCase make_case(std::size_t n_long) {
  etc::ModelConfig c;
  c.layers = 1;
  c.hidden = 64;
  c.heads = 4;
  c.local_radius = 32;
  c.clip_distance = 8;
  c.max_long = n_long;
  c.init_std = 0.125;
  const std::size_t n_global = 32;
  AttentionCase a{etc::init_parameters<float>(c, 5).layers[0].attention, random_matrix(n_global, 64, 6),
                  random_matrix(n_long, 64, 7), etc::full_masks(n_global, n_long, c.local_radius),
                  etc::sequence_labels(n_global, n_long, c.local_radius, c.clip_distance)};
  return a;
}

void BM_AttentionBlocked(benchmark::State& state) {
  const auto a = make_case(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto out = etc::global_local_attention(a.xg, a.xl, a.params, a.masks, a.labels);
    benchmark::DoNotOptimize(out.long_seq.data());
  }
}
BENCHMARK(BM_AttentionBlocked)->Arg(256)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_AttentionDenseReference(benchmark::State& state) {
  const auto a = make_case(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    auto out = etc::dense_reference_attention(a.xg, a.xl, a.params, a.masks, a.labels);
    benchmark::DoNotOptimize(out.long_seq.data());
  }
}
BENCHMARK(BM_AttentionDenseReference)->Arg(256)->Arg(512)->Arg(1024)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
