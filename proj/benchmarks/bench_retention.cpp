#include <benchmark/benchmark.h>

#include "pgr/random.hpp"
#include "pgr/retention.hpp"

using namespace pgr;

namespace {

Tensor random_matrix(int rows, int cols, Rng& rng) {
  std::vector<real> data(static_cast<std::size_t>(rows) * cols);
  for (real& v : data) v = rng.normal();
  return Tensor::from({rows, cols}, std::move(data));
}

void bench_parallel(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(7);
  RetentionParams params = make_retention_params(16, 2, rng);
  Tensor x = random_matrix(n, 16, rng);
  for (auto _ : state) {
    Tensor out = multihead_retention_parallel(x, params);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetComplexityN(n);
}

void bench_recurrent(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(7);
  RetentionParams params = make_retention_params(16, 2, rng);
  Tensor x = random_matrix(n, 16, rng);
  for (auto _ : state) {
    Tensor out = multihead_retention_recurrent(x, params);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetComplexityN(n);
}

void bench_block(benchmark::State& state) {
  int n = static_cast<int>(state.range(0));
  Rng rng(7);
  RetentionBlock block = make_retention_block(16, 2, rng);
  Tensor x = random_matrix(n, 16, rng);
  for (auto _ : state) {
    Tensor out = retention_block_forward(x, block);
    benchmark::DoNotOptimize(out.data().data());
  }
}

}  // namespace

BENCHMARK(bench_parallel)->RangeMultiplier(2)->Range(16, 1024)->Complexity();
BENCHMARK(bench_recurrent)->RangeMultiplier(2)->Range(16, 1024)->Complexity();
BENCHMARK(bench_block)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
