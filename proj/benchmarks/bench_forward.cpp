#include <benchmark/benchmark.h>

#include "pgr/network.hpp"
#include "pgr/random.hpp"

using namespace pgr;

namespace {

PriorTemplateSet bench_priors() {
  PriorTemplateSet set;
  set.params.height = set.params.width = 64;
  RoiPrior a;
  a.r = 0.15;
  a.cx = 0.35;
  a.cy = 0.40;
  a.support = 100;
  RoiPrior b;
  b.r = 0.25;
  b.cx = 0.65;
  b.cy = 0.60;
  b.support = 90;
  set.priors = {a, b};
  return set;
}

Tensor random_image(int size, Rng& rng) {
  std::vector<real> data(static_cast<std::size_t>(size) * size);
  for (real& v : data) v = rng.normal();
  return Tensor::from({1, size, size}, std::move(data));
}

NetConfig toy_cfg() {
  NetConfig cfg;
  cfg.levels = 3;
  cfg.channels = {8, 16, 32};
  cfg.heads = 2;
  return cfg;
}

void bench_forward_roi(benchmark::State& state) {
  PgrNet net(toy_cfg(), bench_priors());
  Rng rng(3);
  Tensor img = random_image(64, rng);
  for (auto _ : state) {
    PgrNet::Output out = net.forward(img, ForwardMode::SoftTraining);
    benchmark::DoNotOptimize(out.logits.data().data());
  }
}

void bench_forward_fallback(benchmark::State& state) {
  PgrNet net(toy_cfg(), bench_priors());
  Rng rng(3);
  Tensor img = random_image(64, rng);
  for (auto _ : state) {
    PgrNet::Output out = net.forward(img, ForwardMode::FallbackForced);
    benchmark::DoNotOptimize(out.logits.data().data());
  }
}

void bench_train_step(benchmark::State& state) {
  PgrNet net(toy_cfg(), bench_priors());
  Rng rng(3);
  Tensor img = random_image(64, rng);
  LabelGrid mask;
  mask.height = mask.width = 64;
  mask.labels.assign(64 * 64, 0);
  for (int y = 20; y < 36; ++y)
    for (int x = 24; x < 40; ++x) mask.at(y, x) = 1;
  Tensor target = make_target(mask, 1);
  NamedParams params = net.parameters();
  Adam adam(1e-3);
  Tape tape;
  for (auto _ : state) {
    Adam::zero_grads(params);
    Tape::Scope scope(tape);
    PgrNet::Output out = net.forward(img, ForwardMode::SoftTraining);
    Tensor loss = segmentation_loss(out.logits, target);
    backward(loss);
    adam.step(params);
    benchmark::DoNotOptimize(loss.item());
  }
}

}  // namespace

BENCHMARK(bench_forward_roi)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_forward_fallback)->Unit(benchmark::kMillisecond);
BENCHMARK(bench_train_step)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
