#include <benchmark/benchmark.h>

#include "gapnet/blocks.h"
#include "gapnet/model.h"

using namespace gapnet;

namespace {

Tensor<float> random_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({1, 3, h, w});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

static void BM_GpcForward(benchmark::State& state) {
  Rng rng(1);
  GpcConfig cfg;
  cfg.channels = 48;
  GranularPyramidConv<float> gpc(cfg, rng);
  Rng drng(2);
  Tensor<float> x({1, 48, 96, 96});
  for (auto& v : x.data) v = static_cast<float>(drng.uniform(-1.0, 1.0));
  for (auto _ : state) {
    auto y = gpc.forward(x, Context<float>{});
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(BM_GpcForward)->Unit(benchmark::kMillisecond);

static void BM_CsaForward(benchmark::State& state) {
  Rng rng(3);
  CsaConfig cfg;
  CrossScaleAttention<float> csa(cfg, rng);
  Rng drng(4);
  Tensor<float> low({1, 576, 64});
  Tensor<float> high({1, 144, 64});
  for (auto& v : low.data) v = static_cast<float>(drng.uniform(-1.0, 1.0));
  for (auto& v : high.data) v = static_cast<float>(drng.uniform(-1.0, 1.0));
  for (auto _ : state) {
    auto y = csa.forward(low, high, Context<float>{}, nullptr);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(BM_CsaForward)->Unit(benchmark::kMillisecond);

static void BM_ToyForward64(benchmark::State& state) {
  GapNet<float> model(ModelConfig::toy_preset(), 5);
  const auto image = random_image(64, 64, 6);
  for (auto _ : state) {
    auto out = model.forward_image(image, Context<float>{});
    benchmark::DoNotOptimize(out.p3.data.data());
  }
}
BENCHMARK(BM_ToyForward64)->Unit(benchmark::kMillisecond);

static void BM_PaperForward384(benchmark::State& state) {
  GapNet<float> model(ModelConfig::paper_preset(), 7);
  const auto image = random_image(384, 384, 8);
  for (auto _ : state) {
    auto out = model.forward_image(image, Context<float>{});
    benchmark::DoNotOptimize(out.p3.data.data());
  }
}
BENCHMARK(BM_PaperForward384)->Unit(benchmark::kMillisecond)->Iterations(3);

BENCHMARK_MAIN();
