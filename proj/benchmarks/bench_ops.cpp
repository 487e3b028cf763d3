#include <benchmark/benchmark.h>

#include "gapnet/labels.h"
#include "gapnet/metrics.h"
#include "gapnet/nn.h"
#include "gapnet/rng.h"

using namespace gapnet;

namespace {

Tensor<float> random_tensor(Shape shape, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

}  // namespace

static void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const auto x = random_tensor({1, c, 48, 48}, 1);
  const auto w = random_tensor({c, c, 3, 3}, 2);
  Conv2dGeom g;
  g.pad_h = g.pad_w = 1;
  for (auto _ : state) {
    auto y = conv2d(x, w, nullptr, g);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(c) * c * 48 * 48 * 9);
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(48)->Arg(96);

static void BM_DepthwiseConv(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const auto x = random_tensor({1, c, 48, 48}, 3);
  const auto w = random_tensor({c, 1, 3, 3}, 4);
  Conv2dGeom g;
  g.pad_h = g.pad_w = 1;
  g.groups = c;
  for (auto _ : state) {
    auto y = conv2d(x, w, nullptr, g);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(BM_DepthwiseConv)->Arg(96)->Arg(192);

static void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto a = random_tensor({n, n}, 5);
  const auto b = random_tensor({n, n}, 6);
  for (auto _ : state) {
    auto y = matmul(a, b);
    benchmark::DoNotOptimize(y.data.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(n) * n * n);
}
BENCHMARK(BM_Matmul)->Arg(144)->Arg(720);

static void BM_Softmax(benchmark::State& state) {
  const auto x = random_tensor({720, 144}, 7);
  for (auto _ : state) {
    auto y = softmax_lastdim(x);
    benchmark::DoNotOptimize(y.data.data());
  }
}
BENCHMARK(BM_Softmax);

static void BM_DistanceTransform(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(8);
  BinaryMask mask(size, size);
  for (auto& b : mask.bits) b = rng.uniform() < 0.6 ? 1 : 0;
  for (auto _ : state) {
    auto d = edt_squared(mask);
    benchmark::DoNotOptimize(d.data());
  }
  state.SetItemsProcessed(state.iterations() * int64_t(size) * size);
}
BENCHMARK(BM_DistanceTransform)->Arg(64)->Arg(384);

static void BM_WeightedF(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(9);
  BinaryMask gt(size, size);
  for (int y = size / 4; y < 3 * size / 4; ++y) {
    for (int x = size / 4; x < 3 * size / 4; ++x) gt.at(y, x) = 1;
  }
  metrics::RealMap pred(size, size);
  for (auto& v : pred.values) v = rng.uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::f_weighted(pred, gt));
  }
}
BENCHMARK(BM_WeightedF)->Arg(128)->Arg(384);

static void BM_EMeasure(benchmark::State& state) {
  Rng rng(10);
  BinaryMask gt(128, 128);
  for (int y = 32; y < 96; ++y) {
    for (int x = 32; x < 96; ++x) gt.at(y, x) = 1;
  }
  metrics::RealMap pred(128, 128);
  for (auto& v : pred.values) v = rng.uniform();
  for (auto _ : state) {
    benchmark::DoNotOptimize(metrics::e_measure(pred, gt));
  }
}
BENCHMARK(BM_EMeasure);

BENCHMARK_MAIN();
