#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>

#include "gapnet/backbone.h"
#include "gapnet/grad_check.h"

using namespace gapnet;

namespace {

int64_t total_params(Backbone<double>& bb) {
  ParamList<double> params;
  bb.collect_params("b", params);
  int64_t n = 0;
  for (auto& p : params) n += p.tensor->numel();
  return n;
}

}  // namespace

TEST_CASE("paper preset stage shapes at 384") {
  Rng rng(1);
  Backbone<float> bb(BackboneConfig::mobilenet_v2(1.0), rng);
  CHECK(bb.stage_channels() == std::array<int, 4>{24, 32, 96, 320});

  Tensor<float> image({1, 3, 384, 384});
  const auto stages = bb.encode(image, Context<float>{});
  // Stride ladder 4/8/16/32 applied to the input extent.
  CHECK(stages.e1.shape == Shape{1, 24, 96, 96});
  CHECK(stages.e2.shape == Shape{1, 32, 48, 48});
  CHECK(stages.e3.shape == Shape{1, 96, 24, 24});
  CHECK(stages.e4.shape == Shape{1, 320, 12, 12});
}

TEST_CASE("toy preset stage shapes at 64") {
  Rng rng(2);
  Backbone<float> bb(BackboneConfig::mobilenet_v2(0.25), rng);
  Tensor<float> image({1, 3, 64, 64});
  const auto stages = bb.encode(image, Context<float>{});
  CHECK(stages.e1.shape[2] == 16);
  CHECK(stages.e1.shape[3] == 16);
  CHECK(stages.e2.shape[2] == 8);
  CHECK(stages.e3.shape[2] == 4);
  CHECK(stages.e4.shape[2] == 2);
}

TEST_CASE("indivisible input extents are rejected") {
  Rng rng(3);
  Backbone<float> bb(BackboneConfig::mobilenet_v2(0.25), rng);
  Tensor<float> image({1, 3, 100, 100});
  CHECK_THROWS_AS(bb.encode(image, Context<float>{}), std::invalid_argument);
}

TEST_CASE("toy preset has fewer parameters than the paper preset") {
  Rng rng(4);
  Backbone<double> paper(BackboneConfig::mobilenet_v2(1.0), rng);
  Backbone<double> toy(BackboneConfig::mobilenet_v2(0.25), rng);
  const int64_t np = total_params(paper);
  const int64_t nt = total_params(toy);
  CHECK(nt < np);
  // The paper preset is the standard feature-extractor layout.
  CHECK(np == 1811712);
}

TEST_CASE("same seed gives bit-identical parameters") {
  auto build = [] {
    Rng rng(99);
    return Backbone<double>(BackboneConfig::mobilenet_v2(0.25), rng);
  };
  Backbone<double> a = build();
  Backbone<double> b = build();
  ParamList<double> pa, pb;
  a.collect_params("x", pa);
  b.collect_params("x", pb);
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].tensor->data == pb[i].tensor->data);
  }
}

TEST_CASE("residual-eligible blocks reproduce inputs bit-exactly when zeroed") {
  Rng rng(5);
  Backbone<double> bb(BackboneConfig::mobilenet_v2(0.25), rng);
  int checked = 0;
  for (auto& block : bb.blocks()) {
    if (!block.residual) continue;
    ParamList<double> params;
    block.collect_params("b", params);
    for (auto& p : params) {
      for (auto& v : p.tensor->data) v = 0.0;
    }
    Tensor<double> x({1, block.in_channels, 4, 4});
    Rng data_rng(7);
    for (auto& v : x.data) v = data_rng.uniform(0.05, 1.0);
    const auto y = block.forward(x, Context<double>{});
    REQUIRE(y.shape == x.shape);
    CHECK(std::memcmp(y.data.data(), x.data.data(), x.data.size() * sizeof(double)) == 0);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("gradient flows to sampled backbone parameters") {
  Rng rng(6);
  Backbone<double> bb(BackboneConfig::mobilenet_v2(0.25), rng);
  Tensor<double> image({1, 3, 64, 64});
  Rng drng(8);
  for (auto& v : image.data) v = drng.uniform(-1.0, 1.0);

  ParamList<double> params;
  bb.collect_params("bb", params);
  // A spread of parameters across depth: stem, early, middle, late, last.
  const size_t picks[] = {0, params.size() / 4, params.size() / 2, 3 * params.size() / 4,
                          params.size() - 1};
  for (size_t pick : picks) {
    Tensor<double>* target = params[pick].tensor;
    const int64_t coord = std::min<int64_t>(1, target->numel() - 1);
    auto loss_with = [&](double value) {
      const double saved = target->data[static_cast<size_t>(coord)];
      target->data[static_cast<size_t>(coord)] = value;
      Context<double> ctx;
      ctx.training = true;
      ctx.update_stats = false;
      const auto stages = bb.encode(image, ctx);
      double acc = 0.0;
      for (double v : stages.e4.data) acc += v * v;
      target->data[static_cast<size_t>(coord)] = saved;
      return acc;
    };
    // Analytic gradient via the tape.
    Tape<double> tape;
    for (auto& p : params) tape.watch(*p.tensor);
    Context<double> ctx;
    ctx.tape = &tape;
    ctx.training = true;
    ctx.update_stats = false;
    const auto stages = bb.encode(image, ctx);
    const auto loss = reduce_sum(mul(stages.e4, stages.e4, ctx), {0, 1, 2, 3}, false, ctx);
    tape.backward(loss);
    const double analytic = tape.grad_of(*target)[static_cast<size_t>(coord)];

    // Deep batch-normalized stacks carry large higher-order curvature, so
    // the step must stay small for the central difference to settle.
    const double h = 1e-6;
    const double base = target->data[static_cast<size_t>(coord)];
    const double fd = (loss_with(base + h) - loss_with(base - h)) / (2 * h);
    const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-3});
    CHECK(std::abs(analytic - fd) / denom < 1e-3);
  }
}

TEST_CASE("a config without the full stride ladder is rejected") {
  BackboneConfig broken;
  broken.blocks = {IrbSpec{1, 16, 2}, IrbSpec{6, 24, 2}};  // reaches stride 8, never 16/32
  Rng rng(9);
  CHECK_THROWS_AS(Backbone<double>(broken, rng), std::invalid_argument);
}
