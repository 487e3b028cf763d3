#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "gapnet/grad_check.h"
#include "gapnet/model.h"

using namespace gapnet;
namespace fs = std::filesystem;

namespace {

template <typename T>
Tensor<T> random_image(int n, int h, int w, uint64_t seed) {
  Rng rng(seed);
  Tensor<T> img({n, 3, h, w});
  for (auto& v : img.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
  return img;
}

}  // namespace

TEST_CASE("image forward shapes at 384 with the paper preset") {
  GapNet<float> model(ModelConfig::paper_preset(), 3);
  const auto image = random_image<float>(1, 384, 384, 11);
  const auto out = model.forward_image(image, Context<float>{});

  CHECK(out.d1.shape == Shape{1, 48, 96, 96});   // stride 4
  CHECK(out.d2.shape == Shape{1, 64, 24, 24});   // stride 16
  CHECK(out.d3.shape == Shape{1, 48, 96, 96});   // stride 4
  CHECK(out.p1.shape == Shape{1, 1, 384, 384});
  CHECK(out.p2.shape == Shape{1, 1, 384, 384});
  CHECK(out.p3.shape == Shape{1, 1, 384, 384});
  CHECK(out.aux.empty());  // default supervision setting carries no extra heads
}

TEST_CASE("toy forward produces probability maps in (0,1)") {
  GapNet<float> model(ModelConfig::toy_preset(), 5);
  const auto image = random_image<float>(1, 64, 64, 13);
  // Batch statistics keep an untrained net's activations in scale; eval
  // mode matches once the running stats have converged during training.
  Context<float> ctx;
  ctx.training = true;
  ctx.update_stats = false;
  const auto out = model.forward_image(image, ctx);
  for (const auto* p : {&out.p1, &out.p2, &out.p3}) {
    CHECK(p->shape == Shape{1, 1, 64, 64});
    float lo = 1.0f, hi = 0.0f;
    for (float v : p->data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo > 0.0f);
    CHECK(hi < 1.0f);
  }
  // Eval mode stays within the closed unit interval even when saturated.
  const auto eval_out = model.forward_image(image, Context<float>{});
  for (float v : eval_out.p3.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("forward is deterministic") {
  GapNet<float> model(ModelConfig::toy_preset(), 5);
  const auto image = random_image<float>(1, 64, 64, 17);
  const auto a = model.forward_image(image, Context<float>{});
  const auto b = model.forward_image(image, Context<float>{});
  CHECK(a.p3.data == b.p3.data);
  CHECK(a.p1.data == b.p1.data);
}

TEST_CASE("same seed builds bit-identical models") {
  GapNet<float> a(ModelConfig::toy_preset(), 21);
  GapNet<float> b(ModelConfig::toy_preset(), 21);
  auto pa = a.parameters();
  auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    REQUIRE(pa[i].tensor->data == pb[i].tensor->data);
  }
}

TEST_CASE("eval-mode outputs are invariant to batch composition") {
  GapNet<float> model(ModelConfig::toy_preset(), 7);
  const auto batch = random_image<float>(2, 64, 64, 19);
  Tensor<float> first({1, 3, 64, 64});
  Tensor<float> second({1, 3, 64, 64});
  const size_t plane = 3 * 64 * 64;
  std::copy(batch.data.begin(), batch.data.begin() + plane, first.data.begin());
  std::copy(batch.data.begin() + plane, batch.data.end(), second.data.begin());

  const auto joint = model.forward_image(batch, Context<float>{});
  const auto solo1 = model.forward_image(first, Context<float>{});
  const auto solo2 = model.forward_image(second, Context<float>{});
  const size_t out_plane = 64 * 64;
  for (size_t i = 0; i < out_plane; ++i) {
    CHECK(joint.p3.data[i] == solo1.p3.data[i]);
    CHECK(joint.p3.data[out_plane + i] == solo2.p3.data[i]);
  }
}

TEST_CASE("supervision settings determine the auxiliary heads") {
  auto build = [](char setting) {
    ModelConfig cfg = ModelConfig::toy_preset();
    cfg.supervision_setting = setting;
    return GapNet<float>(cfg, 3);
  };
  const auto image = random_image<float>(1, 64, 64, 23);

  auto a = build('a').forward_image(image, Context<float>{});
  CHECK(a.aux.count("dl"));
  CHECK(a.aux.count("dh"));
  CHECK(a.aux.count("gf"));
  auto b = build('b').forward_image(image, Context<float>{});
  CHECK(b.aux.count("dl"));
  CHECK(b.aux.count("dh"));
  CHECK_FALSE(b.aux.count("gf"));
  auto e = build('e').forward_image(image, Context<float>{});
  CHECK_FALSE(e.aux.count("dl"));
  CHECK(e.aux.count("gf"));
  auto f = build('f').forward_image(image, Context<float>{});
  CHECK(f.aux.empty());
  for (const auto& [name, map] : a.aux) {
    CHECK(map.shape == Shape{1, 1, 64, 64});
  }
}

TEST_CASE("fuse_low_video closed forms") {
  Rng rng(29);
  Tensor<double> rgbv({1, 4, 3, 3});
  for (auto& v : rgbv.data) v = rng.uniform(-1.0, 1.0);
  Tensor<double> zero({1, 4, 3, 3});

  // flow = 0: out = rgb * sigmoid(0) + rgb + 0 = 1.5 * rgb, exactly.
  const auto gated = fuse_low_video(rgbv, zero);
  for (size_t i = 0; i < gated.data.size(); ++i) {
    CHECK(gated.data[i] == doctest::Approx(1.5 * rgbv.data[i]).epsilon(1e-15));
  }
  // rgb = 0: out = flow.
  const auto passthrough = fuse_low_video(zero, rgbv);
  CHECK(passthrough.data == rgbv.data);

  CHECK_THROWS_AS(fuse_low_video(rgbv, Tensor<double>({1, 4, 2, 2})), std::invalid_argument);
}

TEST_CASE("fuse_low_video gradient check") {
  Rng rng(31);
  Tensor<double> flow({1, 2, 3, 3});
  for (auto& v : flow.data) v = rng.uniform(-1.0, 1.0);
  auto f = [&](const Tensor<double>& rgbv, const Context<double>& ctx) {
    auto y = fuse_low_video(rgbv, flow, ctx);
    return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
  };
  Tensor<double> x({1, 2, 3, 3});
  for (auto& v : x.data) v = rng.uniform(-1.0, 1.0);
  CHECK(grad_check<double>(f, x, 1e-4).pass);

  auto g = [&](const Tensor<double>& flowv, const Context<double>& ctx) {
    auto y = fuse_low_video(x, flowv, ctx);
    return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
  };
  CHECK(grad_check<double>(g, flow, 1e-4).pass);
}

TEST_CASE("video forward with the flow stream neutralized equals the image forward") {
  ModelConfig cfg = ModelConfig::toy_preset();
  cfg.video = true;
  GapNet<float> model(cfg, 37);
  const auto rgb = random_image<float>(1, 64, 64, 41);
  Tensor<float> flow({1, 3, 64, 64});
  Rng rng(43);
  for (auto& v : flow.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

  const auto video_out = model.forward_video(rgb, flow, Context<float>{}, /*bypass_flow=*/true);
  const auto image_out = model.forward_image(rgb, Context<float>{});
  REQUIRE(video_out.p3.shape == image_out.p3.shape);
  for (size_t i = 0; i < video_out.p3.data.size(); ++i) {
    CHECK(std::abs(video_out.p3.data[i] - image_out.p3.data[i]) < 1e-6f);
  }

  // With fusion active the output differs and shapes still hold.
  const auto fused = model.forward_video(rgb, flow, Context<float>{});
  CHECK(fused.p3.shape == Shape{1, 1, 64, 64});
  double diff = 0.0;
  for (size_t i = 0; i < fused.p3.data.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(fused.p3.data[i]) - image_out.p3.data[i]));
  }
  CHECK(diff > 1e-6);

  // A 2-channel flow is accepted (magnitude channel appended internally).
  Tensor<float> flow2({1, 2, 64, 64});
  for (auto& v : flow2.data) v = 0.25f;
  CHECK(model.forward_video(rgb, flow2, Context<float>{}).p3.shape == Shape{1, 1, 64, 64});

  CHECK_THROWS_AS(model.forward_video(rgb, Tensor<float>({1, 3, 32, 32}), Context<float>{}),
                  std::invalid_argument);
  GapNet<float> image_only(ModelConfig::toy_preset(), 37);
  CHECK_THROWS_AS(image_only.forward_video(rgb, flow, Context<float>{}), std::invalid_argument);
}

TEST_CASE("two-stream parameter count is about twice the backbone plus fusion extras") {
  ModelConfig cfg = ModelConfig::toy_preset();
  GapNet<float> image_model(cfg, 3);
  cfg.video = true;
  GapNet<float> video_model(cfg, 3);
  const auto pi = image_model.count_params();
  const auto pv = video_model.count_params();
  CHECK(pv.backbone == 2 * pi.backbone);
  CHECK(pv.fusion > 0);
  CHECK(pv.total == pi.total + pi.backbone + pv.fusion);
}

TEST_CASE("paper preset efficiency lands in the published bands") {
  GapNet<float> model(ModelConfig::paper_preset(), 1);
  const auto params = model.count_params();
  CHECK(params.total >= 1790000);
  CHECK(params.total <= 2190000);
  // Per-site budgets: each pyramid site near 0.020M, each attention site
  // near 0.065M, within 30%.
  for (const char* site : {"gpc_dl", "gpc_d1", "gpc_d3"}) {
    const int64_t n = params.per_site.at(site);
    CHECK(n >= 14000);
    CHECK(n <= 26000);
  }
  for (const char* site : {"csa_dh", "csa_d2"}) {
    const int64_t n = params.per_site.at(site);
    CHECK(n >= 45500);
    CHECK(n <= 84500);
  }

  const auto macs = model.count_macs(384, 384);
  CHECK(macs.total >= static_cast<int64_t>(1.26e9 * 0.75));
  CHECK(macs.total <= static_cast<int64_t>(1.26e9 * 1.25));
  CHECK(macs.flops() == 2 * macs.total);

  // Convolutional components scale exactly x4 when the input doubles.
  const auto macs_half = model.count_macs(192, 192);
  CHECK(macs.backbone == 4 * macs_half.backbone);
  CHECK(macs.reduce == 4 * macs_half.reduce);

  // Attention-matrix cost with the cross-scale keys is exactly one fifth of
  // the full-length variant.
  for (const auto& [name, trace] : macs.csa_traces) {
    CHECK(trace.query_len == 720);
    CHECK(trace.key_len == 144);
    CsaSiteTrace vanilla = trace;
    vanilla.key_len = trace.query_len;
    CHECK(trace.attention_matrix_macs() * 5 == vanilla.attention_matrix_macs());
  }
}

TEST_CASE("toy preset parameter total stays under 0.2M") {
  GapNet<float> model(ModelConfig::toy_preset(), 1);
  CHECK(model.count_params().total < 200000);
}

TEST_CASE("gpc_m zero maps to the attention-disabled pyramid") {
  RunConfig rc;
  rc.preset = "toy";
  rc.gpc_m = 0;
  const auto cfg = ModelConfig::from_run_config(rc);
  CHECK_FALSE(cfg.gpc_attention);
  GapNet<float> without(cfg, 3);

  RunConfig rc7 = rc;
  rc7.gpc_m = 7;
  GapNet<float> with_attn(ModelConfig::from_run_config(rc7), 3);
  CHECK(without.count_params().gpc_sites < with_attn.count_params().gpc_sites);

  const auto image = random_image<float>(1, 64, 64, 3);
  CHECK(without.forward_image(image, Context<float>{}).p3.shape == Shape{1, 1, 64, 64});
}

TEST_CASE("pooling sizes of the ablation table all build and run") {
  for (const int m : {1, 3, 7, 28}) {
    RunConfig rc;
    rc.preset = "toy";
    rc.gpc_m = m;
    GapNet<float> model(ModelConfig::from_run_config(rc), 3);
    // 128 input keeps the stride-4 grid at 32 >= m for every tabled m.
    const auto image = random_image<float>(1, 128, 128, 5);
    const auto out = model.forward_image(image, Context<float>{});
    CHECK(out.p3.shape == Shape{1, 1, 128, 128});
  }
}

TEST_CASE("checkpoint save and load round-trips the model bit-exactly") {
  const fs::path path = fs::temp_directory_path() / "gapnet_model_test.ckpt";
  GapNet<float> model(ModelConfig::toy_preset(), 11);
  model.save_checkpoint(path.string());

  GapNet<float> twin(ModelConfig::toy_preset(), 999);  // different init
  twin.load_checkpoint(checkpoint_read(path.string()));
  auto pa = model.parameters();
  auto pb = twin.parameters();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i].tensor->data == pb[i].tensor->data);

  const auto image = random_image<float>(1, 64, 64, 13);
  const auto a = model.forward_image(image, Context<float>{});
  const auto b = twin.forward_image(image, Context<float>{});
  CHECK(a.p3.data == b.p3.data);

  // A checkpoint from a different topology reports the missing tensor.
  ModelConfig other = ModelConfig::toy_preset();
  other.gpc_channels = 24;
  GapNet<float> mismatched(other, 11);
  CHECK_THROWS_WITH_AS(mismatched.load_checkpoint(checkpoint_read(path.string())),
                       doctest::Contains("dec.gpc_dl"), std::invalid_argument);
  fs::remove(path);
}

TEST_CASE("indivisible model inputs are rejected") {
  GapNet<float> model(ModelConfig::toy_preset(), 3);
  CHECK_THROWS_AS(model.forward_image(random_image<float>(1, 100, 100, 3), Context<float>{}),
                  std::invalid_argument);
}
