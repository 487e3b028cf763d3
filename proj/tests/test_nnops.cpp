#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gapnet/grad_check.h"
#include "gapnet/nn.h"
#include "gapnet/rng.h"

using namespace gapnet;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Direct-sum convolution reference: walks every output element and every
// kernel tap, with explicit zero padding.
Tensor<double> conv2d_oracle(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>* bias, const Conv2dGeom& g) {
  const int n = x.shape[0], cin = x.shape[1], h = x.shape[2], ww = x.shape[3];
  const int cout = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  const int gin = cin / g.groups, gout = cout / g.groups;
  const auto [hout, wout] = conv2d_output_extent(h, ww, kh, kw, g);
  Tensor<double> out({n, cout, hout, wout});
  for (int b = 0; b < n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int oh = 0; oh < hout; ++oh)
        for (int ow = 0; ow < wout; ++ow) {
          double acc = bias ? bias->data[static_cast<size_t>(co)] : 0.0;
          const int grp = co / gout;
          for (int ic = 0; ic < gin; ++ic)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const int ih = oh * g.stride_h - g.pad_h + u * g.dil_h;
                const int iw = ow * g.stride_w - g.pad_w + v * g.dil_w;
                if (ih < 0 || ih >= h || iw < 0 || iw >= ww) continue;
                acc += w.at({co, ic, u, v}) * x.at({b, grp * gin + ic, ih, iw});
              }
          out.at({b, co, oh, ow}) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d identity kernel and 1x1 closed form") {
  Rng rng(5);
  auto x = random_tensor({1, 2, 4, 5}, rng);
  Tensor<double> w({2, 2, 3, 3});
  w.at({0, 0, 1, 1}) = 1.0;  // Kronecker delta at the center, channel-matched
  w.at({1, 1, 1, 1}) = 1.0;
  Conv2dGeom g;
  g.pad_h = g.pad_w = 1;
  const auto y = conv2d(x, w, nullptr, g);
  CHECK(y.data == x.data);

  Tensor<double> x1({1, 1, 1, 1}, {2.0});
  Tensor<double> w1({1, 1, 1, 1}, {3.0});
  Tensor<double> b1({1}, {1.0});
  CHECK(conv2d(x1, w1, &b1, Conv2dGeom{}).item() == doctest::Approx(7.0));
}

TEST_CASE("conv2d matches the direct-sum oracle, dilated") {
  Rng rng(9);
  const auto x = random_tensor({1, 2, 5, 5}, rng);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto b = random_tensor({3}, rng);
  Conv2dGeom g;
  g.dil_h = g.dil_w = 2;
  g.pad_h = g.pad_w = 2;
  const auto got = conv2d(x, w, &b, g);
  const auto want = conv2d_oracle(x, w, &b, g);
  CHECK(got.shape == want.shape);
  for (size_t i = 0; i < got.data.size(); ++i)
    CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
}

TEST_CASE("conv2d matches the oracle over strides, padding and groups") {
  Rng rng(17);
  const Conv2dGeom cases[] = {
      {2, 2, 1, 1, 1, 1, 1}, {1, 2, 0, 2, 1, 1, 1}, {1, 1, 1, 1, 2, 1, 2}, {2, 1, 2, 0, 1, 3, 1},
  };
  for (const auto& g : cases) {
    const int cin = 4, cout = 4;
    const auto x = random_tensor({2, cin, 6, 7}, rng);
    const auto w = random_tensor({cout, cin / g.groups, 3, 3}, rng);
    const auto got = conv2d(x, w, nullptr, g);
    const auto want = conv2d_oracle(x, w, nullptr, g);
    REQUIRE(got.shape == want.shape);
    for (size_t i = 0; i < got.data.size(); ++i)
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d error paths") {
  Rng rng(1);
  const auto x = random_tensor({1, 3, 4, 4}, rng);
  const auto w = random_tensor({2, 2, 3, 3}, rng);  // expects 2 input channels
  CHECK_THROWS_AS(conv2d(x, w, nullptr, Conv2dGeom{}), std::invalid_argument);

  const auto w2 = random_tensor({2, 3, 5, 5}, rng);  // 5x5 on 4x4 without padding
  CHECK_THROWS_AS(conv2d(x, w2, nullptr, Conv2dGeom{}), std::invalid_argument);
}

TEST_CASE("conv2d is linear in its input") {
  Rng rng(23);
  const auto w = random_tensor({3, 2, 3, 3}, rng);
  const auto x = random_tensor({1, 2, 6, 6}, rng);
  const auto y = random_tensor({1, 2, 6, 6}, rng);
  Conv2dGeom g;
  g.pad_h = g.pad_w = 1;
  const double alpha = 0.7, beta = -1.3;
  Tensor<double> mix({1, 2, 6, 6});
  for (size_t i = 0; i < mix.data.size(); ++i) mix.data[i] = alpha * x.data[i] + beta * y.data[i];
  const auto lhs = conv2d(mix, w, nullptr, g);
  const auto cx = conv2d(x, w, nullptr, g);
  const auto cy = conv2d(y, w, nullptr, g);
  for (size_t i = 0; i < lhs.data.size(); ++i)
    CHECK(lhs.data[i] == doctest::Approx(alpha * cx.data[i] + beta * cy.data[i]).epsilon(1e-10));
}

TEST_CASE("depthwise conv equals per-channel single-channel convs") {
  Rng rng(31);
  const int c = 3;
  const auto x = random_tensor({1, c, 5, 5}, rng);
  const auto w = random_tensor({c, 1, 3, 3}, rng);
  Conv2dGeom g;
  g.pad_h = g.pad_w = 1;
  g.groups = c;
  const auto fused = conv2d(x, w, nullptr, g);
  for (int ch = 0; ch < c; ++ch) {
    Tensor<double> xc({1, 1, 5, 5});
    Tensor<double> wc({1, 1, 3, 3});
    for (int i = 0; i < 25; ++i) xc.data[static_cast<size_t>(i)] = x.data[static_cast<size_t>(ch * 25 + i)];
    for (int i = 0; i < 9; ++i) wc.data[static_cast<size_t>(i)] = w.data[static_cast<size_t>(ch * 9 + i)];
    Conv2dGeom g1;
    g1.pad_h = g1.pad_w = 1;
    const auto single = conv2d(xc, wc, nullptr, g1);
    for (int i = 0; i < 25; ++i)
      CHECK(fused.data[static_cast<size_t>(ch * 25 + i)] == doctest::Approx(single.data[static_cast<size_t>(i)]));
  }
}

TEST_CASE("batchnorm2d eval and train statistics") {
  Rng rng(41);
  auto x = random_tensor({2, 3, 4, 4}, rng);
  BatchNorm2d<double> bn(3);

  Context<double> eval_ctx;
  const auto y = bn.forward(x, eval_ctx);
  for (size_t i = 0; i < y.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-4));  // rm=0, rv=1, affine identity

  Context<double> train_ctx;
  train_ctx.training = true;
  const auto z = bn.forward(x, train_ctx);  // gamma=1, beta=0: output is the normalized map
  const int64_t cnt = 2 * 4 * 4;
  for (int ch = 0; ch < 3; ++ch) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 16; ++i) mean += z.data[static_cast<size_t>((b * 3 + ch) * 16 + i)];
    mean /= static_cast<double>(cnt);
    for (int b = 0; b < 2; ++b)
      for (int i = 0; i < 16; ++i) {
        const double d = z.data[static_cast<size_t>((b * 3 + ch) * 16 + i)] - mean;
        var += d * d;
      }
    var /= static_cast<double>(cnt);
    CHECK(std::abs(mean) < 1e-6);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
  // Running stats moved toward the batch statistics.
  CHECK(bn.running_mean.data[0] != 0.0);

  // Constant input: normalized output ~0, so the result is beta.
  BatchNorm2d<double> bn2(2);
  bn2.beta.data = {0.25, -0.5};
  auto cx = Tensor<double>::full({1, 2, 3, 3}, 4.0);
  const auto cy = bn2.forward(cx, train_ctx);
  for (int i = 0; i < 9; ++i) {
    CHECK(cy.data[static_cast<size_t>(i)] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(cy.data[static_cast<size_t>(9 + i)] == doctest::Approx(-0.5).epsilon(1e-6));
  }

  Tensor<double> tiny({1, 1, 1, 1}, {1.0});
  BatchNorm2d<double> bn3(1);
  CHECK_THROWS_AS(bn3.forward(tiny, train_ctx), std::invalid_argument);
}

TEST_CASE("layernorm closed forms and gradient") {
  LayerNorm<double> ln(2);
  ln.beta.data = {0.5, 0.5};
  const auto c = ln.forward(Tensor<double>({1, 2}, {3.0, 3.0}), Context<double>{});
  CHECK(c.data[0] == doctest::Approx(0.5).epsilon(1e-6));

  LayerNorm<double> ln2(2);
  const auto t = ln2.forward(Tensor<double>({1, 2}, {1.0, -1.0}), Context<double>{});
  CHECK(t.data[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(t.data[1] == doctest::Approx(-1.0).epsilon(1e-4));

  Rng rng(47);
  const auto proj = random_tensor({3, 4}, rng);
  LayerNorm<double> ln3(4);
  for (auto& v : ln3.gamma.data) v = rng.uniform(0.5, 1.5);
  for (auto& v : ln3.beta.data) v = rng.uniform(-0.5, 0.5);
  auto f = [&](const Tensor<double>& x, const Context<double>& ctx) {
    return reduce_sum(mul(ln3.forward(x, ctx), proj, ctx), {0, 1}, false, ctx);
  };
  CHECK(grad_check<double>(f, random_tensor({3, 4}, rng), 1e-4).pass);
}

TEST_CASE("linear closed forms and matmul equivalence") {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1});
  Tensor<double> x({3, 2}, {1, 2, 3, 4, 5, 6});
  CHECK(linear(x, eye, nullptr).data == x.data);

  Tensor<double> w({2, 1}, {1, 1});
  Tensor<double> b({1}, {0});
  CHECK(linear(Tensor<double>({1, 2}, {1, 2}), w, &b).item() == doctest::Approx(3.0));

  Rng rng(53);
  const auto batch = random_tensor({2, 3, 4}, rng);
  const auto weight = random_tensor({4, 5}, rng);
  const auto got = linear(batch, weight, nullptr);
  const auto flat = reshape(batch, {6, 4});
  const auto want = matmul(flat, weight);
  for (size_t i = 0; i < got.data.size(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]));

  CHECK_THROWS_AS(linear(batch, Tensor<double>({3, 5}), nullptr), std::invalid_argument);
}

TEST_CASE("adaptive average pooling bin rule") {
  Tensor<double> x({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) x.data[static_cast<size_t>(i)] = static_cast<double>(i);
  const auto y = adaptive_avg_pool2d(x, 2);
  CHECK(y.at({0, 0, 0, 0}) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
  CHECK(y.at({0, 0, 0, 1}) == doctest::Approx((2 + 3 + 6 + 7) / 4.0));
  CHECK(y.at({0, 0, 1, 0}) == doctest::Approx((8 + 9 + 12 + 13) / 4.0));
  CHECK(y.at({0, 0, 1, 1}) == doctest::Approx((10 + 11 + 14 + 15) / 4.0));

  const auto g = adaptive_avg_pool2d(x, 1);
  CHECK(g.item() == doctest::Approx(7.5));

  // 12x12 -> 7 bins against a direct floor/ceil evaluation.
  Rng rng(59);
  const auto z = random_tensor({1, 2, 12, 12}, rng);
  const auto p = adaptive_avg_pool2d(z, 7);
  for (int ch = 0; ch < 2; ++ch)
    for (int i = 0; i < 7; ++i)
      for (int j = 0; j < 7; ++j) {
        const int r0 = (i * 12) / 7, r1 = ((i + 1) * 12 + 6) / 7;
        const int c0 = (j * 12) / 7, c1 = ((j + 1) * 12 + 6) / 7;
        double acc = 0.0;
        for (int y2 = r0; y2 < r1; ++y2)
          for (int x2 = c0; x2 < c1; ++x2) acc += z.at({0, ch, y2, x2});
        acc /= static_cast<double>((r1 - r0) * (c1 - c0));
        CHECK(p.at({0, ch, i, j}) == doctest::Approx(acc).epsilon(1e-12));
      }

  CHECK_THROWS_AS(adaptive_avg_pool2d(x, 5), std::invalid_argument);
  CHECK_THROWS_AS(adaptive_avg_pool2d(x, 0), std::invalid_argument);
}

TEST_CASE("adaptive pooling preserves the global mean when m divides the extent") {
  // Integer-valued input keeps every partial sum exact in floating point.
  Rng rng(61);
  Tensor<double> x({1, 1, 8, 8});
  for (auto& v : x.data) v = static_cast<double>(rng.below(16));
  const auto p = adaptive_avg_pool2d(x, 4);
  double pooled_mean = 0.0;
  for (double v : p.data) pooled_mean += v;
  pooled_mean /= 16.0;
  double global = 0.0;
  for (double v : x.data) global += v;
  global /= 64.0;
  CHECK(pooled_mean == doctest::Approx(global).epsilon(1e-15));
}

TEST_CASE("bilinear upsample closed forms and formula oracle") {
  const auto c = bilinear_upsample(Tensor<double>::full({1, 2, 3, 3}, 2.5), 7, 9);
  for (double v : c.data) CHECK(v == 2.5);

  Tensor<double> one({1, 1, 1, 1}, {3.75});
  const auto o = bilinear_upsample(one, 5, 4);
  for (double v : o.data) CHECK(v == 3.75);

  Rng rng(67);
  const auto x = random_tensor({1, 1, 2, 2}, rng);
  const auto y = bilinear_upsample(x, 4, 4);
  for (int oy = 0; oy < 4; ++oy)
    for (int ox = 0; ox < 4; ++ox) {
      auto src = [](int d) {
        double s = (d + 0.5) * 0.5 - 0.5;
        return s < 0.0 ? 0.0 : (s > 1.0 ? 1.0 : s);
      };
      const double sy = src(oy), sx = src(ox);
      const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
      const int y1 = std::min(y0 + 1, 1), x1 = std::min(x0 + 1, 1);
      const double fy = sy - y0, fx = sx - x0;
      const double want = (1 - fy) * ((1 - fx) * x.at({0, 0, y0, x0}) + fx * x.at({0, 0, y0, x1})) +
                          fy * ((1 - fx) * x.at({0, 0, y1, x0}) + fx * x.at({0, 0, y1, x1}));
      CHECK(y.at({0, 0, oy, ox}) == doctest::Approx(want).epsilon(1e-12));
    }

  CHECK_THROWS_AS(bilinear_upsample(y, 2, 2), std::invalid_argument);
}

TEST_CASE("every nnops backward passes grad_check") {
  Rng rng(71);
  const double tol = 1e-4;

  SUBCASE("conv2d wrt input, weight and bias") {
    const auto w = random_tensor({3, 2, 3, 3}, rng);
    const auto b = random_tensor({3}, rng);
    Conv2dGeom g;
    g.stride_h = 2;
    g.pad_h = g.pad_w = 1;
    g.dil_w = 2;
    auto fx = [&](const Tensor<double>& x, const Context<double>& ctx) {
      return reduce_sum(conv2d(x, w, &b, g, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fx, random_tensor({1, 2, 6, 7}, rng), tol).pass);

    const auto x0 = random_tensor({1, 2, 6, 7}, rng);
    auto fw = [&](const Tensor<double>& wv, const Context<double>& ctx) {
      auto y = conv2d(x0, wv, &b, g, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fw, w, tol).pass);

    auto fb = [&](const Tensor<double>& bv, const Context<double>& ctx) {
      auto y = conv2d(x0, w, &bv, g, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fb, b, tol).pass);
  }

  SUBCASE("grouped conv2d wrt input") {
    const auto w = random_tensor({4, 2, 3, 3}, rng);
    Conv2dGeom g;
    g.groups = 2;
    g.pad_h = g.pad_w = 1;
    auto fx = [&](const Tensor<double>& x, const Context<double>& ctx) {
      auto y = conv2d(x, w, nullptr, g, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fx, random_tensor({1, 4, 5, 5}, rng), tol).pass);
  }

  SUBCASE("batchnorm train mode wrt input and affine") {
    BatchNorm2d<double> bn(2);
    for (auto& v : bn.gamma.data) v = rng.uniform(0.5, 1.5);
    for (auto& v : bn.beta.data) v = rng.uniform(-0.3, 0.3);
    auto fx = [&](const Tensor<double>& x, const Context<double>& ctx) {
      Context<double> c = ctx;
      c.training = true;
      c.update_stats = false;  // keep repeated evaluations identical
      auto y = bn.forward(x, c);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fx, random_tensor({2, 2, 3, 3}, rng), tol).pass);

    const auto x0 = random_tensor({2, 2, 3, 3}, rng);
    auto fg = [&](const Tensor<double>& gv, const Context<double>& ctx) {
      Context<double> c = ctx;
      c.training = true;
      c.update_stats = false;
      auto y = batchnorm2d(x0, gv, bn.beta, bn.running_mean, bn.running_var, bn.eps, bn.momentum, c);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fg, bn.gamma, tol).pass);
  }

  SUBCASE("batchnorm eval mode wrt input") {
    BatchNorm2d<double> bn(2);
    bn.running_mean.data = {0.1, -0.2};
    bn.running_var.data = {0.9, 1.4};
    auto fx = [&](const Tensor<double>& x, const Context<double>& ctx) {
      auto y = bn.forward(x, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fx, random_tensor({1, 2, 3, 3}, rng), tol).pass);
  }

  SUBCASE("linear wrt input, weight and bias") {
    const auto w = random_tensor({4, 3}, rng);
    const auto b = random_tensor({3}, rng);
    auto fx = [&](const Tensor<double>& x, const Context<double>& ctx) {
      auto y = linear(x, w, &b, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2}, false, ctx);
    };
    CHECK(grad_check<double>(fx, random_tensor({2, 5, 4}, rng), tol).pass);

    const auto x0 = random_tensor({2, 5, 4}, rng);
    auto fw = [&](const Tensor<double>& wv, const Context<double>& ctx) {
      auto y = linear(x0, wv, &b, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2}, false, ctx);
    };
    CHECK(grad_check<double>(fw, w, tol).pass);

    auto fb = [&](const Tensor<double>& bv, const Context<double>& ctx) {
      auto y = linear(x0, w, &bv, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2}, false, ctx);
    };
    CHECK(grad_check<double>(fb, b, tol).pass);
  }

  SUBCASE("adaptive pool and bilinear upsample wrt input") {
    auto fp = [&](const Tensor<double>& x, const Context<double>& ctx) {
      auto y = adaptive_avg_pool2d(x, 3, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fp, random_tensor({1, 2, 7, 5}, rng), tol).pass);

    auto fu = [&](const Tensor<double>& x, const Context<double>& ctx) {
      auto y = bilinear_upsample(x, 7, 6, ctx);
      return reduce_sum(mul(y, y, ctx), {0, 1, 2, 3}, false, ctx);
    };
    CHECK(grad_check<double>(fu, random_tensor({1, 2, 3, 3}, rng), tol).pass);
  }
}
