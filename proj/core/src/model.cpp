#include "gapnet/model.h"

#include <cmath>

#include "gapnet/check.h"

namespace gapnet {

ModelConfig ModelConfig::paper_preset() { return ModelConfig{}; }

ModelConfig ModelConfig::toy_preset() {
  ModelConfig cfg;
  cfg.backbone = BackboneConfig::mobilenet_v2(0.25);
  cfg.reduce_channels = {8, 8, 8, 8};
  cfg.gpc_channels = 16;
  cfg.csa_dim = 16;
  cfg.csa_ffn_expansion = 4;
  cfg.gfe_irb_expansion = 6;
  return cfg;
}

ModelConfig ModelConfig::from_run_config(const RunConfig& rc) {
  ModelConfig cfg;
  const double preset_scale = rc.preset == "toy" ? 0.25 : 1.0;
  const double scale = preset_scale * rc.width_multiplier;
  cfg.backbone = BackboneConfig::mobilenet_v2(scale);
  for (int i = 0; i < 4; ++i) {
    cfg.reduce_channels[static_cast<size_t>(i)] =
        make_divisible(rc.reduce_channels[static_cast<size_t>(i)] * scale);
  }
  cfg.gpc_channels = make_divisible(cfg.gpc_channels * scale);
  cfg.csa_dim = make_divisible(rc.csa_dim * scale);
  cfg.attention_heads = rc.csa_heads;
  cfg.csa_ffn_expansion = rc.csa_ffn_expansion;
  cfg.gpc_attention = rc.gpc_m > 0;
  if (rc.gpc_m > 0) cfg.gpc_m = rc.gpc_m;
  cfg.gpc_atrous_rates = rc.gpc_atrous_rates;
  cfg.supervision_setting = rc.supervision_setting;
  cfg.video = rc.mode == "video";
  return cfg;
}

HeadSet aux_heads_for_setting(char setting) {
  HeadSet set;
  switch (setting) {
    case 'a':
      set.dl = set.dh = set.gf = true;
      break;
    case 'b':
    case 'c':
    case 'd':
      set.dl = set.dh = true;
      break;
    case 'e':
      set.gf = true;
      break;
    case 'f':
      break;
    default:
      GAPNET_REQUIRE(false, "unknown supervision setting '{}'", setting);
  }
  return set;
}

template <typename T>
Tensor<T> fuse_low_video(const Tensor<T>& rgb, const Tensor<T>& flow, const Context<T>& ctx) {
  GAPNET_REQUIRE(rgb.shape == flow.shape, "fuse_low_video shape mismatch: {} vs {}",
                 shape_str(rgb.shape), shape_str(flow.shape));
  return add(add(mul(rgb, sigmoid(flow, ctx), ctx), rgb, ctx), flow, ctx);
}

template <typename T>
GapNet<T>::ConvBnRelu::ConvBnRelu(int in, int out, Rng& rng) {
  Conv2dOpts opts;
  opts.kernel = {1, 1};
  opts.bias = false;
  conv = Conv2d<T>(in, out, opts, rng);
  bn = BatchNorm2d<T>(out);
}

template <typename T>
Tensor<T> GapNet<T>::ConvBnRelu::forward(const Tensor<T>& x, const Context<T>& ctx) {
  return relu(bn.forward(conv.forward(x, ctx), ctx), ctx);
}

namespace {

Conv2dOpts head_opts() {
  Conv2dOpts opts;
  opts.kernel = {1, 1};
  opts.bias = true;
  return opts;
}

}  // namespace

template <typename T>
GapNet<T>::GapNet(const ModelConfig& config, uint64_t seed) : cfg_(config) {
  GAPNET_REQUIRE(cfg_.csa_dim % cfg_.attention_heads == 0, "csa dim {} not divisible by heads {}",
                 cfg_.csa_dim, cfg_.attention_heads);
  Rng rng(seed);
  backbone_ = Backbone<T>(cfg_.backbone, rng);
  if (cfg_.video) flow_backbone_.emplace(cfg_.backbone, rng);

  const auto& sc = backbone_.stage_channels();
  for (int i = 0; i < 4; ++i) {
    reduce_[i] = ConvBnRelu(sc[static_cast<size_t>(i)], cfg_.reduce_channels[static_cast<size_t>(i)], rng);
  }
  gfe_ = GlobalFeatureExtractor<T>(cfg_.reduce_channels[3], cfg_.attention_heads,
                                   cfg_.gfe_irb_expansion, rng);

  GpcConfig gpc;
  gpc.channels = cfg_.gpc_channels;
  gpc.m = cfg_.gpc_m;
  gpc.atrous_rates = cfg_.gpc_atrous_rates;
  gpc.use_attention = cfg_.gpc_attention;
  gpc.heads = cfg_.attention_heads;

  const int r1 = cfg_.reduce_channels[0], r2 = cfg_.reduce_channels[1];
  const int r3 = cfg_.reduce_channels[2], r4 = cfg_.reduce_channels[3];
  site_dl_ = GpcSite{ConvBnRelu(r2 + r1, cfg_.gpc_channels, rng), GranularPyramidConv<T>(gpc, rng)};

  CsaConfig csa{cfg_.csa_dim, cfg_.attention_heads, cfg_.csa_ffn_expansion};
  site_dh_ = CsaSite{Linear<T>(r3, cfg_.csa_dim, rng), Linear<T>(r4, cfg_.csa_dim, rng),
                     CrossScaleAttention<T>(csa, rng)};

  site_d1_ = GpcSite{ConvBnRelu(r4 + cfg_.gpc_channels, cfg_.gpc_channels, rng),
                     GranularPyramidConv<T>(gpc, rng)};
  site_d2_ = CsaSite{Linear<T>(cfg_.csa_dim, cfg_.csa_dim, rng), Linear<T>(r4, cfg_.csa_dim, rng),
                     CrossScaleAttention<T>(csa, rng)};
  site_d3_ = GpcSite{ConvBnRelu(cfg_.csa_dim + cfg_.gpc_channels, cfg_.gpc_channels, rng),
                     GranularPyramidConv<T>(gpc, rng)};

  head_d1_ = Conv2d<T>(cfg_.gpc_channels, 1, head_opts(), rng);
  head_d2_ = Conv2d<T>(cfg_.csa_dim, 1, head_opts(), rng);
  head_d3_ = Conv2d<T>(cfg_.gpc_channels, 1, head_opts(), rng);
  const HeadSet aux = aux_heads_for_setting(cfg_.supervision_setting);
  if (aux.dl) head_dl_.emplace(cfg_.gpc_channels, 1, head_opts(), rng);
  if (aux.dh) head_dh_.emplace(cfg_.csa_dim, 1, head_opts(), rng);
  if (aux.gf) head_gf_.emplace(r4, 1, head_opts(), rng);

  if (cfg_.video) {
    fusion_e3_ = FusionSite{Linear<T>(sc[2], cfg_.csa_dim, rng), Linear<T>(sc[2], cfg_.csa_dim, rng),
                            Linear<T>(cfg_.csa_dim, sc[2], rng), CrossScaleAttention<T>(csa, rng)};
    fusion_e4_ = FusionSite{Linear<T>(sc[3], cfg_.csa_dim, rng), Linear<T>(sc[3], cfg_.csa_dim, rng),
                            Linear<T>(cfg_.csa_dim, sc[3], rng), CrossScaleAttention<T>(csa, rng)};
  }
}

template <typename T>
Tensor<T> GapNet<T>::run_gpc_site(GpcSite& site, const Tensor<T>& x, const Context<T>& ctx) {
  return site.gpc.forward(site.adapt.forward(x, ctx), ctx);
}

template <typename T>
Tensor<T> GapNet<T>::run_csa_site(CsaSite& site, const Tensor<T>& low, const Tensor<T>& high,
                                  const Context<T>& ctx, CsaSiteTrace* trace) {
  const int lh = low.shape[2], lw = low.shape[3];
  const int hh = high.shape[2], hw = high.shape[3];
  auto low_tokens = site.proj_low.forward(nchw_to_tokens(low, ctx), ctx);
  auto high_tokens = site.proj_high.forward(nchw_to_tokens(high, ctx), ctx);
  AttentionTrace at;
  auto fused = site.csa.forward(low_tokens, high_tokens, ctx, &at);
  if (trace) {
    trace->query_len = at.query_len;
    trace->key_len = at.key_len;
    trace->dim = at.dim;
  }
  // Fold back: fine-grid tokens plus the coarse-grid tokens upsampled.
  const int l1 = lh * lw, l2 = hh * hw;
  auto halves = split(fused, {l1, l2}, 1, ctx);
  auto fine = tokens_to_nchw(halves[0], lh, lw, ctx);
  auto coarse = bilinear_upsample(tokens_to_nchw(halves[1], hh, hw, ctx), lh, lw, ctx);
  return add(fine, coarse, ctx);
}

template <typename T>
Tensor<T> GapNet<T>::run_fusion_site(FusionSite& site, const Tensor<T>& rgb, const Tensor<T>& flow,
                                     const Context<T>& ctx) {
  GAPNET_REQUIRE(rgb.shape == flow.shape, "fusion site shape mismatch: {} vs {}",
                 shape_str(rgb.shape), shape_str(flow.shape));
  const int h = rgb.shape[2], w = rgb.shape[3];
  const int channels = rgb.shape[1];
  auto rgb_tokens = site.proj_rgb.forward(nchw_to_tokens(rgb, ctx), ctx);
  auto flow_tokens = site.proj_flow.forward(nchw_to_tokens(flow, ctx), ctx);
  auto fused = site.csa.forward(rgb_tokens, flow_tokens, ctx, nullptr);
  const int l = h * w;
  auto halves = split(fused, {l, l}, 1, ctx);
  auto merged = add(halves[0], halves[1], ctx);
  auto back = site.back.forward(merged, ctx);
  GAPNET_CHECK(back.shape[2] == channels, "fusion back-projection width mismatch");
  return tokens_to_nchw(back, h, w, ctx);
}

template <typename T>
Tensor<T> GapNet<T>::run_head(const Conv2d<T>& head, const Tensor<T>& feature, int out_h, int out_w,
                              const Context<T>& ctx) {
  auto logits = head.forward(feature, ctx);
  if (logits.shape[2] != out_h || logits.shape[3] != out_w) {
    logits = bilinear_upsample(logits, out_h, out_w, ctx);
  }
  return sigmoid(logits, ctx);
}

template <typename T>
ModelOutputs<T> GapNet<T>::decode(const StageFeatures<T>& stages, int in_h, int in_w,
                                  const Context<T>& ctx, std::map<std::string, CsaSiteTrace>* traces) {
  Tensor<T> r1, r2, r3, r4;
  {
    MacScope scope(ctx.macs, "reduce");
    r1 = reduce_[0].forward(stages.e1, ctx);
    r2 = reduce_[1].forward(stages.e2, ctx);
    r3 = reduce_[2].forward(stages.e3, ctx);
    r4 = reduce_[3].forward(stages.e4, ctx);
  }

  Tensor<T> gf;
  {
    MacScope scope(ctx.macs, "gfe");
    gf = gfe_.forward(r4, ctx);
  }

  Tensor<T> dl;
  {
    MacScope scope(ctx.macs, "gpc_dl");
    auto up2 = bilinear_upsample(r2, r1.shape[2], r1.shape[3], ctx);
    dl = run_gpc_site(site_dl_, concat<T>({up2, r1}, 1, ctx), ctx);
  }

  Tensor<T> dh;
  {
    MacScope scope(ctx.macs, "csa_dh");
    CsaSiteTrace trace;
    dh = run_csa_site(site_dh_, r3, r4, ctx, &trace);
    if (traces) (*traces)["csa_dh"] = trace;
  }

  Tensor<T> d1;
  {
    MacScope scope(ctx.macs, "gpc_d1");
    auto gf_up = bilinear_upsample(gf, dl.shape[2], dl.shape[3], ctx);
    d1 = run_gpc_site(site_d1_, concat<T>({gf_up, dl}, 1, ctx), ctx);
  }

  Tensor<T> d2;
  {
    MacScope scope(ctx.macs, "csa_d2");
    CsaSiteTrace trace;
    d2 = run_csa_site(site_d2_, dh, gf, ctx, &trace);
    if (traces) (*traces)["csa_d2"] = trace;
  }

  Tensor<T> d3;
  {
    MacScope scope(ctx.macs, "gpc_d3");
    auto d2_up = bilinear_upsample(d2, d1.shape[2], d1.shape[3], ctx);
    d3 = run_gpc_site(site_d3_, concat<T>({d2_up, d1}, 1, ctx), ctx);
  }

  ModelOutputs<T> out;
  {
    MacScope scope(ctx.macs, "heads");
    out.p1 = run_head(head_d1_, d1, in_h, in_w, ctx);
    out.p2 = run_head(head_d2_, d2, in_h, in_w, ctx);
    out.p3 = run_head(head_d3_, d3, in_h, in_w, ctx);
    if (head_dl_) out.aux["dl"] = run_head(*head_dl_, dl, in_h, in_w, ctx);
    if (head_dh_) out.aux["dh"] = run_head(*head_dh_, dh, in_h, in_w, ctx);
    if (head_gf_) out.aux["gf"] = run_head(*head_gf_, gf, in_h, in_w, ctx);
  }
  out.d1 = std::move(d1);
  out.d2 = std::move(d2);
  out.d3 = std::move(d3);
  return out;
}

template <typename T>
ModelOutputs<T> GapNet<T>::forward_image(const Tensor<T>& image, const Context<T>& ctx) {
  StageFeatures<T> stages;
  {
    MacScope scope(ctx.macs, "backbone");
    stages = backbone_.encode(image, ctx);
  }
  return decode(stages, image.shape[2], image.shape[3], ctx, nullptr);
}

template <typename T>
ModelOutputs<T> GapNet<T>::forward_video(const Tensor<T>& rgb, const Tensor<T>& flow_image,
                                         const Context<T>& ctx, bool bypass_flow) {
  GAPNET_REQUIRE(cfg_.video, "model was not built in video mode");
  GAPNET_REQUIRE(flow_image.rank() == 4 && (flow_image.shape[1] == 2 || flow_image.shape[1] == 3),
                 "flow image must have 2 or 3 channels, got {}", shape_str(flow_image.shape));
  GAPNET_REQUIRE(rgb.shape[2] == flow_image.shape[2] && rgb.shape[3] == flow_image.shape[3],
                 "rgb and flow extents differ: {} vs {}", shape_str(rgb.shape),
                 shape_str(flow_image.shape));

  StageFeatures<T> rgb_stages;
  {
    MacScope scope(ctx.macs, "backbone");
    rgb_stages = backbone_.encode(rgb, ctx);
  }
  if (bypass_flow) {
    return decode(rgb_stages, rgb.shape[2], rgb.shape[3], ctx, nullptr);
  }

  Tensor<T> flow3 = flow_image;
  if (flow_image.shape[1] == 2) {
    // Append a magnitude channel so both streams share one topology.
    const int n = flow_image.shape[0], h = flow_image.shape[2], w = flow_image.shape[3];
    flow3 = Tensor<T>({n, 3, h, w});
    const int64_t plane = static_cast<int64_t>(h) * w;
    for (int b = 0; b < n; ++b) {
      const T* u = flow_image.data.data() + (static_cast<int64_t>(b) * 2) * plane;
      const T* v = u + plane;
      T* dst = flow3.data.data() + (static_cast<int64_t>(b) * 3) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        dst[i] = u[i];
        dst[plane + i] = v[i];
        dst[2 * plane + i] = std::sqrt(u[i] * u[i] + v[i] * v[i]);
      }
    }
  }

  StageFeatures<T> flow_stages;
  {
    MacScope scope(ctx.macs, "backbone");
    flow_stages = flow_backbone_->encode(flow3, ctx);
  }

  StageFeatures<T> fused;
  {
    MacScope scope(ctx.macs, "fusion");
    fused.e1 = fuse_low_video(rgb_stages.e1, flow_stages.e1, ctx);
    fused.e2 = fuse_low_video(rgb_stages.e2, flow_stages.e2, ctx);
    fused.e3 = run_fusion_site(*fusion_e3_, rgb_stages.e3, flow_stages.e3, ctx);
    fused.e4 = run_fusion_site(*fusion_e4_, rgb_stages.e4, flow_stages.e4, ctx);
  }
  return decode(fused, rgb.shape[2], rgb.shape[3], ctx, nullptr);
}

template <typename T>
ParamList<T> GapNet<T>::parameters() {
  ParamList<T> params;
  backbone_.collect_params(cfg_.video ? "backbone_rgb" : "backbone", params);
  if (flow_backbone_) flow_backbone_->collect_params("backbone_flow", params);
  for (int i = 0; i < 4; ++i) {
    reduce_[i].conv.collect_params(fmt::format("reduce{}.conv", i + 1), params);
    reduce_[i].bn.collect_params(fmt::format("reduce{}.bn", i + 1), params);
  }
  gfe_.collect_params("gfe", params);
  auto collect_gpc = [&](GpcSite& site, const std::string& name) {
    site.adapt.conv.collect_params(fmt::format("dec.{}.adapt.conv", name), params);
    site.adapt.bn.collect_params(fmt::format("dec.{}.adapt.bn", name), params);
    site.gpc.collect_params(fmt::format("dec.{}", name), params);
  };
  auto collect_csa = [&](CsaSite& site, const std::string& name) {
    site.proj_low.collect_params(fmt::format("dec.{}.proj_low", name), params);
    site.proj_high.collect_params(fmt::format("dec.{}.proj_high", name), params);
    site.csa.collect_params(fmt::format("dec.{}", name), params);
  };
  collect_gpc(site_dl_, "gpc_dl");
  collect_csa(site_dh_, "csa_dh");
  collect_gpc(site_d1_, "gpc_d1");
  collect_csa(site_d2_, "csa_d2");
  collect_gpc(site_d3_, "gpc_d3");
  head_d1_.collect_params("head.d1", params);
  head_d2_.collect_params("head.d2", params);
  head_d3_.collect_params("head.d3", params);
  if (head_dl_) head_dl_->collect_params("head.dl", params);
  if (head_dh_) head_dh_->collect_params("head.dh", params);
  if (head_gf_) head_gf_->collect_params("head.gf", params);
  auto collect_fusion = [&](FusionSite& site, const std::string& name) {
    site.proj_rgb.collect_params(fmt::format("fusion.{}.proj_rgb", name), params);
    site.proj_flow.collect_params(fmt::format("fusion.{}.proj_flow", name), params);
    site.back.collect_params(fmt::format("fusion.{}.back", name), params);
    site.csa.collect_params(fmt::format("fusion.{}", name), params);
  };
  if (fusion_e3_) collect_fusion(*fusion_e3_, "e3");
  if (fusion_e4_) collect_fusion(*fusion_e4_, "e4");
  return params;
}

template <typename T>
ParamList<T> GapNet<T>::state() {
  ParamList<T> st;
  backbone_.collect_state(cfg_.video ? "backbone_rgb" : "backbone", st);
  if (flow_backbone_) flow_backbone_->collect_state("backbone_flow", st);
  for (int i = 0; i < 4; ++i) {
    reduce_[i].bn.collect_state(fmt::format("reduce{}.bn", i + 1), st);
  }
  gfe_.collect_state("gfe", st);
  auto collect_gpc = [&](GpcSite& site, const std::string& name) {
    site.adapt.bn.collect_state(fmt::format("dec.{}.adapt.bn", name), st);
    site.gpc.collect_state(fmt::format("dec.{}", name), st);
  };
  collect_gpc(site_dl_, "gpc_dl");
  collect_gpc(site_d1_, "gpc_d1");
  collect_gpc(site_d3_, "gpc_d3");
  return st;
}

template <typename T>
ParamBreakdown GapNet<T>::count_params() {
  ParamBreakdown out;
  for (const auto& p : parameters()) {
    const int64_t n = p.tensor->numel();
    out.total += n;
    if (p.name.rfind("backbone", 0) == 0) {
      out.backbone += n;
    } else if (p.name.rfind("reduce", 0) == 0) {
      out.reduce += n;
    } else if (p.name.rfind("gfe", 0) == 0) {
      out.gfe += n;
    } else if (p.name.rfind("dec.gpc", 0) == 0) {
      out.gpc_sites += n;
      out.per_site[p.name.substr(4, 6)] += n;
    } else if (p.name.rfind("dec.csa", 0) == 0) {
      out.csa_sites += n;
      out.per_site[p.name.substr(4, 6)] += n;
    } else if (p.name.rfind("head", 0) == 0) {
      out.heads += n;
    } else if (p.name.rfind("fusion", 0) == 0) {
      out.fusion += n;
    }
  }
  return out;
}

template <typename T>
MacBreakdown GapNet<T>::count_macs(int height, int width) {
  MacCounter counter;
  Context<T> ctx;
  ctx.macs = &counter;
  Tensor<T> zero({1, 3, height, width});

  StageFeatures<T> stages;
  {
    MacScope scope(ctx.macs, "backbone");
    stages = backbone_.encode(zero, ctx);
  }
  MacBreakdown out;
  decode(stages, height, width, ctx, &out.csa_traces);

  out.total = counter.total;
  out.by_scope = counter.by_scope;
  out.backbone = counter.by_scope["backbone"];
  out.reduce = counter.by_scope["reduce"];
  out.gfe = counter.by_scope["gfe"];
  out.gpc_sites = counter.by_scope["gpc_dl"] + counter.by_scope["gpc_d1"] + counter.by_scope["gpc_d3"];
  out.csa_sites = counter.by_scope["csa_dh"] + counter.by_scope["csa_d2"];
  out.heads = counter.by_scope["heads"];
  out.fusion = counter.by_scope["fusion"];
  return out;
}

template <typename T>
void GapNet<T>::load_checkpoint(const Checkpoint& ckpt) {
  auto params = parameters();
  auto st = state();
  params.insert(params.end(), st.begin(), st.end());
  for (auto& p : params) {
    const Tensor<float>* src = ckpt.find(p.name);
    GAPNET_REQUIRE(src != nullptr, "checkpoint is missing tensor '{}'", p.name);
    GAPNET_REQUIRE(src->shape == p.tensor->shape, "checkpoint tensor '{}' has shape {}, model expects {}",
                   p.name, shape_str(src->shape), shape_str(p.tensor->shape));
    for (size_t i = 0; i < src->data.size(); ++i) {
      p.tensor->data[i] = static_cast<T>(src->data[i]);
    }
  }
}

template <typename T>
void GapNet<T>::save_checkpoint(const std::string& path) {
  auto params = parameters();
  auto st = state();
  params.insert(params.end(), st.begin(), st.end());
  std::vector<std::pair<std::string, const Tensor<float>*>> named;
  std::vector<Tensor<float>> converted;  // storage when T != float
  named.reserve(params.size());
  if constexpr (std::is_same_v<T, float>) {
    for (const auto& p : params) named.emplace_back(p.name, p.tensor);
  } else {
    converted.reserve(params.size());
    for (const auto& p : params) {
      Tensor<float> f(p.tensor->shape);
      for (size_t i = 0; i < f.data.size(); ++i) f.data[i] = static_cast<float>(p.tensor->data[i]);
      converted.push_back(std::move(f));
      named.emplace_back(p.name, &converted.back());
    }
  }
  checkpoint_write(path, named);
}

template class GapNet<float>;
template class GapNet<double>;
template Tensor<float> fuse_low_video<float>(const Tensor<float>&, const Tensor<float>&,
                                             const Context<float>&);
template Tensor<double> fuse_low_video<double>(const Tensor<double>&, const Tensor<double>&,
                                               const Context<double>&);

}  // namespace gapnet
