#include "gapnet/blocks.h"

#include <cmath>

#include "gapnet/check.h"

namespace gapnet {

namespace {

// [N,L,dim] -> [N*heads, L, dim/heads]
template <typename T>
Tensor<T> heads_split(const Tensor<T>& tokens, int heads, const Context<T>& ctx) {
  if (heads == 1) return tokens;
  const int n = tokens.shape[0], l = tokens.shape[1], dim = tokens.shape[2];
  const int dk = dim / heads;
  auto x = reshape(tokens, {n, l, heads, dk}, ctx);
  x = permute(x, {0, 2, 1, 3}, ctx);
  return reshape(x, {n * heads, l, dk}, ctx);
}

template <typename T>
Tensor<T> heads_merge(const Tensor<T>& tokens, int heads, int batch, const Context<T>& ctx) {
  if (heads == 1) return tokens;
  const int l = tokens.shape[1], dk = tokens.shape[2];
  auto x = reshape(tokens, {batch, heads, l, dk}, ctx);
  x = permute(x, {0, 2, 1, 3}, ctx);
  return reshape(x, {batch, l, heads * dk}, ctx);
}

}  // namespace

template <typename T>
AttentionCore<T>::AttentionCore(const AttentionConfig& config, Rng& rng) : cfg(config) {
  GAPNET_REQUIRE(cfg.heads >= 1 && cfg.dim % cfg.heads == 0, "attention dim {} not divisible by heads {}",
                 cfg.dim, cfg.heads);
  wq = Linear<T>(cfg.dim, cfg.dim, rng);
  wk = Linear<T>(cfg.dim, cfg.dim, rng);
  wv = Linear<T>(cfg.dim, cfg.dim, rng);
  out = Linear<T>(cfg.dim, cfg.dim, rng);
}

template <typename T>
Tensor<T> AttentionCore<T>::forward(const Tensor<T>& query_tokens, const Tensor<T>& kv_tokens,
                                    const Context<T>& ctx, AttentionTrace* trace) const {
  GAPNET_REQUIRE(query_tokens.rank() == 3 && kv_tokens.rank() == 3,
                 "attention expects [N,L,dim] tokens");
  GAPNET_REQUIRE(query_tokens.shape[2] == cfg.dim && kv_tokens.shape[2] == cfg.dim,
                 "attention dim mismatch: configured {}, got {} and {}", cfg.dim,
                 query_tokens.shape[2], kv_tokens.shape[2]);
  GAPNET_REQUIRE(query_tokens.shape[0] == kv_tokens.shape[0], "attention batch mismatch");
  const int batch = query_tokens.shape[0];
  const int dk = cfg.dim / cfg.heads;

  auto q = heads_split(wq.forward(query_tokens, ctx), cfg.heads, ctx);
  auto k = heads_split(wk.forward(kv_tokens, ctx), cfg.heads, ctx);
  auto v = heads_split(wv.forward(kv_tokens, ctx), cfg.heads, ctx);

  auto scores = scale(matmul(q, permute(k, {0, 2, 1}, ctx), ctx),
                      static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))), ctx);
  if (trace) {
    trace->query_len = query_tokens.shape[1];
    trace->key_len = kv_tokens.shape[1];
    trace->dim = cfg.dim;
  }
  auto weights = softmax_lastdim(scores, ctx);
  auto mixed = heads_merge(matmul(weights, v, ctx), cfg.heads, batch, ctx);
  return out.forward(mixed, ctx);
}

template <typename T>
void AttentionCore<T>::collect_params(const std::string& prefix, ParamList<T>& out_list) {
  wq.collect_params(prefix + ".wq", out_list);
  wk.collect_params(prefix + ".wk", out_list);
  wv.collect_params(prefix + ".wv", out_list);
  out.collect_params(prefix + ".out", out_list);
}

template <typename T>
int64_t AttentionCore<T>::param_count() const {
  return wq.param_count() + wk.param_count() + wv.param_count() + out.param_count();
}

template <typename T>
InvertedResidual<T>::InvertedResidual(int in, int out, int stride_, int expansion_, Rng& rng,
                                      bool allow_residual)
    : in_channels(in), out_channels(out), stride(stride_), expansion(expansion_) {
  GAPNET_REQUIRE(stride == 1 || stride == 2, "inverted residual stride must be 1 or 2, got {}", stride);
  GAPNET_REQUIRE(expansion >= 1, "expansion must be >= 1");
  const int hidden = in * expansion;
  has_expand = expansion != 1;
  residual = allow_residual && stride == 1 && in == out;
  if (has_expand) {
    Conv2dOpts e;
    e.kernel = {1, 1};
    e.bias = false;
    expand = Conv2d<T>(in, hidden, e, rng);
    expand_bn = BatchNorm2d<T>(hidden);
  }
  Conv2dOpts d;
  d.kernel = {3, 3};
  d.stride = {stride, stride};
  d.padding = {1, 1};
  d.groups = hidden;
  d.bias = false;
  depthwise = Conv2d<T>(hidden, hidden, d, rng);
  depthwise_bn = BatchNorm2d<T>(hidden);
  Conv2dOpts p;
  p.kernel = {1, 1};
  p.bias = false;
  project = Conv2d<T>(hidden, out, p, rng);
  project_bn = BatchNorm2d<T>(out);
}

template <typename T>
Tensor<T> InvertedResidual<T>::forward(const Tensor<T>& x, const Context<T>& ctx) {
  Tensor<T> h = x;
  if (has_expand) {
    h = relu(expand_bn.forward(expand.forward(h, ctx), ctx), ctx);
  }
  h = relu(depthwise_bn.forward(depthwise.forward(h, ctx), ctx), ctx);
  h = project_bn.forward(project.forward(h, ctx), ctx);
  return residual ? add(h, x, ctx) : h;
}

template <typename T>
void InvertedResidual<T>::collect_params(const std::string& prefix, ParamList<T>& out_list) {
  if (has_expand) {
    expand.collect_params(prefix + ".expand", out_list);
    expand_bn.collect_params(prefix + ".expand_bn", out_list);
  }
  depthwise.collect_params(prefix + ".depthwise", out_list);
  depthwise_bn.collect_params(prefix + ".depthwise_bn", out_list);
  project.collect_params(prefix + ".project", out_list);
  project_bn.collect_params(prefix + ".project_bn", out_list);
}

template <typename T>
void InvertedResidual<T>::collect_state(const std::string& prefix, ParamList<T>& out_list) {
  if (has_expand) expand_bn.collect_state(prefix + ".expand_bn", out_list);
  depthwise_bn.collect_state(prefix + ".depthwise_bn", out_list);
  project_bn.collect_state(prefix + ".project_bn", out_list);
}

std::array<int, 4> gpc_split_sizes(int channels) {
  GAPNET_REQUIRE(channels > 0 && channels % 8 == 0, "pyramid channels {} must be divisible by 8",
                 channels);
  return {channels / 8, channels / 8, channels / 4, channels / 2};
}

template <typename T>
GranularPyramidConv<T>::GranularPyramidConv(const GpcConfig& config, Rng& rng) : cfg(config) {
  split_sizes = gpc_split_sizes(cfg.channels);
  GAPNET_REQUIRE(cfg.m >= 1, "pooled extent must be >= 1, got {}", cfg.m);
  if (cfg.use_attention) {
    pool_norm = LayerNorm<T>(cfg.channels);
    attention = AttentionCore<T>(AttentionConfig{cfg.channels, cfg.heads}, rng);
  }
  pyramid.reserve(4);
  pyramid_norm.reserve(4);
  for (int i = 0; i < 4; ++i) {
    const int rate = cfg.atrous_rates[static_cast<size_t>(i)];
    GAPNET_REQUIRE(rate >= 1, "atrous rate must be >= 1, got {}", rate);
    Conv2dOpts opts;
    opts.kernel = {3, 3};
    opts.padding = {rate, rate};
    opts.dilation = {rate, rate};
    opts.bias = false;
    pyramid.emplace_back(split_sizes[static_cast<size_t>(i)], split_sizes[static_cast<size_t>(i)],
                         opts, rng);
    pyramid_norm.emplace_back(split_sizes[static_cast<size_t>(i)]);
  }
  Conv2dOpts fuse_opts;
  fuse_opts.kernel = {1, 1};
  fuse = Conv2d<T>(cfg.channels, cfg.channels, fuse_opts, rng);
}

template <typename T>
Tensor<T> GranularPyramidConv<T>::forward(const Tensor<T>& x, const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() == 4 && x.shape[1] == cfg.channels,
                 "pyramid block expects [N,{},H,W], got {}", cfg.channels, shape_str(x.shape));
  const int h = x.shape[2], w = x.shape[3];

  // Convolution branch: per-split dilated 3x3 + BN, concatenated, fused 1x1.
  const auto parts = split(x, {split_sizes[0], split_sizes[1], split_sizes[2], split_sizes[3]}, 1, ctx);
  std::vector<Tensor<T>> stack;
  stack.reserve(4);
  for (int i = 0; i < 4; ++i) {
    auto c = pyramid[static_cast<size_t>(i)].forward(parts[static_cast<size_t>(i)], ctx);
    stack.push_back(pyramid_norm[static_cast<size_t>(i)].forward(c, ctx));
  }
  auto conv_out = fuse.forward(concat(stack, 1, ctx), ctx);

  if (!cfg.use_attention) {
    return add(conv_out, x, ctx);
  }

  // Attention branch on the pooled map. The pooled tokens feed attention
  // directly; the identity path lives in the block-level residual, which
  // keeps the zero-weight block an exact identity.
  const auto pooled = adaptive_avg_pool2d(x, cfg.m, ctx);
  auto tokens = nchw_to_tokens(pooled, ctx);
  auto attended = attention.forward(pool_norm.forward(tokens, ctx), ctx);
  auto attn_map = tokens_to_nchw(attended, cfg.m, cfg.m, ctx);
  auto attn_out = bilinear_upsample(attn_map, h, w, ctx);

  return add(add(attn_out, conv_out, ctx), x, ctx);
}

template <typename T>
void GranularPyramidConv<T>::collect_params(const std::string& prefix, ParamList<T>& out_list) {
  if (cfg.use_attention) {
    pool_norm.collect_params(prefix + ".pool_norm", out_list);
    attention.collect_params(prefix + ".attention", out_list);
  }
  for (int i = 0; i < 4; ++i) {
    pyramid[static_cast<size_t>(i)].collect_params(fmt::format("{}.pyramid{}", prefix, i), out_list);
    pyramid_norm[static_cast<size_t>(i)].collect_params(fmt::format("{}.pyramid{}_bn", prefix, i), out_list);
  }
  fuse.collect_params(prefix + ".fuse", out_list);
}

template <typename T>
void GranularPyramidConv<T>::collect_state(const std::string& prefix, ParamList<T>& out_list) {
  for (int i = 0; i < 4; ++i) {
    pyramid_norm[static_cast<size_t>(i)].collect_state(fmt::format("{}.pyramid{}_bn", prefix, i), out_list);
  }
}

template <typename T>
CrossScaleAttention<T>::CrossScaleAttention(const CsaConfig& config, Rng& rng) : cfg(config) {
  GAPNET_REQUIRE(cfg.ffn_expansion >= 1, "ffn expansion must be >= 1");
  attn_norm = LayerNorm<T>(cfg.dim);
  attention = AttentionCore<T>(AttentionConfig{cfg.dim, cfg.heads}, rng);
  ffn_norm = LayerNorm<T>(cfg.dim);
  ffn_in = Linear<T>(cfg.dim, cfg.dim * cfg.ffn_expansion, rng);
  ffn_out = Linear<T>(cfg.dim * cfg.ffn_expansion, cfg.dim, rng);
}

template <typename T>
Tensor<T> CrossScaleAttention<T>::forward(const Tensor<T>& low_tokens, const Tensor<T>& high_tokens,
                                          const Context<T>& ctx, AttentionTrace* trace) const {
  GAPNET_REQUIRE(low_tokens.rank() == 3 && high_tokens.rank() == 3, "expected [N,L,dim] tokens");
  GAPNET_REQUIRE(low_tokens.shape[2] == cfg.dim && high_tokens.shape[2] == cfg.dim,
                 "token streams must be pre-projected to dim {}, got {} and {}", cfg.dim,
                 low_tokens.shape[2], high_tokens.shape[2]);
  const int l1 = low_tokens.shape[1], l2 = high_tokens.shape[1];

  auto cat = concat<T>({low_tokens, high_tokens}, 1, ctx);
  auto normed = attn_norm.forward(cat, ctx);
  // Queries from every token, keys/values from the high-level stream only.
  auto kv = split(normed, {l1, l2}, 1, ctx)[1];
  auto attended = attention.forward(normed, kv, ctx, trace);
  auto y = add(attended, cat, ctx);

  auto z = ffn_out.forward(relu(ffn_in.forward(ffn_norm.forward(y, ctx), ctx), ctx), ctx);
  return add(z, y, ctx);
}

template <typename T>
Tensor<T> CrossScaleAttention<T>::forward(const Tensor<T>& high_tokens, const Context<T>& ctx,
                                          AttentionTrace* trace) const {
  auto normed = attn_norm.forward(high_tokens, ctx);
  auto attended = attention.forward(normed, normed, ctx, trace);
  auto y = add(attended, high_tokens, ctx);
  auto z = ffn_out.forward(relu(ffn_in.forward(ffn_norm.forward(y, ctx), ctx), ctx), ctx);
  return add(z, y, ctx);
}

template <typename T>
void CrossScaleAttention<T>::collect_params(const std::string& prefix, ParamList<T>& out_list) {
  attn_norm.collect_params(prefix + ".attn_norm", out_list);
  attention.collect_params(prefix + ".attention", out_list);
  ffn_norm.collect_params(prefix + ".ffn_norm", out_list);
  ffn_in.collect_params(prefix + ".ffn_in", out_list);
  ffn_out.collect_params(prefix + ".ffn_out", out_list);
}

template <typename T>
GlobalFeatureExtractor<T>::GlobalFeatureExtractor(int channels_, int heads, int irb_expansion,
                                                  Rng& rng)
    : channels(channels_) {
  attn_norm = LayerNorm<T>(channels);
  attention = AttentionCore<T>(AttentionConfig{channels, heads}, rng);
  ffn_norm = LayerNorm<T>(channels);
  // Residual-free feed-forward: the block-level residual is the identity path.
  ffn = InvertedResidual<T>(channels, channels, 1, irb_expansion, rng, false);
}

template <typename T>
Tensor<T> GlobalFeatureExtractor<T>::forward(const Tensor<T>& e4, const Context<T>& ctx) {
  GAPNET_REQUIRE(e4.rank() == 4 && e4.shape[1] == channels,
                 "global extractor expects [N,{},h,w], got {}", channels, shape_str(e4.shape));
  const int h = e4.shape[2], w = e4.shape[3];
  auto tokens = nchw_to_tokens(e4, ctx);
  auto att = add(tokens, attention.forward(attn_norm.forward(tokens, ctx), ctx), ctx);
  auto ffn_tokens = nchw_to_tokens(ffn.forward(tokens_to_nchw(ffn_norm.forward(att, ctx), h, w, ctx), ctx), ctx);
  auto g = add(att, ffn_tokens, ctx);
  return tokens_to_nchw(g, h, w, ctx);
}

template <typename T>
void GlobalFeatureExtractor<T>::collect_params(const std::string& prefix, ParamList<T>& out_list) {
  attn_norm.collect_params(prefix + ".attn_norm", out_list);
  attention.collect_params(prefix + ".attention", out_list);
  ffn_norm.collect_params(prefix + ".ffn_norm", out_list);
  ffn.collect_params(prefix + ".ffn", out_list);
}

template <typename T>
void GlobalFeatureExtractor<T>::collect_state(const std::string& prefix, ParamList<T>& out_list) {
  ffn.collect_state(prefix + ".ffn", out_list);
}

#define GAPNET_BLOCKS_INSTANTIATE(T)      \
  template struct AttentionCore<T>;       \
  template struct InvertedResidual<T>;    \
  template struct GranularPyramidConv<T>; \
  template struct CrossScaleAttention<T>; \
  template struct GlobalFeatureExtractor<T>;

GAPNET_BLOCKS_INSTANTIATE(float)
GAPNET_BLOCKS_INSTANTIATE(double)
#undef GAPNET_BLOCKS_INSTANTIATE

}  // namespace gapnet
