#pragma once

#include <array>
#include <optional>
#include <vector>

#include "gapnet/nn.h"

namespace gapnet {

struct AttentionConfig {
  int dim = 64;
  int heads = 1;  // scaling denominator d_k = dim / heads
};

// Shapes seen by the most recent attention evaluation; lets callers assert
// the attention-matrix extent without poking at internals.
struct AttentionTrace {
  int query_len = 0;
  int key_len = 0;
  int dim = 0;
};

// Q = X Wq, K = X Wk, V = X Wv; out = Linear(softmax(Q K^T / sqrt(d_k)) V).
// Queries may come from a different token stream than keys/values.
template <typename T>
struct AttentionCore {
  AttentionConfig cfg;
  Linear<T> wq, wk, wv, out;

  AttentionCore() = default;
  AttentionCore(const AttentionConfig& config, Rng& rng);
  Tensor<T> forward(const Tensor<T>& query_tokens, const Tensor<T>& kv_tokens,
                    const Context<T>& ctx, AttentionTrace* trace = nullptr) const;
  Tensor<T> forward(const Tensor<T>& tokens, const Context<T>& ctx,
                    AttentionTrace* trace = nullptr) const {
    return forward(tokens, tokens, ctx, trace);
  }
  void collect_params(const std::string& prefix, ParamList<T>& out_list);
  int64_t param_count() const;
};

// MobileNet-V2 building block: 1x1 expand, 3x3 depthwise, 1x1 project, each
// followed by batch normalization, ReLU after the first two. Carries the
// identity shortcut only when stride is 1 and channel counts match.
template <typename T>
struct InvertedResidual {
  int in_channels = 0, out_channels = 0, stride = 1, expansion = 1;
  bool has_expand = false;
  bool residual = false;
  Conv2d<T> expand;
  BatchNorm2d<T> expand_bn;
  Conv2d<T> depthwise;
  BatchNorm2d<T> depthwise_bn;
  Conv2d<T> project;
  BatchNorm2d<T> project_bn;

  InvertedResidual() = default;
  // allow_residual=false builds the residual-free variant used as a
  // transformer feed-forward.
  InvertedResidual(int in, int out, int stride_, int expansion_, Rng& rng,
                   bool allow_residual = true);
  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx);
  void collect_params(const std::string& prefix, ParamList<T>& out_list);
  void collect_state(const std::string& prefix, ParamList<T>& out_list);
};

struct GpcConfig {
  int channels = 48;  // must be divisible by 8
  int m = 7;          // pooled spatial extent of the attention branch
  std::array<int, 4> atrous_rates{8, 4, 2, 1};
  bool use_attention = true;
  int heads = 1;
};

// Channel split sizes for the 1/8, 1/8, 1/4, 1/2 pyramid ratios.
std::array<int, 4> gpc_split_sizes(int channels);

// Granular pyramid convolution: a channel-split pyramid of dilated 3x3
// convolutions plus a pooled self-attention branch, joined by a residual.
// Shape preserving; with all learned weights zero it is the identity map.
template <typename T>
struct GranularPyramidConv {
  GpcConfig cfg;
  std::array<int, 4> split_sizes{};
  LayerNorm<T> pool_norm;
  AttentionCore<T> attention;
  std::vector<Conv2d<T>> pyramid;
  std::vector<BatchNorm2d<T>> pyramid_norm;
  Conv2d<T> fuse;

  GranularPyramidConv() = default;
  GranularPyramidConv(const GpcConfig& config, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx);
  void collect_params(const std::string& prefix, ParamList<T>& out_list);
  void collect_state(const std::string& prefix, ParamList<T>& out_list);
};

struct CsaConfig {
  int dim = 64;
  int heads = 1;
  int ffn_expansion = 4;
};

// Cross-scale attention over two pre-projected token streams: queries come
// from the concatenation, keys and values only from the second (high-level)
// stream. Output keeps all L1+L2 tokens. The trailing feed-forward is two
// linear layers around a ReLU with a residual connection.
template <typename T>
struct CrossScaleAttention {
  CsaConfig cfg;
  LayerNorm<T> attn_norm;
  AttentionCore<T> attention;
  LayerNorm<T> ffn_norm;
  Linear<T> ffn_in, ffn_out;

  CrossScaleAttention() = default;
  CrossScaleAttention(const CsaConfig& config, Rng& rng);
  Tensor<T> forward(const Tensor<T>& low_tokens, const Tensor<T>& high_tokens,
                    const Context<T>& ctx, AttentionTrace* trace = nullptr) const;
  // Degenerate single-stream form (no low-level tokens): vanilla
  // self-attention over the high-level stream.
  Tensor<T> forward(const Tensor<T>& high_tokens, const Context<T>& ctx,
                    AttentionTrace* trace = nullptr) const;
  void collect_params(const std::string& prefix, ParamList<T>& out_list);
};

// Transformer block over the stride-32 feature map: pre-norm attention with
// a residual, then an inverted-residual feed-forward with a residual.
// Shape preserving; identity under all-zero weights.
template <typename T>
struct GlobalFeatureExtractor {
  int channels = 0;
  LayerNorm<T> attn_norm;
  AttentionCore<T> attention;
  LayerNorm<T> ffn_norm;
  InvertedResidual<T> ffn;

  GlobalFeatureExtractor() = default;
  GlobalFeatureExtractor(int channels_, int heads, int irb_expansion, Rng& rng);
  Tensor<T> forward(const Tensor<T>& e4, const Context<T>& ctx);
  void collect_params(const std::string& prefix, ParamList<T>& out_list);
  void collect_state(const std::string& prefix, ParamList<T>& out_list);
};

#define GAPNET_BLOCKS_EXTERN(T)                  \
  extern template struct AttentionCore<T>;       \
  extern template struct InvertedResidual<T>;    \
  extern template struct GranularPyramidConv<T>; \
  extern template struct CrossScaleAttention<T>; \
  extern template struct GlobalFeatureExtractor<T>;

GAPNET_BLOCKS_EXTERN(float)
GAPNET_BLOCKS_EXTERN(double)
#undef GAPNET_BLOCKS_EXTERN

}  // namespace gapnet
