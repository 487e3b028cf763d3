#pragma once

#include <string>
#include <utility>
#include <vector>

#include "gapnet/ops.h"
#include "gapnet/rng.h"

namespace gapnet {

// Named handle to a module tensor, used for optimization, counting and
// checkpointing. Pointees live in the owning module.
template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
using ParamList = std::vector<ParamRef<T>>;

struct Conv2dGeom {
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int dil_h = 1, dil_w = 1;
  int groups = 1;
};

std::pair<int, int> conv2d_output_extent(int height, int width, int kh, int kw, const Conv2dGeom& geom);

// Cross-correlation (no kernel flip). weight is [out, in/groups, kh, kw];
// bias, when present, is [out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 const Conv2dGeom& geom, const Context<T>& ctx = {});

// Per-channel batch normalization over [N,C,H,W]. Training mode normalizes
// by biased batch statistics and, when ctx.update_stats holds, folds them
// into the running buffers with the given momentum; eval mode reads the
// running buffers. Affine transform is applied last.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, T eps, T momentum,
                      const Context<T>& ctx = {});

// Normalizes the trailing axis of [..., C] per token.
template <typename T>
Tensor<T> layernorm_lastdim(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                            const Context<T>& ctx = {});

// x[..., Cin] * weight[Cin, Cout] + bias. Dedicated kernel rather than a
// matmul composition so the two stay independently testable.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 const Context<T>& ctx = {});

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, std::nullptr_t,
                 const Conv2dGeom& geom, const Context<T>& ctx = {}) {
  return conv2d(x, weight, static_cast<const Tensor<T>*>(nullptr), geom, ctx);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, std::nullptr_t,
                 const Context<T>& ctx = {}) {
  return linear(x, weight, static_cast<const Tensor<T>*>(nullptr), ctx);
}

// Output bin (i,j) averages rows [floor(i*H/m), ceil((i+1)*H/m)) and the
// analogous columns; bins may overlap when m does not divide the extent.
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, int m, const Context<T>& ctx = {});

// Half-pixel-center bilinear upsampling with edge clamping:
// src = (dst + 0.5) * (in / out) - 0.5, clamped to [0, in - 1].
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int out_h, int out_w, const Context<T>& ctx = {});

// ---- Layer wrappers ----

struct Conv2dOpts {
  std::pair<int, int> kernel{3, 3};
  std::pair<int, int> stride{1, 1};
  std::pair<int, int> padding{0, 0};
  std::pair<int, int> dilation{1, 1};
  int groups = 1;
  bool bias = true;
};

template <typename T>
struct Conv2d {
  int in_channels = 0, out_channels = 0;
  int kh = 0, kw = 0;
  Conv2dGeom geom;
  bool has_bias = true;
  Tensor<T> weight;
  Tensor<T> bias;

  Conv2d() = default;
  Conv2d(int in, int out, const Conv2dOpts& opts, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx) const;
  void collect_params(const std::string& prefix, ParamList<T>& out);
  int64_t param_count() const;
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels);
  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx);
  void collect_params(const std::string& prefix, ParamList<T>& out);
  void collect_state(const std::string& prefix, ParamList<T>& out);
  int64_t param_count() const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  explicit LayerNorm(int channels);
  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx) const;
  void collect_params(const std::string& prefix, ParamList<T>& out);
  int64_t param_count() const;
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [Cin, Cout]
  Tensor<T> bias;
  bool has_bias = true;

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool with_bias = true);
  Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx) const;
  void collect_params(const std::string& prefix, ParamList<T>& out);
  int64_t param_count() const;
};

#define GAPNET_NN_EXTERN(T)                                                                        \
  extern template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,       \
                                      const Conv2dGeom&, const Context<T>&);                      \
  extern template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                           Tensor<T>&, Tensor<T>&, T, T, const Context<T>&);      \
  extern template Tensor<T> layernorm_lastdim<T>(const Tensor<T>&, const Tensor<T>&,              \
                                                 const Tensor<T>&, T, const Context<T>&);         \
  extern template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,       \
                                      const Context<T>&);                                         \
  extern template Tensor<T> adaptive_avg_pool2d<T>(const Tensor<T>&, int, const Context<T>&);     \
  extern template Tensor<T> bilinear_upsample<T>(const Tensor<T>&, int, int, const Context<T>&);  \
  extern template struct Conv2d<T>;                                                               \
  extern template struct BatchNorm2d<T>;                                                          \
  extern template struct LayerNorm<T>;                                                            \
  extern template struct Linear<T>;

GAPNET_NN_EXTERN(float)
GAPNET_NN_EXTERN(double)
#undef GAPNET_NN_EXTERN

}  // namespace gapnet
