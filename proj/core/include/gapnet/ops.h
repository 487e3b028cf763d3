#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gapnet/tape.h"
#include "gapnet/tensor.h"

namespace gapnet {

// Multiply-accumulate ledger. Convolutions and matrix products count their
// exact MAC totals; normalizations, activations, elementwise ops, pooling
// and interpolation count one MAC per output element; pure data movement
// counts nothing. Attribution follows the scope active when the op ran.
struct MacCounter {
  int64_t total = 0;
  std::string scope;
  std::map<std::string, int64_t> by_scope;

  void add(int64_t n) {
    total += n;
    if (!scope.empty()) by_scope[scope] += n;
  }
};

// Sets the counter scope for the lifetime of the object.
class MacScope {
 public:
  MacScope(MacCounter* counter, std::string scope) : counter_(counter) {
    if (counter_) {
      saved_ = counter_->scope;
      counter_->scope = std::move(scope);
    }
  }
  ~MacScope() {
    if (counter_) counter_->scope = saved_;
  }
  MacScope(const MacScope&) = delete;
  MacScope& operator=(const MacScope&) = delete;

 private:
  MacCounter* counter_;
  std::string saved_;
};

// Execution context threaded through every primitive. A null tape runs the
// op inference-style with nothing recorded. check_finite turns on the
// per-op output scan (debug mode, off by default).
template <typename T>
struct Context {
  Tape<T>* tape = nullptr;
  bool training = false;
  bool update_stats = true;
  bool check_finite = false;
  MacCounter* macs = nullptr;
};

// Elementwise. Binary ops accept b with the same shape as a, a scalar, or a
// shape that matches a trailing suffix of a's shape (leading-1 extents of b
// are stripped first).
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, const Context<T>& ctx = {});
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, const Context<T>& ctx = {});
template <typename T>
Tensor<T> relu(const Tensor<T>& x, const Context<T>& ctx = {});
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, const Context<T>& ctx = {});
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor, const Context<T>& ctx = {});

// [M,K]x[K,N] -> [M,N], or batched [B,M,K]x[B,K,N] -> [B,M,N].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, const Context<T>& ctx = {});

// Stabilized softmax along the last axis; every slice sums to 1.
template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const Context<T>& ctx = {});

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape, const Context<T>& ctx = {});
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order, const Context<T>& ctx = {});

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis, const Context<T>& ctx = {});
template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<int>& sizes, int axis,
                             const Context<T>& ctx = {});

// Reductions run in ascending index order so results are bit-deterministic.
template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::vector<int> axes, bool keepdims = false,
                     const Context<T>& ctx = {});
template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<int> axes, bool keepdims = false,
                      const Context<T>& ctx = {});

// Token layout helpers: [N,C,H,W] <-> [N,H*W,C] with token (h,w) at h*W+w.
template <typename T>
Tensor<T> nchw_to_tokens(const Tensor<T>& x, const Context<T>& ctx = {});
template <typename T>
Tensor<T> tokens_to_nchw(const Tensor<T>& x, int height, int width, const Context<T>& ctx = {});

}  // namespace gapnet
