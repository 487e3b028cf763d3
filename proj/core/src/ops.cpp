#include "gapnet/ops.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <initializer_list>

#include "gapnet/check.h"
#include "mm_kernels.h"

namespace gapnet {

using detail::mm_acc;
using detail::mm_nt_acc;
using detail::mm_tn_acc;

namespace {

template <typename T>
bool want_tape(const Context<T>& ctx, std::initializer_list<int> nodes) {
  if (!ctx.tape) return false;
  for (int n : nodes) {
    if (n >= 0) return true;
  }
  return false;
}

template <typename T>
void maybe_check_finite(const Context<T>& ctx, const Tensor<T>& out, const char* op) {
  if (ctx.check_finite && !out.all_finite()) {
    throw std::runtime_error(fmt::format("{}: non-finite value in output", op));
  }
}

// Broadcast geometry for binary elementwise ops: b must be a scalar, equal
// to a's shape, or a trailing suffix of it (after stripping leading 1s).
struct BcastInfo {
  int64_t repeat = 1;  // a.numel / b.numel
  int64_t inner = 1;   // b.numel
};

template <typename T>
BcastInfo bcast_info(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  Shape bs = b.shape;
  while (!bs.empty() && bs.front() == 1) bs.erase(bs.begin());
  const int ar = a.rank(), br = static_cast<int>(bs.size());
  GAPNET_REQUIRE(br <= ar, "{}: operand shape {} not broadcastable to {}", op, shape_str(b.shape),
                 shape_str(a.shape));
  for (int i = 0; i < br; ++i) {
    GAPNET_REQUIRE(bs[br - 1 - i] == a.shape[ar - 1 - i],
                   "{}: operand shape {} not broadcastable to {}", op, shape_str(b.shape),
                   shape_str(a.shape));
  }
  BcastInfo info;
  info.inner = b.numel();
  info.repeat = a.numel() / info.inner;
  return info;
}

// Sums `grad` (length repeat*inner) over the repeat groups.
template <typename T>
std::vector<T> reduce_repeat(const std::vector<T>& grad, int64_t repeat, int64_t inner) {
  std::vector<T> out(static_cast<size_t>(inner), T(0));
  for (int64_t r = 0; r < repeat; ++r) {
    const T* g = grad.data() + r * inner;
    for (int64_t i = 0; i < inner; ++i) out[static_cast<size_t>(i)] += g[i];
  }
  return out;
}

template <typename T>
void permute_raw(const T* src, T* dst, const Shape& in_shape, const std::vector<int>& order) {
  const int r = static_cast<int>(in_shape.size());
  Shape out_shape(r);
  for (int d = 0; d < r; ++d) out_shape[d] = in_shape[order[d]];
  std::vector<int64_t> in_strides(r, 1);
  for (int d = r - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
  std::vector<int64_t> step(r);  // input stride per output axis
  for (int d = 0; d < r; ++d) step[d] = in_strides[order[d]];

  std::vector<int> idx(r, 0);
  const int64_t total = shape_numel(in_shape);
  int64_t src_off = 0;
  for (int64_t i = 0; i < total; ++i) {
    dst[i] = src[src_off];
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[d] < out_shape[d]) {
        src_off += step[d];
        break;
      }
      idx[d] = 0;
      src_off -= step[d] * (out_shape[d] - 1);
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, const Context<T>& ctx) {
  const BcastInfo bc = bcast_info(a, b, "add");
  Tensor<T> out(a.shape);
  for (int64_t r = 0; r < bc.repeat; ++r) {
    const T* pa = a.data.data() + r * bc.inner;
    T* po = out.data.data() + r * bc.inner;
    const T* pb = b.data.data();
    for (int64_t i = 0; i < bc.inner; ++i) po[i] = pa[i] + pb[i];
  }
  if (ctx.macs) ctx.macs->add(out.numel());
  maybe_check_finite(ctx, out, "add");
  if (want_tape(ctx, {a.node, b.node})) {
    const int an = a.node, bn = b.node;
    const int64_t repeat = bc.repeat, inner = bc.inner;
    out.node = ctx.tape->record({an, bn}, out.numel(), [an, bn, repeat, inner](Tape<T>& t, const std::vector<T>& g) {
      if (an >= 0) t.accumulate(an, g.data(), static_cast<int64_t>(g.size()));
      if (bn >= 0) {
        const auto gb = reduce_repeat(g, repeat, inner);
        t.accumulate(bn, gb.data(), inner);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, const Context<T>& ctx) {
  const BcastInfo bc = bcast_info(a, b, "mul");
  Tensor<T> out(a.shape);
  for (int64_t r = 0; r < bc.repeat; ++r) {
    const T* pa = a.data.data() + r * bc.inner;
    T* po = out.data.data() + r * bc.inner;
    const T* pb = b.data.data();
    for (int64_t i = 0; i < bc.inner; ++i) po[i] = pa[i] * pb[i];
  }
  if (ctx.macs) ctx.macs->add(out.numel());
  maybe_check_finite(ctx, out, "mul");
  if (want_tape(ctx, {a.node, b.node})) {
    const int an = a.node, bn = b.node;
    const int64_t repeat = bc.repeat, inner = bc.inner;
    auto adata = a.data;
    auto bdata = b.data;
    out.node = ctx.tape->record(
        {an, bn}, out.numel(), [an, bn, repeat, inner, adata, bdata](Tape<T>& t, const std::vector<T>& g) {
          if (an >= 0) {
            std::vector<T> da(g.size());
            for (int64_t r = 0; r < repeat; ++r) {
              for (int64_t i = 0; i < inner; ++i) {
                da[static_cast<size_t>(r * inner + i)] =
                    g[static_cast<size_t>(r * inner + i)] * bdata[static_cast<size_t>(i)];
              }
            }
            t.accumulate(an, da.data(), static_cast<int64_t>(da.size()));
          }
          if (bn >= 0) {
            std::vector<T> db(static_cast<size_t>(inner), T(0));
            for (int64_t r = 0; r < repeat; ++r) {
              for (int64_t i = 0; i < inner; ++i) {
                db[static_cast<size_t>(i)] += g[static_cast<size_t>(r * inner + i)] *
                                               adata[static_cast<size_t>(r * inner + i)];
              }
            }
            t.accumulate(bn, db.data(), inner);
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, const Context<T>& ctx) {
  Tensor<T> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  if (ctx.macs) ctx.macs->add(out.numel());
  maybe_check_finite(ctx, out, "relu");
  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    auto xdata = x.data;
    out.node = ctx.tape->record({xn}, out.numel(), [xn, xdata](Tape<T>& t, const std::vector<T>& g) {
      std::vector<T> dx(g.size());
      for (size_t i = 0; i < g.size(); ++i) dx[i] = xdata[i] > T(0) ? g[i] : T(0);
      t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, const Context<T>& ctx) {
  Tensor<T> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    const T v = x.data[i];
    if (v >= T(0)) {
      const T e = std::exp(-v);
      out.data[i] = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(v);
      out.data[i] = e / (T(1) + e);
    }
  }
  if (ctx.macs) ctx.macs->add(out.numel());
  maybe_check_finite(ctx, out, "sigmoid");
  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    auto ydata = out.data;
    out.node = ctx.tape->record({xn}, out.numel(), [xn, ydata](Tape<T>& t, const std::vector<T>& g) {
      std::vector<T> dx(g.size());
      for (size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * ydata[i] * (T(1) - ydata[i]);
      t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor, const Context<T>& ctx) {
  Tensor<T> out(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = x.data[i] * factor;
  if (ctx.macs) ctx.macs->add(out.numel());
  maybe_check_finite(ctx, out, "scale");
  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    out.node = ctx.tape->record({xn}, out.numel(), [xn, factor](Tape<T>& t, const std::vector<T>& g) {
      std::vector<T> dx(g.size());
      for (size_t i = 0; i < g.size(); ++i) dx[i] = g[i] * factor;
      t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, const Context<T>& ctx) {
  GAPNET_REQUIRE(a.rank() == b.rank() && (a.rank() == 2 || a.rank() == 3),
                 "matmul expects two 2-d or two 3-d tensors, got {} and {}", shape_str(a.shape),
                 shape_str(b.shape));
  int B = 1, M, K, N;
  if (a.rank() == 3) {
    GAPNET_REQUIRE(a.shape[0] == b.shape[0], "matmul batch mismatch: {} vs {}", shape_str(a.shape),
                   shape_str(b.shape));
    B = a.shape[0];
    M = a.shape[1];
    K = a.shape[2];
    GAPNET_REQUIRE(b.shape[1] == K, "matmul inner extent mismatch: {} vs {}", shape_str(a.shape),
                   shape_str(b.shape));
    N = b.shape[2];
  } else {
    M = a.shape[0];
    K = a.shape[1];
    GAPNET_REQUIRE(b.shape[0] == K, "matmul inner extent mismatch: {} vs {}", shape_str(a.shape),
                   shape_str(b.shape));
    N = b.shape[1];
  }
  Tensor<T> out(a.rank() == 3 ? Shape{B, M, N} : Shape{M, N});
  for (int batch = 0; batch < B; ++batch) {
    mm_acc(a.data.data() + static_cast<int64_t>(batch) * M * K,
           b.data.data() + static_cast<int64_t>(batch) * K * N,
           out.data.data() + static_cast<int64_t>(batch) * M * N, M, K, N);
  }
  if (ctx.macs) ctx.macs->add(static_cast<int64_t>(B) * M * K * N);
  maybe_check_finite(ctx, out, "matmul");
  if (want_tape(ctx, {a.node, b.node})) {
    const int an = a.node, bn = b.node;
    auto adata = a.data;
    auto bdata = b.data;
    out.node = ctx.tape->record(
        {an, bn}, out.numel(), [an, bn, adata, bdata, B, M, K, N](Tape<T>& t, const std::vector<T>& g) {
          if (an >= 0) {
            std::vector<T> da(adata.size(), T(0));
            for (int batch = 0; batch < B; ++batch) {
              mm_nt_acc(g.data() + static_cast<int64_t>(batch) * M * N,
                        bdata.data() + static_cast<int64_t>(batch) * K * N,
                        da.data() + static_cast<int64_t>(batch) * M * K, M, N, K);
            }
            t.accumulate(an, da.data(), static_cast<int64_t>(da.size()));
          }
          if (bn >= 0) {
            std::vector<T> db(bdata.size(), T(0));
            for (int batch = 0; batch < B; ++batch) {
              mm_tn_acc(adata.data() + static_cast<int64_t>(batch) * M * K,
                        g.data() + static_cast<int64_t>(batch) * M * N,
                        db.data() + static_cast<int64_t>(batch) * K * N, M, K, N);
            }
            t.accumulate(bn, db.data(), static_cast<int64_t>(db.size()));
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x, const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() >= 1, "softmax needs rank >= 1");
  const int L = x.shape.back();
  const int64_t rows = x.numel() / L;
  Tensor<T> out(x.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = x.data.data() + r * L;
    T* po = out.data.data() + r * L;
    T mx = px[0];
    for (int i = 1; i < L; ++i) mx = std::max(mx, px[i]);
    T sum = T(0);
    for (int i = 0; i < L; ++i) {
      po[i] = std::exp(px[i] - mx);
      sum += po[i];
    }
    const T inv = T(1) / sum;
    for (int i = 0; i < L; ++i) po[i] *= inv;
  }
  if (ctx.macs) ctx.macs->add(out.numel());
  maybe_check_finite(ctx, out, "softmax");
  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    auto ydata = out.data;
    out.node = ctx.tape->record({xn}, out.numel(), [xn, ydata, L](Tape<T>& t, const std::vector<T>& g) {
      std::vector<T> dx(g.size());
      const int64_t rows = static_cast<int64_t>(g.size()) / L;
      for (int64_t r = 0; r < rows; ++r) {
        const T* py = ydata.data() + r * L;
        const T* pg = g.data() + r * L;
        T dot = T(0);
        for (int i = 0; i < L; ++i) dot += pg[i] * py[i];
        T* pd = dx.data() + r * L;
        for (int i = 0; i < L; ++i) pd[i] = py[i] * (pg[i] - dot);
      }
      t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape, const Context<T>& ctx) {
  GAPNET_REQUIRE(shape_numel(new_shape) == x.numel(), "reshape of {} elements to shape {}",
                 x.numel(), shape_str(new_shape));
  Tensor<T> out(std::move(new_shape), x.data);
  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    out.node = ctx.tape->record({xn}, out.numel(), [xn](Tape<T>& t, const std::vector<T>& g) {
      t.accumulate(xn, g.data(), static_cast<int64_t>(g.size()));
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& order, const Context<T>& ctx) {
  const int r = x.rank();
  GAPNET_REQUIRE(static_cast<int>(order.size()) == r, "permutation size {} vs rank {}", order.size(), r);
  std::vector<bool> seen(static_cast<size_t>(r), false);
  for (int d : order) {
    GAPNET_REQUIRE(d >= 0 && d < r && !seen[static_cast<size_t>(d)], "invalid permutation");
    seen[static_cast<size_t>(d)] = true;
  }
  Shape out_shape(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) out_shape[static_cast<size_t>(d)] = x.shape[order[d]];
  Tensor<T> out(std::move(out_shape));
  permute_raw(x.data.data(), out.data.data(), x.shape, order);
  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    std::vector<int> inverse(order.size());
    for (int d = 0; d < r; ++d) inverse[static_cast<size_t>(order[d])] = d;
    const Shape grad_shape = out.shape;
    out.node =
        ctx.tape->record({xn}, out.numel(), [xn, inverse, grad_shape](Tape<T>& t, const std::vector<T>& g) {
          std::vector<T> dx(g.size());
          permute_raw(g.data(), dx.data(), grad_shape, inverse);
          t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
        });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis, const Context<T>& ctx) {
  GAPNET_REQUIRE(!parts.empty(), "concat of zero parts");
  const int r = parts[0].rank();
  GAPNET_REQUIRE(axis >= 0 && axis < r, "concat axis {} out of range for rank {}", axis, r);
  Shape out_shape = parts[0].shape;
  int axis_total = 0;
  for (const auto& p : parts) {
    GAPNET_REQUIRE(p.rank() == r, "concat rank mismatch");
    for (int d = 0; d < r; ++d) {
      GAPNET_REQUIRE(d == axis || p.shape[d] == out_shape[d],
                     "concat extent disagreement on axis {}: {} vs {}", d, shape_str(p.shape),
                     shape_str(out_shape));
    }
    axis_total += p.shape[axis];
  }
  out_shape[axis] = axis_total;

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= out_shape[d];

  Tensor<T> out(out_shape);
  const int64_t out_row = static_cast<int64_t>(axis_total) * inner;
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t prow = static_cast<int64_t>(p.shape[axis]) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data.data() + o * out_row + offset, p.data.data() + o * prow,
                  static_cast<size_t>(prow) * sizeof(T));
    }
    offset += prow;
  }

  std::vector<int> nodes;
  nodes.reserve(parts.size());
  bool any = false;
  for (const auto& p : parts) {
    nodes.push_back(p.node);
    any = any || p.node >= 0;
  }
  if (ctx.tape && any) {
    std::vector<int64_t> rows;
    rows.reserve(parts.size());
    for (const auto& p : parts) rows.push_back(static_cast<int64_t>(p.shape[axis]) * inner);
    out.node = ctx.tape->record(nodes, out.numel(),
                                [nodes, rows, outer, out_row](Tape<T>& t, const std::vector<T>& g) {
                                  int64_t off = 0;
                                  for (size_t i = 0; i < nodes.size(); ++i) {
                                    if (nodes[i] >= 0) {
                                      std::vector<T> dp(static_cast<size_t>(outer * rows[i]));
                                      for (int64_t o = 0; o < outer; ++o) {
                                        std::memcpy(dp.data() + o * rows[i],
                                                    g.data() + o * out_row + off,
                                                    static_cast<size_t>(rows[i]) * sizeof(T));
                                      }
                                      t.accumulate(nodes[i], dp.data(), static_cast<int64_t>(dp.size()));
                                    }
                                    off += rows[i];
                                  }
                                });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<int>& sizes, int axis,
                             const Context<T>& ctx) {
  const int r = x.rank();
  GAPNET_REQUIRE(axis >= 0 && axis < r, "split axis {} out of range for rank {}", axis, r);
  int total = 0;
  for (int s : sizes) {
    GAPNET_REQUIRE(s > 0, "split sizes must be positive");
    total += s;
  }
  GAPNET_REQUIRE(total == x.shape[axis], "split sizes sum to {} but axis extent is {}", total,
                 x.shape[axis]);

  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= x.shape[d];
  for (int d = axis + 1; d < r; ++d) inner *= x.shape[d];
  const int64_t in_row = static_cast<int64_t>(x.shape[axis]) * inner;

  std::vector<Tensor<T>> parts;
  parts.reserve(sizes.size());
  int64_t offset = 0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    Shape ps = x.shape;
    ps[axis] = sizes[i];
    Tensor<T> part(ps);
    const int64_t prow = static_cast<int64_t>(sizes[i]) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(part.data.data() + o * prow, x.data.data() + o * in_row + offset,
                  static_cast<size_t>(prow) * sizeof(T));
    }
    if (want_tape(ctx, {x.node})) {
      const int xn = x.node;
      const int64_t xnumel = x.numel();
      const int64_t off_cap = offset;
      part.node = ctx.tape->record(
          {xn}, part.numel(), [xn, xnumel, off_cap, prow, outer, in_row](Tape<T>& t, const std::vector<T>& g) {
            std::vector<T> dx(static_cast<size_t>(xnumel), T(0));
            for (int64_t o = 0; o < outer; ++o) {
              std::memcpy(dx.data() + o * in_row + off_cap, g.data() + o * prow,
                          static_cast<size_t>(prow) * sizeof(T));
            }
            t.accumulate(xn, dx.data(), xnumel);
          });
    }
    offset += prow;
    parts.push_back(std::move(part));
  }
  return parts;
}

namespace {

template <typename T>
Tensor<T> reduce_impl(const Tensor<T>& x, std::vector<int> axes, bool keepdims, bool mean,
                      const Context<T>& ctx) {
  const int r = x.rank();
  GAPNET_REQUIRE(!axes.empty(), "empty reduction");
  std::sort(axes.begin(), axes.end());
  axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
  std::vector<bool> reduced(static_cast<size_t>(r), false);
  for (int a : axes) {
    GAPNET_REQUIRE(a >= 0 && a < r, "reduce axis {} out of range for rank {}", a, r);
    reduced[static_cast<size_t>(a)] = true;
  }

  Shape out_shape;
  int64_t count = 1;
  for (int d = 0; d < r; ++d) {
    if (reduced[static_cast<size_t>(d)]) {
      count *= x.shape[d];
      if (keepdims) out_shape.push_back(1);
    } else {
      out_shape.push_back(x.shape[d]);
    }
  }
  if (out_shape.empty()) out_shape.push_back(1);

  // Output offset per input element, walked in ascending input order.
  std::vector<int64_t> out_strides(static_cast<size_t>(r), 0);
  {
    int64_t stride = 1;
    for (int d = r - 1; d >= 0; --d) {
      if (!reduced[static_cast<size_t>(d)]) {
        out_strides[static_cast<size_t>(d)] = stride;
        stride *= x.shape[d];
      }
    }
  }

  Tensor<T> out(out_shape);
  std::vector<int> idx(static_cast<size_t>(r), 0);
  int64_t out_off = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    out.data[static_cast<size_t>(out_off)] += x.data[static_cast<size_t>(i)];
    for (int d = r - 1; d >= 0; --d) {
      if (++idx[static_cast<size_t>(d)] < x.shape[d]) {
        out_off += out_strides[static_cast<size_t>(d)];
        break;
      }
      idx[static_cast<size_t>(d)] = 0;
      out_off -= out_strides[static_cast<size_t>(d)] * (x.shape[d] - 1);
    }
  }
  const T inv = mean ? T(1) / static_cast<T>(count) : T(1);
  if (mean) {
    for (auto& v : out.data) v *= inv;
  }
  if (ctx.macs) ctx.macs->add(x.numel());
  maybe_check_finite(ctx, out, mean ? "reduce_mean" : "reduce_sum");

  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    const Shape xshape = x.shape;
    const auto ostrides = out_strides;
    out.node = ctx.tape->record({xn}, out.numel(), [xn, xshape, ostrides, inv](Tape<T>& t, const std::vector<T>& g) {
      const int rr = static_cast<int>(xshape.size());
      const int64_t total = shape_numel(xshape);
      std::vector<T> dx(static_cast<size_t>(total));
      std::vector<int> ix(static_cast<size_t>(rr), 0);
      int64_t ooff = 0;
      for (int64_t i = 0; i < total; ++i) {
        dx[static_cast<size_t>(i)] = g[static_cast<size_t>(ooff)] * inv;
        for (int d = rr - 1; d >= 0; --d) {
          if (++ix[static_cast<size_t>(d)] < xshape[static_cast<size_t>(d)]) {
            ooff += ostrides[static_cast<size_t>(d)];
            break;
          }
          ix[static_cast<size_t>(d)] = 0;
          ooff -= ostrides[static_cast<size_t>(d)] * (xshape[static_cast<size_t>(d)] - 1);
        }
      }
      t.accumulate(xn, dx.data(), total);
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, std::vector<int> axes, bool keepdims, const Context<T>& ctx) {
  return reduce_impl(x, std::move(axes), keepdims, false, ctx);
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, std::vector<int> axes, bool keepdims, const Context<T>& ctx) {
  return reduce_impl(x, std::move(axes), keepdims, true, ctx);
}

template <typename T>
Tensor<T> nchw_to_tokens(const Tensor<T>& x, const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() == 4, "nchw_to_tokens expects [N,C,H,W], got {}", shape_str(x.shape));
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor<T> moved = permute(x, {0, 2, 3, 1}, ctx);
  return reshape(moved, {n, h * w, c}, ctx);
}

template <typename T>
Tensor<T> tokens_to_nchw(const Tensor<T>& x, int height, int width, const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() == 3, "tokens_to_nchw expects [N,L,C], got {}", shape_str(x.shape));
  GAPNET_REQUIRE(x.shape[1] == height * width, "token count {} vs grid {}x{}", x.shape[1], height, width);
  const int n = x.shape[0], c = x.shape[2];
  Tensor<T> grid = reshape(x, {n, height, width, c}, ctx);
  return permute(grid, {0, 3, 1, 2}, ctx);
}

#define GAPNET_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&, const Context<T>&);                \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&, const Context<T>&);                \
  template Tensor<T> relu<T>(const Tensor<T>&, const Context<T>&);                                 \
  template Tensor<T> sigmoid<T>(const Tensor<T>&, const Context<T>&);                              \
  template Tensor<T> scale<T>(const Tensor<T>&, T, const Context<T>&);                             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&, const Context<T>&);             \
  template Tensor<T> softmax_lastdim<T>(const Tensor<T>&, const Context<T>&);                      \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape, const Context<T>&);                       \
  template Tensor<T> permute<T>(const Tensor<T>&, const std::vector<int>&, const Context<T>&);     \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, int, const Context<T>&);             \
  template std::vector<Tensor<T>> split<T>(const Tensor<T>&, const std::vector<int>&, int,         \
                                           const Context<T>&);                                     \
  template Tensor<T> reduce_sum<T>(const Tensor<T>&, std::vector<int>, bool, const Context<T>&);   \
  template Tensor<T> reduce_mean<T>(const Tensor<T>&, std::vector<int>, bool, const Context<T>&);  \
  template Tensor<T> nchw_to_tokens<T>(const Tensor<T>&, const Context<T>&);                       \
  template Tensor<T> tokens_to_nchw<T>(const Tensor<T>&, int, int, const Context<T>&);

GAPNET_INSTANTIATE_OPS(float)
GAPNET_INSTANTIATE_OPS(double)

#undef GAPNET_INSTANTIATE_OPS

}  // namespace gapnet
