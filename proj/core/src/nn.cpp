#include "gapnet/nn.h"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gapnet/check.h"
#include "mm_kernels.h"

namespace gapnet {

namespace {

int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }
int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

template <typename T>
bool want_tape(const Context<T>& ctx, std::initializer_list<int> nodes) {
  if (!ctx.tape) return false;
  for (int n : nodes) {
    if (n >= 0) return true;
  }
  return false;
}

struct ConvDims {
  int n, cin, h, w, cout, kh, kw, hout, wout, group_in, group_out;
};

// out[n,co,:,:] (+=/=) sum over taps; shared by forward and the dx scatter.
template <typename T>
void conv_forward_kernel(const T* x, const T* wgt, const T* bias, T* out, const ConvDims& d,
                         const Conv2dGeom& g) {
  const int64_t xplane = static_cast<int64_t>(d.h) * d.w;
  const int64_t oplane = static_cast<int64_t>(d.hout) * d.wout;
  for (int n = 0; n < d.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      for (int oc = 0; oc < d.group_out; ++oc) {
        const int co = grp * d.group_out + oc;
        T* op = out + (static_cast<int64_t>(n) * d.cout + co) * oplane;
        const T bv = bias ? bias[co] : T(0);
        for (int64_t i = 0; i < oplane; ++i) op[i] = bv;
        for (int ic = 0; ic < d.group_in; ++ic) {
          const int ci = grp * d.group_in + ic;
          const T* xp = x + (static_cast<int64_t>(n) * d.cin + ci) * xplane;
          const T* wrow = wgt + ((static_cast<int64_t>(co) * d.group_in + ic) * d.kh) * d.kw;
          for (int u = 0; u < d.kh; ++u) {
            const int off_h = u * g.dil_h - g.pad_h;
            const int oh_lo = std::max(0, ceil_div(-off_h, g.stride_h));
            const int oh_hi = std::min(d.hout - 1, floor_div(d.h - 1 - off_h, g.stride_h));
            for (int v = 0; v < d.kw; ++v) {
              const T wv = wrow[u * d.kw + v];
              const int off_w = v * g.dil_w - g.pad_w;
              const int ow_lo = std::max(0, ceil_div(-off_w, g.stride_w));
              const int ow_hi = std::min(d.wout - 1, floor_div(d.w - 1 - off_w, g.stride_w));
              for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                const T* xr = xp + static_cast<int64_t>(oh * g.stride_h + off_h) * d.w;
                T* orow = op + static_cast<int64_t>(oh) * d.wout;
                int iw = ow_lo * g.stride_w + off_w;
                for (int ow = ow_lo; ow <= ow_hi; ++ow, iw += g.stride_w) orow[ow] += wv * xr[iw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_input(const T* gout, const T* wgt, T* dx, const ConvDims& d, const Conv2dGeom& g) {
  const int64_t xplane = static_cast<int64_t>(d.h) * d.w;
  const int64_t oplane = static_cast<int64_t>(d.hout) * d.wout;
  for (int n = 0; n < d.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      for (int oc = 0; oc < d.group_out; ++oc) {
        const int co = grp * d.group_out + oc;
        const T* gp = gout + (static_cast<int64_t>(n) * d.cout + co) * oplane;
        for (int ic = 0; ic < d.group_in; ++ic) {
          const int ci = grp * d.group_in + ic;
          T* dxp = dx + (static_cast<int64_t>(n) * d.cin + ci) * xplane;
          const T* wrow = wgt + ((static_cast<int64_t>(co) * d.group_in + ic) * d.kh) * d.kw;
          for (int u = 0; u < d.kh; ++u) {
            const int off_h = u * g.dil_h - g.pad_h;
            const int oh_lo = std::max(0, ceil_div(-off_h, g.stride_h));
            const int oh_hi = std::min(d.hout - 1, floor_div(d.h - 1 - off_h, g.stride_h));
            for (int v = 0; v < d.kw; ++v) {
              const T wv = wrow[u * d.kw + v];
              const int off_w = v * g.dil_w - g.pad_w;
              const int ow_lo = std::max(0, ceil_div(-off_w, g.stride_w));
              const int ow_hi = std::min(d.wout - 1, floor_div(d.w - 1 - off_w, g.stride_w));
              for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                T* dxr = dxp + static_cast<int64_t>(oh * g.stride_h + off_h) * d.w;
                const T* grow = gp + static_cast<int64_t>(oh) * d.wout;
                int iw = ow_lo * g.stride_w + off_w;
                for (int ow = ow_lo; ow <= ow_hi; ++ow, iw += g.stride_w) dxr[iw] += wv * grow[ow];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward_weight(const T* gout, const T* x, T* dw, const ConvDims& d, const Conv2dGeom& g) {
  const int64_t xplane = static_cast<int64_t>(d.h) * d.w;
  const int64_t oplane = static_cast<int64_t>(d.hout) * d.wout;
  for (int n = 0; n < d.n; ++n) {
    for (int grp = 0; grp < g.groups; ++grp) {
      for (int oc = 0; oc < d.group_out; ++oc) {
        const int co = grp * d.group_out + oc;
        const T* gp = gout + (static_cast<int64_t>(n) * d.cout + co) * oplane;
        for (int ic = 0; ic < d.group_in; ++ic) {
          const int ci = grp * d.group_in + ic;
          const T* xp = x + (static_cast<int64_t>(n) * d.cin + ci) * xplane;
          T* dwrow = dw + ((static_cast<int64_t>(co) * d.group_in + ic) * d.kh) * d.kw;
          for (int u = 0; u < d.kh; ++u) {
            const int off_h = u * g.dil_h - g.pad_h;
            const int oh_lo = std::max(0, ceil_div(-off_h, g.stride_h));
            const int oh_hi = std::min(d.hout - 1, floor_div(d.h - 1 - off_h, g.stride_h));
            for (int v = 0; v < d.kw; ++v) {
              const int off_w = v * g.dil_w - g.pad_w;
              const int ow_lo = std::max(0, ceil_div(-off_w, g.stride_w));
              const int ow_hi = std::min(d.wout - 1, floor_div(d.w - 1 - off_w, g.stride_w));
              T acc = T(0);
              for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                const T* xr = xp + static_cast<int64_t>(oh * g.stride_h + off_h) * d.w;
                const T* grow = gp + static_cast<int64_t>(oh) * d.wout;
                int iw = ow_lo * g.stride_w + off_w;
                for (int ow = ow_lo; ow <= ow_hi; ++ow, iw += g.stride_w) acc += grow[ow] * xr[iw];
              }
              dwrow[u * d.kw + v] += acc;
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::pair<int, int> conv2d_output_extent(int height, int width, int kh, int kw, const Conv2dGeom& g) {
  const int hout = (height + 2 * g.pad_h - g.dil_h * (kh - 1) - 1) / g.stride_h + 1;
  const int wout = (width + 2 * g.pad_w - g.dil_w * (kw - 1) - 1) / g.stride_w + 1;
  return {hout, wout};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 const Conv2dGeom& geom, const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() == 4, "conv2d input must be [N,Cin,H,W], got {}", shape_str(x.shape));
  GAPNET_REQUIRE(weight.rank() == 4, "conv2d weight must be [Cout,Cin/groups,kh,kw], got {}",
                 shape_str(weight.shape));
  ConvDims d;
  d.n = x.shape[0];
  d.cin = x.shape[1];
  d.h = x.shape[2];
  d.w = x.shape[3];
  d.cout = weight.shape[0];
  d.kh = weight.shape[2];
  d.kw = weight.shape[3];
  GAPNET_REQUIRE(geom.groups >= 1 && d.cin % geom.groups == 0 && d.cout % geom.groups == 0,
                 "groups {} must divide both channel counts {}->{}", geom.groups, d.cin, d.cout);
  d.group_in = d.cin / geom.groups;
  d.group_out = d.cout / geom.groups;
  GAPNET_REQUIRE(weight.shape[1] == d.group_in, "conv2d channel mismatch: input {} with weight {}",
                 shape_str(x.shape), shape_str(weight.shape));
  if (bias) {
    GAPNET_REQUIRE(bias->rank() == 1 && bias->shape[0] == d.cout, "conv2d bias must be [{}]", d.cout);
  }
  const auto [hout, wout] = conv2d_output_extent(d.h, d.w, d.kh, d.kw, geom);
  GAPNET_REQUIRE(hout >= 1 && wout >= 1, "conv2d degenerate output extent {}x{} from input {}x{}",
                 hout, wout, d.h, d.w);
  d.hout = hout;
  d.wout = wout;

  Tensor<T> out({d.n, d.cout, d.hout, d.wout});
  if (ctx.macs) {
    ctx.macs->add(static_cast<int64_t>(d.n) * d.cout * d.hout * d.wout * d.group_in * d.kh * d.kw);
  }
  conv_forward_kernel(x.data.data(), weight.data.data(), bias ? bias->data.data() : nullptr,
                      out.data.data(), d, geom);
  if (ctx.check_finite && !out.all_finite()) throw std::runtime_error("conv2d: non-finite value in output");

  const int bias_node = bias ? bias->node : -1;
  if (want_tape(ctx, {x.node, weight.node, bias_node})) {
    const int xn = x.node, wn = weight.node, bn = bias_node;
    auto xdata = x.data;
    auto wdata = weight.data;
    const Conv2dGeom g = geom;
    const ConvDims dims = d;
    out.node = ctx.tape->record(
        {xn, wn, bn}, out.numel(), [xn, wn, bn, xdata, wdata, g, dims](Tape<T>& t, const std::vector<T>& gout) {
          if (xn >= 0) {
            std::vector<T> dx(xdata.size(), T(0));
            conv_backward_input(gout.data(), wdata.data(), dx.data(), dims, g);
            t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
          }
          if (wn >= 0) {
            std::vector<T> dw(wdata.size(), T(0));
            conv_backward_weight(gout.data(), xdata.data(), dw.data(), dims, g);
            t.accumulate(wn, dw.data(), static_cast<int64_t>(dw.size()));
          }
          if (bn >= 0) {
            std::vector<T> db(static_cast<size_t>(dims.cout), T(0));
            const int64_t oplane = static_cast<int64_t>(dims.hout) * dims.wout;
            for (int n = 0; n < dims.n; ++n) {
              for (int co = 0; co < dims.cout; ++co) {
                const T* gp = gout.data() + (static_cast<int64_t>(n) * dims.cout + co) * oplane;
                T acc = T(0);
                for (int64_t i = 0; i < oplane; ++i) acc += gp[i];
                db[static_cast<size_t>(co)] += acc;
              }
            }
            t.accumulate(bn, db.data(), dims.cout);
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                      Tensor<T>& running_mean, Tensor<T>& running_var, T eps, T momentum,
                      const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() == 4, "batchnorm2d input must be [N,C,H,W], got {}", shape_str(x.shape));
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  GAPNET_REQUIRE(gamma.numel() == c && beta.numel() == c && running_mean.numel() == c &&
                     running_var.numel() == c,
                 "batchnorm2d channel mismatch: input has {} channels", c);
  const int64_t plane = static_cast<int64_t>(h) * w;
  const int64_t count = static_cast<int64_t>(n) * plane;

  std::vector<T> mean(static_cast<size_t>(c)), var(static_cast<size_t>(c));
  if (ctx.training) {
    GAPNET_REQUIRE(count >= 2, "batchnorm2d training mode needs N*H*W >= 2, got {}", count);
    for (int ch = 0; ch < c; ++ch) {
      T sum = T(0);
      for (int b = 0; b < n; ++b) {
        const T* p = x.data.data() + (static_cast<int64_t>(b) * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) sum += p[i];
      }
      const T mu = sum / static_cast<T>(count);
      T sq = T(0);
      for (int b = 0; b < n; ++b) {
        const T* p = x.data.data() + (static_cast<int64_t>(b) * c + ch) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const T dmu = p[i] - mu;
          sq += dmu * dmu;
        }
      }
      mean[static_cast<size_t>(ch)] = mu;
      var[static_cast<size_t>(ch)] = sq / static_cast<T>(count);  // biased
    }
    if (ctx.update_stats) {
      for (int ch = 0; ch < c; ++ch) {
        running_mean.data[static_cast<size_t>(ch)] =
            (T(1) - momentum) * running_mean.data[static_cast<size_t>(ch)] + momentum * mean[static_cast<size_t>(ch)];
        running_var.data[static_cast<size_t>(ch)] =
            (T(1) - momentum) * running_var.data[static_cast<size_t>(ch)] + momentum * var[static_cast<size_t>(ch)];
      }
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[static_cast<size_t>(ch)] = running_mean.data[static_cast<size_t>(ch)];
      var[static_cast<size_t>(ch)] = running_var.data[static_cast<size_t>(ch)];
    }
  }

  Tensor<T> out(x.shape);
  std::vector<T> xhat(x.data.size());
  std::vector<T> invstd(static_cast<size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    invstd[static_cast<size_t>(ch)] = T(1) / std::sqrt(var[static_cast<size_t>(ch)] + eps);
  }
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const int64_t base = (static_cast<int64_t>(b) * c + ch) * plane;
      const T mu = mean[static_cast<size_t>(ch)];
      const T is = invstd[static_cast<size_t>(ch)];
      const T gm = gamma.data[static_cast<size_t>(ch)];
      const T bt = beta.data[static_cast<size_t>(ch)];
      for (int64_t i = 0; i < plane; ++i) {
        const T xh = (x.data[static_cast<size_t>(base + i)] - mu) * is;
        xhat[static_cast<size_t>(base + i)] = xh;
        out.data[static_cast<size_t>(base + i)] = gm * xh + bt;
      }
    }
  }
  if (ctx.macs) ctx.macs->add(out.numel());
  if (ctx.check_finite && !out.all_finite()) throw std::runtime_error("batchnorm2d: non-finite value in output");

  if (want_tape(ctx, {x.node, gamma.node, beta.node})) {
    const int xn = x.node, gn = gamma.node, bn = beta.node;
    const bool through_stats = ctx.training;
    auto gdata = gamma.data;
    out.node = ctx.tape->record(
        {xn, gn, bn}, out.numel(),
        [xn, gn, bn, xhat, invstd, gdata, n, c, plane, count, through_stats](Tape<T>& t,
                                                                             const std::vector<T>& gout) {
          if (gn >= 0 || bn >= 0) {
            std::vector<T> dgamma(static_cast<size_t>(c), T(0));
            std::vector<T> dbeta(static_cast<size_t>(c), T(0));
            for (int b = 0; b < n; ++b) {
              for (int ch = 0; ch < c; ++ch) {
                const int64_t base = (static_cast<int64_t>(b) * c + ch) * plane;
                T dg = T(0), db = T(0);
                for (int64_t i = 0; i < plane; ++i) {
                  dg += gout[static_cast<size_t>(base + i)] * xhat[static_cast<size_t>(base + i)];
                  db += gout[static_cast<size_t>(base + i)];
                }
                dgamma[static_cast<size_t>(ch)] += dg;
                dbeta[static_cast<size_t>(ch)] += db;
              }
            }
            if (gn >= 0) t.accumulate(gn, dgamma.data(), c);
            if (bn >= 0) t.accumulate(bn, dbeta.data(), c);
          }
          if (xn >= 0) {
            std::vector<T> dx(xhat.size());
            if (through_stats) {
              // dx = (gamma*invstd) * (dy - mean(dy) - xhat * mean(dy*xhat))
              for (int ch = 0; ch < c; ++ch) {
                T sum_dy = T(0), sum_dyx = T(0);
                for (int b = 0; b < n; ++b) {
                  const int64_t base = (static_cast<int64_t>(b) * c + ch) * plane;
                  for (int64_t i = 0; i < plane; ++i) {
                    sum_dy += gout[static_cast<size_t>(base + i)];
                    sum_dyx += gout[static_cast<size_t>(base + i)] * xhat[static_cast<size_t>(base + i)];
                  }
                }
                const T mean_dy = sum_dy / static_cast<T>(count);
                const T mean_dyx = sum_dyx / static_cast<T>(count);
                const T k = gdata[static_cast<size_t>(ch)] * invstd[static_cast<size_t>(ch)];
                for (int b = 0; b < n; ++b) {
                  const int64_t base = (static_cast<int64_t>(b) * c + ch) * plane;
                  for (int64_t i = 0; i < plane; ++i) {
                    dx[static_cast<size_t>(base + i)] =
                        k * (gout[static_cast<size_t>(base + i)] - mean_dy -
                             xhat[static_cast<size_t>(base + i)] * mean_dyx);
                  }
                }
              }
            } else {
              for (int b = 0; b < n; ++b) {
                for (int ch = 0; ch < c; ++ch) {
                  const int64_t base = (static_cast<int64_t>(b) * c + ch) * plane;
                  const T k = gdata[static_cast<size_t>(ch)] * invstd[static_cast<size_t>(ch)];
                  for (int64_t i = 0; i < plane; ++i) {
                    dx[static_cast<size_t>(base + i)] = k * gout[static_cast<size_t>(base + i)];
                  }
                }
              }
            }
            t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> layernorm_lastdim(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                            const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() >= 1, "layernorm needs rank >= 1");
  const int c = x.shape.back();
  GAPNET_REQUIRE(gamma.numel() == c && beta.numel() == c,
                 "layernorm channel mismatch: tokens have {} channels, affine has {}", c, gamma.numel());
  const int64_t rows = x.numel() / c;

  Tensor<T> out(x.shape);
  std::vector<T> xhat(x.data.size());
  std::vector<T> invstd(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const T* px = x.data.data() + r * c;
    T sum = T(0);
    for (int i = 0; i < c; ++i) sum += px[i];
    const T mu = sum / static_cast<T>(c);
    T sq = T(0);
    for (int i = 0; i < c; ++i) {
      const T dmu = px[i] - mu;
      sq += dmu * dmu;
    }
    const T is = T(1) / std::sqrt(sq / static_cast<T>(c) + eps);
    invstd[static_cast<size_t>(r)] = is;
    T* ph = xhat.data() + r * c;
    T* po = out.data.data() + r * c;
    for (int i = 0; i < c; ++i) {
      ph[i] = (px[i] - mu) * is;
      po[i] = gamma.data[static_cast<size_t>(i)] * ph[i] + beta.data[static_cast<size_t>(i)];
    }
  }
  if (ctx.macs) ctx.macs->add(out.numel());
  if (ctx.check_finite && !out.all_finite()) throw std::runtime_error("layernorm: non-finite value in output");

  if (want_tape(ctx, {x.node, gamma.node, beta.node})) {
    const int xn = x.node, gn = gamma.node, bn = beta.node;
    auto gdata = gamma.data;
    out.node = ctx.tape->record(
        {xn, gn, bn}, out.numel(),
        [xn, gn, bn, xhat, invstd, gdata, rows, c](Tape<T>& t, const std::vector<T>& gout) {
          if (gn >= 0 || bn >= 0) {
            std::vector<T> dgamma(static_cast<size_t>(c), T(0));
            std::vector<T> dbeta(static_cast<size_t>(c), T(0));
            for (int64_t r = 0; r < rows; ++r) {
              const T* g = gout.data() + r * c;
              const T* ph = xhat.data() + r * c;
              for (int i = 0; i < c; ++i) {
                dgamma[static_cast<size_t>(i)] += g[i] * ph[i];
                dbeta[static_cast<size_t>(i)] += g[i];
              }
            }
            if (gn >= 0) t.accumulate(gn, dgamma.data(), c);
            if (bn >= 0) t.accumulate(bn, dbeta.data(), c);
          }
          if (xn >= 0) {
            std::vector<T> dx(xhat.size());
            for (int64_t r = 0; r < rows; ++r) {
              const T* g = gout.data() + r * c;
              const T* ph = xhat.data() + r * c;
              T sum_dh = T(0), sum_dhx = T(0);
              for (int i = 0; i < c; ++i) {
                const T dh = g[i] * gdata[static_cast<size_t>(i)];
                sum_dh += dh;
                sum_dhx += dh * ph[i];
              }
              const T mean_dh = sum_dh / static_cast<T>(c);
              const T mean_dhx = sum_dhx / static_cast<T>(c);
              T* pd = dx.data() + r * c;
              const T is = invstd[static_cast<size_t>(r)];
              for (int i = 0; i < c; ++i) {
                const T dh = g[i] * gdata[static_cast<size_t>(i)];
                pd[i] = is * (dh - mean_dh - ph[i] * mean_dhx);
              }
            }
            t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>* bias,
                 const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() >= 2, "linear input needs rank >= 2, got {}", shape_str(x.shape));
  GAPNET_REQUIRE(weight.rank() == 2, "linear weight must be [Cin,Cout], got {}", shape_str(weight.shape));
  const int cin = weight.shape[0], cout = weight.shape[1];
  GAPNET_REQUIRE(x.shape.back() == cin, "linear extent mismatch: input {} with weight {}",
                 shape_str(x.shape), shape_str(weight.shape));
  if (bias) GAPNET_REQUIRE(bias->numel() == cout, "linear bias must be [{}]", cout);
  const int64_t rows = x.numel() / cin;

  Shape out_shape = x.shape;
  out_shape.back() = cout;
  Tensor<T> out(out_shape);
  if (bias) {
    for (int64_t r = 0; r < rows; ++r) {
      std::memcpy(out.data.data() + r * cout, bias->data.data(), static_cast<size_t>(cout) * sizeof(T));
    }
  }
  detail::mm_acc(x.data.data(), weight.data.data(), out.data.data(), static_cast<int>(rows), cin, cout);
  if (ctx.macs) ctx.macs->add(rows * cin * cout);
  if (ctx.check_finite && !out.all_finite()) throw std::runtime_error("linear: non-finite value in output");

  const int bias_node = bias ? bias->node : -1;
  if (want_tape(ctx, {x.node, weight.node, bias_node})) {
    const int xn = x.node, wn = weight.node, bn = bias_node;
    auto xdata = x.data;
    auto wdata = weight.data;
    out.node = ctx.tape->record(
        {xn, wn, bn}, out.numel(),
        [xn, wn, bn, xdata, wdata, rows, cin, cout](Tape<T>& t, const std::vector<T>& gout) {
          if (xn >= 0) {
            std::vector<T> dx(xdata.size(), T(0));
            detail::mm_nt_acc(gout.data(), wdata.data(), dx.data(), static_cast<int>(rows), cout, cin);
            t.accumulate(xn, dx.data(), static_cast<int64_t>(dx.size()));
          }
          if (wn >= 0) {
            std::vector<T> dw(wdata.size(), T(0));
            detail::mm_tn_acc(xdata.data(), gout.data(), dw.data(), static_cast<int>(rows), cin, cout);
            t.accumulate(wn, dw.data(), static_cast<int64_t>(dw.size()));
          }
          if (bn >= 0) {
            std::vector<T> db(static_cast<size_t>(cout), T(0));
            for (int64_t r = 0; r < rows; ++r) {
              const T* g = gout.data() + r * cout;
              for (int j = 0; j < cout; ++j) db[static_cast<size_t>(j)] += g[j];
            }
            t.accumulate(bn, db.data(), cout);
          }
        });
  }
  return out;
}

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, int m, const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() == 4, "adaptive_avg_pool2d input must be [N,C,H,W], got {}", shape_str(x.shape));
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  GAPNET_REQUIRE(m >= 1 && m <= h && m <= w, "pool size {} out of range for {}x{} input", m, h, w);

  std::vector<int> r0(static_cast<size_t>(m)), r1(static_cast<size_t>(m));
  std::vector<int> c0(static_cast<size_t>(m)), c1(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    r0[static_cast<size_t>(i)] = (i * h) / m;
    r1[static_cast<size_t>(i)] = ceil_div((i + 1) * h, m);
    c0[static_cast<size_t>(i)] = (i * w) / m;
    c1[static_cast<size_t>(i)] = ceil_div((i + 1) * w, m);
  }

  Tensor<T> out({n, c, m, m});
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* xp = x.data.data() + (static_cast<int64_t>(b) * c + ch) * plane;
      T* op = out.data.data() + (static_cast<int64_t>(b) * c + ch) * m * m;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
          T acc = T(0);
          for (int y = r0[static_cast<size_t>(i)]; y < r1[static_cast<size_t>(i)]; ++y) {
            const T* xr = xp + static_cast<int64_t>(y) * w;
            for (int z = c0[static_cast<size_t>(j)]; z < c1[static_cast<size_t>(j)]; ++z) acc += xr[z];
          }
          const int cnt = (r1[static_cast<size_t>(i)] - r0[static_cast<size_t>(i)]) *
                          (c1[static_cast<size_t>(j)] - c0[static_cast<size_t>(j)]);
          op[static_cast<int64_t>(i) * m + j] = acc / static_cast<T>(cnt);
        }
      }
    }
  }

  if (ctx.macs) ctx.macs->add(out.numel());
  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    const int64_t xnumel = x.numel();
    out.node = ctx.tape->record(
        {xn}, out.numel(), [xn, xnumel, r0, r1, c0, c1, n, c, h, w, m](Tape<T>& t, const std::vector<T>& gout) {
          std::vector<T> dx(static_cast<size_t>(xnumel), T(0));
          const int64_t plane = static_cast<int64_t>(h) * w;
          for (int b = 0; b < n; ++b) {
            for (int ch = 0; ch < c; ++ch) {
              T* dxp = dx.data() + (static_cast<int64_t>(b) * c + ch) * plane;
              const T* gp = gout.data() + (static_cast<int64_t>(b) * c + ch) * m * m;
              for (int i = 0; i < m; ++i) {
                for (int j = 0; j < m; ++j) {
                  const int cnt = (r1[static_cast<size_t>(i)] - r0[static_cast<size_t>(i)]) *
                                  (c1[static_cast<size_t>(j)] - c0[static_cast<size_t>(j)]);
                  const T gv = gp[static_cast<int64_t>(i) * m + j] / static_cast<T>(cnt);
                  for (int y = r0[static_cast<size_t>(i)]; y < r1[static_cast<size_t>(i)]; ++y) {
                    T* dxr = dxp + static_cast<int64_t>(y) * w;
                    for (int z = c0[static_cast<size_t>(j)]; z < c1[static_cast<size_t>(j)]; ++z) dxr[z] += gv;
                  }
                }
              }
            }
          }
          t.accumulate(xn, dx.data(), xnumel);
        });
  }
  return out;
}

namespace {

struct LerpAxis {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

LerpAxis make_lerp_axis(int in, int out) {
  LerpAxis ax;
  ax.lo.resize(static_cast<size_t>(out));
  ax.hi.resize(static_cast<size_t>(out));
  ax.frac.resize(static_cast<size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (int d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    if (src > static_cast<double>(in - 1)) src = static_cast<double>(in - 1);
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    ax.lo[static_cast<size_t>(d)] = lo;
    ax.hi[static_cast<size_t>(d)] = std::min(lo + 1, in - 1);
    ax.frac[static_cast<size_t>(d)] = src - static_cast<double>(lo);
  }
  return ax;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int out_h, int out_w, const Context<T>& ctx) {
  GAPNET_REQUIRE(x.rank() == 4, "bilinear_upsample input must be [N,C,H,W], got {}", shape_str(x.shape));
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  GAPNET_REQUIRE(out_h >= 1 && out_w >= 1, "zero output extent");
  GAPNET_REQUIRE(out_h >= h && out_w >= w, "bilinear_upsample does not downsample ({}x{} -> {}x{})", h,
                 w, out_h, out_w);

  const LerpAxis ay = make_lerp_axis(h, out_h);
  const LerpAxis ax = make_lerp_axis(w, out_w);

  Tensor<T> out({n, c, out_h, out_w});
  const int64_t in_plane = static_cast<int64_t>(h) * w;
  const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;
  for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
    const T* xp = x.data.data() + p * in_plane;
    T* op = out.data.data() + p * out_plane;
    for (int oy = 0; oy < out_h; ++oy) {
      const T* row_lo = xp + static_cast<int64_t>(ay.lo[static_cast<size_t>(oy)]) * w;
      const T* row_hi = xp + static_cast<int64_t>(ay.hi[static_cast<size_t>(oy)]) * w;
      const T fy = static_cast<T>(ay.frac[static_cast<size_t>(oy)]);
      T* orow = op + static_cast<int64_t>(oy) * out_w;
      for (int ox = 0; ox < out_w; ++ox) {
        const int xl = ax.lo[static_cast<size_t>(ox)];
        const int xh = ax.hi[static_cast<size_t>(ox)];
        const T fx = static_cast<T>(ax.frac[static_cast<size_t>(ox)]);
        const T top = row_lo[xl] + fx * (row_lo[xh] - row_lo[xl]);
        const T bot = row_hi[xl] + fx * (row_hi[xh] - row_hi[xl]);
        orow[ox] = top + fy * (bot - top);
      }
    }
  }

  if (ctx.macs) ctx.macs->add(out.numel());
  if (want_tape(ctx, {x.node})) {
    const int xn = x.node;
    const int64_t xnumel = x.numel();
    out.node = ctx.tape->record(
        {xn}, out.numel(),
        [xn, xnumel, ay, ax, n, c, h, w, out_h, out_w](Tape<T>& t, const std::vector<T>& gout) {
          std::vector<T> dx(static_cast<size_t>(xnumel), T(0));
          const int64_t in_plane = static_cast<int64_t>(h) * w;
          const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;
          for (int64_t p = 0; p < static_cast<int64_t>(n) * c; ++p) {
            T* dxp = dx.data() + p * in_plane;
            const T* gp = gout.data() + p * out_plane;
            for (int oy = 0; oy < out_h; ++oy) {
              const int yl = ay.lo[static_cast<size_t>(oy)];
              const int yh = ay.hi[static_cast<size_t>(oy)];
              const T fy = static_cast<T>(ay.frac[static_cast<size_t>(oy)]);
              const T* grow = gp + static_cast<int64_t>(oy) * out_w;
              for (int ox = 0; ox < out_w; ++ox) {
                const int xl = ax.lo[static_cast<size_t>(ox)];
                const int xh = ax.hi[static_cast<size_t>(ox)];
                const T fx = static_cast<T>(ax.frac[static_cast<size_t>(ox)]);
                const T g = grow[ox];
                dxp[static_cast<int64_t>(yl) * w + xl] += (T(1) - fy) * (T(1) - fx) * g;
                dxp[static_cast<int64_t>(yl) * w + xh] += (T(1) - fy) * fx * g;
                dxp[static_cast<int64_t>(yh) * w + xl] += fy * (T(1) - fx) * g;
                dxp[static_cast<int64_t>(yh) * w + xh] += fy * fx * g;
              }
            }
          }
          t.accumulate(xn, dx.data(), xnumel);
        });
  }
  return out;
}

// ---- Layer wrappers ----

template <typename T>
Conv2d<T>::Conv2d(int in, int out, const Conv2dOpts& opts, Rng& rng)
    : in_channels(in),
      out_channels(out),
      kh(opts.kernel.first),
      kw(opts.kernel.second),
      has_bias(opts.bias) {
  geom.stride_h = opts.stride.first;
  geom.stride_w = opts.stride.second;
  geom.pad_h = opts.padding.first;
  geom.pad_w = opts.padding.second;
  geom.dil_h = opts.dilation.first;
  geom.dil_w = opts.dilation.second;
  geom.groups = opts.groups;
  GAPNET_REQUIRE(in % geom.groups == 0 && out % geom.groups == 0,
                 "groups {} must divide channel counts {}->{}", geom.groups, in, out);
  weight = Tensor<T>({out, in / geom.groups, kh, kw});
  const double stddev = std::sqrt(2.0 / (static_cast<double>(in / geom.groups) * kh * kw));
  for (auto& v : weight.data) v = static_cast<T>(rng.normal(0.0, stddev));
  if (has_bias) bias = Tensor<T>({out});
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, const Context<T>& ctx) const {
  return conv2d(x, weight, has_bias ? &bias : nullptr, geom, ctx);
}

template <typename T>
void Conv2d<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight});
  if (has_bias) out.push_back({prefix + ".bias", &bias});
}

template <typename T>
int64_t Conv2d<T>::param_count() const {
  return weight.numel() + (has_bias ? bias.numel() : 0);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels) {
  gamma = Tensor<T>::full({channels}, T(1));
  beta = Tensor<T>({channels});
  running_mean = Tensor<T>({channels});
  running_var = Tensor<T>::full({channels}, T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, const Context<T>& ctx) {
  return batchnorm2d(x, gamma, beta, running_mean, running_var, eps, momentum, ctx);
}

template <typename T>
void BatchNorm2d<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".gamma", &gamma});
  out.push_back({prefix + ".beta", &beta});
}

template <typename T>
void BatchNorm2d<T>::collect_state(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".running_mean", &running_mean});
  out.push_back({prefix + ".running_var", &running_var});
}

template <typename T>
int64_t BatchNorm2d<T>::param_count() const {
  return gamma.numel() + beta.numel();
}

template <typename T>
LayerNorm<T>::LayerNorm(int channels) {
  gamma = Tensor<T>::full({channels}, T(1));
  beta = Tensor<T>({channels});
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x, const Context<T>& ctx) const {
  return layernorm_lastdim(x, gamma, beta, eps, ctx);
}

template <typename T>
void LayerNorm<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".gamma", &gamma});
  out.push_back({prefix + ".beta", &beta});
}

template <typename T>
int64_t LayerNorm<T>::param_count() const {
  return gamma.numel() + beta.numel();
}

template <typename T>
Linear<T>::Linear(int in, int out, Rng& rng, bool with_bias) : has_bias(with_bias) {
  weight = Tensor<T>({in, out});
  const double stddev = std::sqrt(2.0 / static_cast<double>(in));
  for (auto& v : weight.data) v = static_cast<T>(rng.normal(0.0, stddev));
  if (has_bias) bias = Tensor<T>({out});
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, const Context<T>& ctx) const {
  return linear(x, weight, has_bias ? &bias : nullptr, ctx);
}

template <typename T>
void Linear<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  out.push_back({prefix + ".weight", &weight});
  if (has_bias) out.push_back({prefix + ".bias", &bias});
}

template <typename T>
int64_t Linear<T>::param_count() const {
  return weight.numel() + (has_bias ? bias.numel() : 0);
}

#define GAPNET_NN_INSTANTIATE(T)                                                                   \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,              \
                               const Conv2dGeom&, const Context<T>&);                             \
  template Tensor<T> batchnorm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,         \
                                    Tensor<T>&, Tensor<T>&, T, T, const Context<T>&);             \
  template Tensor<T> layernorm_lastdim<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T, \
                                          const Context<T>&);                                     \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,              \
                               const Context<T>&);                                                \
  template Tensor<T> adaptive_avg_pool2d<T>(const Tensor<T>&, int, const Context<T>&);            \
  template Tensor<T> bilinear_upsample<T>(const Tensor<T>&, int, int, const Context<T>&);         \
  template struct Conv2d<T>;                                                                      \
  template struct BatchNorm2d<T>;                                                                 \
  template struct LayerNorm<T>;                                                                   \
  template struct Linear<T>;

GAPNET_NN_INSTANTIATE(float)
GAPNET_NN_INSTANTIATE(double)
#undef GAPNET_NN_INSTANTIATE

}  // namespace gapnet
