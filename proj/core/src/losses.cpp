#include "gapnet/losses.h"

#include <cmath>

#include "gapnet/check.h"

namespace gapnet {

namespace {

constexpr double kClamp = 1e-7;
constexpr double kDiceSmooth = 1.0;

template <typename T>
bool want_tape(const Context<T>& ctx, int node) {
  return ctx.tape && node >= 0;
}

}  // namespace

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target, const Context<T>& ctx) {
  GAPNET_REQUIRE(pred.shape == target.shape, "bce shape mismatch: {} vs {}", shape_str(pred.shape),
                 shape_str(target.shape));
  const int64_t n = pred.numel();
  const T lo = static_cast<T>(kClamp), hi = static_cast<T>(1.0 - kClamp);

  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const T p = std::clamp(pred.data[static_cast<size_t>(i)], lo, hi);
    const double g = static_cast<double>(target.data[static_cast<size_t>(i)]);
    acc -= g * std::log(static_cast<double>(p)) + (1.0 - g) * std::log(1.0 - static_cast<double>(p));
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
  if (ctx.macs) ctx.macs->add(n);

  if (want_tape(ctx, pred.node)) {
    const int pn = pred.node;
    auto pdata = pred.data;
    auto gdata = target.data;
    out.node = ctx.tape->record({pn}, 1, [pn, pdata, gdata, n, lo, hi](Tape<T>& t, const std::vector<T>& gout) {
      std::vector<T> dp(pdata.size());
      const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
      for (int64_t i = 0; i < n; ++i) {
        const T p = pdata[static_cast<size_t>(i)];
        if (p <= lo || p >= hi) {
          dp[static_cast<size_t>(i)] = T(0);  // clamped region has zero slope
          continue;
        }
        const T g = gdata[static_cast<size_t>(i)];
        dp[static_cast<size_t>(i)] = gout[0] * inv_n * (-g / p + (T(1) - g) / (T(1) - p));
      }
      t.accumulate(pn, dp.data(), static_cast<int64_t>(dp.size()));
    });
  }
  return out;
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, const Context<T>& ctx) {
  GAPNET_REQUIRE(pred.shape == target.shape, "dice shape mismatch: {} vs {}", shape_str(pred.shape),
                 shape_str(target.shape));
  const int64_t n = pred.numel();
  double inter = 0.0, sum_g = 0.0, sum_p = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double p = static_cast<double>(pred.data[static_cast<size_t>(i)]);
    const double g = static_cast<double>(target.data[static_cast<size_t>(i)]);
    inter += g * p;
    sum_g += g;
    sum_p += p;
  }
  const double denom = sum_g + sum_p + kDiceSmooth;
  const double value = 1.0 - (2.0 * inter + kDiceSmooth) / denom;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(value));
  if (ctx.macs) ctx.macs->add(n);

  if (want_tape(ctx, pred.node)) {
    const int pn = pred.node;
    auto gdata = target.data;
    const double numer = 2.0 * inter + kDiceSmooth;
    out.node = ctx.tape->record({pn}, 1, [pn, gdata, denom, numer](Tape<T>& t, const std::vector<T>& gout) {
      std::vector<T> dp(gdata.size());
      const double inv_d = 1.0 / denom;
      const double ratio = numer * inv_d * inv_d;
      for (size_t i = 0; i < gdata.size(); ++i) {
        const double g = static_cast<double>(gdata[i]);
        dp[i] = gout[0] * static_cast<T>(-(2.0 * g * inv_d - ratio));
      }
      t.accumulate(pn, dp.data(), static_cast<int64_t>(dp.size()));
    });
  }
  return out;
}

std::vector<std::pair<std::string, TargetKind>> supervision_pairs(char setting) {
  using K = TargetKind;
  switch (setting) {
    case 'a':
      return {{"d3", K::kFull}, {"dl", K::kFull}, {"dh", K::kFull},
              {"gf", K::kFull}, {"d2", K::kFull}, {"d1", K::kFull}};
    case 'b':
      return {{"d3", K::kFull}, {"dl", K::kBoundary}, {"dh", K::kCenter},
              {"d2", K::kCenterOthers}, {"d1", K::kBoundaryOthers}};
    case 'c':
      return {{"d3", K::kFull}, {"dl", K::kBoundary}, {"dh", K::kOthers},
              {"d2", K::kCenterOthers}, {"d1", K::kBoundaryOthers}};
    case 'd':
      return {{"d3", K::kFull}, {"dl", K::kBoundary}, {"dh", K::kCenterOthers},
              {"d2", K::kCenterOthers}, {"d1", K::kBoundaryOthers}};
    case 'e':
      return {{"d3", K::kFull}, {"gf", K::kCenter}, {"d1", K::kBoundaryOthers}};
    case 'f':
      return {{"d3", K::kFull}, {"d2", K::kCenter}, {"d1", K::kBoundaryOthers}};
    default:
      GAPNET_REQUIRE(false, "unknown supervision setting '{}'", setting);
  }
  return {};
}

template <typename T>
OverallLoss<T> overall_loss(const ModelOutputs<T>& outputs, const TargetMaps<T>& targets,
                            char setting, const Context<T>& ctx) {
  const auto pairs = supervision_pairs(setting);
  OverallLoss<T> result;
  bool first = true;
  for (const auto& [name, kind] : pairs) {
    const Tensor<T>* pred = nullptr;
    if (name == "d1") {
      pred = &outputs.p1;
    } else if (name == "d2") {
      pred = &outputs.p2;
    } else if (name == "d3") {
      pred = &outputs.p3;
    } else {
      const auto it = outputs.aux.find(name);
      GAPNET_REQUIRE(it != outputs.aux.end(),
                     "supervision setting '{}' needs a '{}' head the model does not carry", setting,
                     name);
      pred = &it->second;
    }
    const auto target_it = targets.find(kind);
    GAPNET_REQUIRE(target_it != targets.end(), "no target map provided for output '{}'", name);

    auto bce = bce_loss(*pred, target_it->second, ctx);
    auto dice = dice_loss(*pred, target_it->second, ctx);
    auto combined = add(bce, dice, ctx);

    LossValue value;
    value.bce = static_cast<double>(bce.item());
    value.dice = static_cast<double>(dice.item());
    value.combined = static_cast<double>(combined.item());
    result.report.per_output[name] = value;

    result.value = first ? combined : add(result.value, combined, ctx);
    first = false;
  }
  result.report.overall = static_cast<double>(result.value.item());
  return result;
}

template <typename T>
Tensor<T> targets_to_tensor(const std::vector<const TriRegionLabel*>& labels, TargetKind kind) {
  GAPNET_REQUIRE(!labels.empty(), "empty label batch");
  const int h = labels[0]->height, w = labels[0]->width;
  Tensor<T> out({static_cast<int>(labels.size()), 1, h, w});
  for (size_t b = 0; b < labels.size(); ++b) {
    GAPNET_REQUIRE(labels[b]->height == h && labels[b]->width == w, "label batch extent mismatch");
    const BinaryMask mask = target_mask(*labels[b], kind);
    T* dst = out.data.data() + b * static_cast<size_t>(h) * w;
    for (int64_t i = 0; i < mask.numel(); ++i) {
      dst[i] = mask.bits[static_cast<size_t>(i)] ? T(1) : T(0);
    }
  }
  return out;
}

#define GAPNET_LOSSES_INSTANTIATE(T)                                                            \
  template Tensor<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&, const Context<T>&);        \
  template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&, const Context<T>&);       \
  template OverallLoss<T> overall_loss<T>(const ModelOutputs<T>&, const TargetMaps<T>&, char,   \
                                          const Context<T>&);                                   \
  template Tensor<T> targets_to_tensor<T>(const std::vector<const TriRegionLabel*>&, TargetKind);

GAPNET_LOSSES_INSTANTIATE(float)
GAPNET_LOSSES_INSTANTIATE(double)
#undef GAPNET_LOSSES_INSTANTIATE

}  // namespace gapnet
