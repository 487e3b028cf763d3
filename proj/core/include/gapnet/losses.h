#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gapnet/labels.h"
#include "gapnet/model.h"

namespace gapnet {

// Mean binary cross-entropy over pixels. Probabilities are clamped to
// [1e-7, 1 - 1e-7] before the logs.
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& pred, const Tensor<T>& target, const Context<T>& ctx = {});

// 1 - (2*sum(g*p) + s) / (sum(g) + sum(p) + s) with smoothing s = 1, which
// defines the empty-vs-empty case as zero loss.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target, const Context<T>& ctx = {});

struct LossValue {
  double bce = 0.0;
  double dice = 0.0;
  double combined = 0.0;
};

struct LossReport {
  std::map<std::string, LossValue> per_output;
  double overall = 0.0;
};

// Output-to-target wiring per supervision setting:
//   (a) every head learns the full map          (d) dl<-B, dh<-C+O, d2<-C+O
//   (b) dl<-B, dh<-C, d2<-C+O                   (e) gf<-C only
//   (c) dl<-B, dh<-O, d2<-C+O                   (f) d2<-C          (default)
// d3 always learns the full map; d1 learns boundary+others except in (a).
std::vector<std::pair<std::string, TargetKind>> supervision_pairs(char setting);

template <typename T>
using TargetMaps = std::map<TargetKind, Tensor<T>>;

template <typename T>
struct OverallLoss {
  Tensor<T> value;  // scalar, tape-attached when the context records
  LossReport report;
};

// Sum of bce + dice over every supervised output of the active setting.
// `targets` must provide a map for every target kind the setting uses;
// outputs must carry the matching auxiliary heads.
template <typename T>
OverallLoss<T> overall_loss(const ModelOutputs<T>& outputs, const TargetMaps<T>& targets,
                            char setting, const Context<T>& ctx = {});

// Target masks rendered as [N,1,H,W] tensors for a batch of labels.
template <typename T>
Tensor<T> targets_to_tensor(const std::vector<const TriRegionLabel*>& labels, TargetKind kind);

#define GAPNET_LOSSES_EXTERN(T)                                                                \
  extern template Tensor<T> bce_loss<T>(const Tensor<T>&, const Tensor<T>&, const Context<T>&); \
  extern template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&, const Context<T>&); \
  extern template OverallLoss<T> overall_loss<T>(const ModelOutputs<T>&, const TargetMaps<T>&,  \
                                                 char, const Context<T>&);                      \
  extern template Tensor<T> targets_to_tensor<T>(const std::vector<const TriRegionLabel*>&,     \
                                                 TargetKind);

GAPNET_LOSSES_EXTERN(float)
GAPNET_LOSSES_EXTERN(double)
#undef GAPNET_LOSSES_EXTERN

}  // namespace gapnet
