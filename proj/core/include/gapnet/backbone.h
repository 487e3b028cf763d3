#pragma once

#include <array>
#include <vector>

#include "gapnet/blocks.h"

namespace gapnet {

struct IrbSpec {
  int expansion = 6;
  int out_channels = 0;
  int stride = 1;
};

struct BackboneConfig {
  int stem_channels = 32;
  std::vector<IrbSpec> blocks;  // flattened inverted-residual layout
  double width_multiplier = 1.0;

  // Standard MobileNet-V2 feature layout (final pooling and classifier
  // removed); width 0.25 gives the toy preset topology.
  static BackboneConfig mobilenet_v2(double width_multiplier = 1.0);
};

// Channel rounding used when width scaling: nearest multiple of `divisor`,
// at least `divisor`, never below 90% of the requested width.
int make_divisible(double value, int divisor = 8);

template <typename T>
struct StageFeatures {
  Tensor<T> e1, e2, e3, e4;  // strides 4, 8, 16, 32
};

// Encoder producing four feature stages. Stage taps are the last block
// output at each cumulative stride in {4, 8, 16, 32}.
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, Rng& rng);

  StageFeatures<T> encode(const Tensor<T>& image, const Context<T>& ctx);

  const std::array<int, 4>& stage_channels() const { return stage_channels_; }
  void collect_params(const std::string& prefix, ParamList<T>& out);
  void collect_state(const std::string& prefix, ParamList<T>& out);

  // Test access to individual blocks (residual identity checks).
  std::vector<InvertedResidual<T>>& blocks() { return blocks_; }

 private:
  Conv2d<T> stem_;
  BatchNorm2d<T> stem_bn_;
  std::vector<InvertedResidual<T>> blocks_;
  std::array<int, 4> tap_index_{};  // block index feeding E1..E4
  std::array<int, 4> stage_channels_{};
};

extern template class Backbone<float>;
extern template class Backbone<double>;

}  // namespace gapnet
