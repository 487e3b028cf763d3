#include "gapnet/backbone.h"

#include <cmath>

#include "gapnet/check.h"

namespace gapnet {

int make_divisible(double value, int divisor) {
  int v = std::max(divisor, (static_cast<int>(value + divisor / 2.0) / divisor) * divisor);
  if (v < 0.9 * value) v += divisor;
  return v;
}

BackboneConfig BackboneConfig::mobilenet_v2(double width_multiplier) {
  BackboneConfig cfg;
  cfg.width_multiplier = width_multiplier;
  cfg.stem_channels = 32;
  const struct {
    int t, c, n, s;
  } groups[] = {
      {1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2},
      {6, 96, 3, 1}, {6, 160, 3, 2}, {6, 320, 1, 1},
  };
  for (const auto& g : groups) {
    for (int i = 0; i < g.n; ++i) {
      cfg.blocks.push_back(IrbSpec{g.t, g.c, i == 0 ? g.s : 1});
    }
  }
  return cfg;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& rng) {
  GAPNET_REQUIRE(!config.blocks.empty(), "backbone needs at least one block");
  const int stem_channels = make_divisible(config.stem_channels * config.width_multiplier);

  Conv2dOpts stem_opts;
  stem_opts.kernel = {3, 3};
  stem_opts.stride = {2, 2};
  stem_opts.padding = {1, 1};
  stem_opts.bias = false;
  stem_ = Conv2d<T>(3, stem_channels, stem_opts, rng);
  stem_bn_ = BatchNorm2d<T>(stem_channels);

  int channels = stem_channels;
  int stride = 2;
  std::vector<int> stride_after;
  blocks_.reserve(config.blocks.size());
  for (const auto& spec : config.blocks) {
    const int out = make_divisible(spec.out_channels * config.width_multiplier);
    blocks_.emplace_back(channels, out, spec.stride, spec.expansion, rng);
    channels = out;
    stride *= spec.stride;
    stride_after.push_back(stride);
  }

  // Tap the last block at each stride plateau.
  const int wanted[4] = {4, 8, 16, 32};
  for (int s = 0; s < 4; ++s) {
    int found = -1;
    for (size_t i = 0; i < stride_after.size(); ++i) {
      if (stride_after[i] == wanted[s]) found = static_cast<int>(i);
    }
    GAPNET_REQUIRE(found >= 0, "stride ladder violated: no stage at stride {}", wanted[s]);
    tap_index_[static_cast<size_t>(s)] = found;
    stage_channels_[static_cast<size_t>(s)] = blocks_[static_cast<size_t>(found)].out_channels;
  }
}

template <typename T>
StageFeatures<T> Backbone<T>::encode(const Tensor<T>& image, const Context<T>& ctx) {
  GAPNET_REQUIRE(image.rank() == 4 && image.shape[1] == 3, "encoder expects [N,3,H,W], got {}",
                 shape_str(image.shape));
  GAPNET_REQUIRE(image.shape[2] % 32 == 0 && image.shape[3] % 32 == 0,
                 "input extents {}x{} must be divisible by 32", image.shape[2], image.shape[3]);

  Tensor<T> x = relu(stem_bn_.forward(stem_.forward(image, ctx), ctx), ctx);
  StageFeatures<T> stages;
  for (size_t i = 0; i < blocks_.size(); ++i) {
    x = blocks_[i].forward(x, ctx);
    const int idx = static_cast<int>(i);
    if (idx == tap_index_[0]) stages.e1 = x;
    if (idx == tap_index_[1]) stages.e2 = x;
    if (idx == tap_index_[2]) stages.e3 = x;
    if (idx == tap_index_[3]) stages.e4 = x;
  }
  return stages;
}

template <typename T>
void Backbone<T>::collect_params(const std::string& prefix, ParamList<T>& out) {
  stem_.collect_params(prefix + ".stem", out);
  stem_bn_.collect_params(prefix + ".stem_bn", out);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect_params(fmt::format("{}.block{:02d}", prefix, i), out);
  }
}

template <typename T>
void Backbone<T>::collect_state(const std::string& prefix, ParamList<T>& out) {
  stem_bn_.collect_state(prefix + ".stem_bn", out);
  for (size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect_state(fmt::format("{}.block{:02d}", prefix, i), out);
  }
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace gapnet
