#pragma once

#include <map>
#include <optional>
#include <string>

#include "gapnet/backbone.h"
#include "gapnet/dataio.h"

namespace gapnet {

struct ModelConfig {
  BackboneConfig backbone = BackboneConfig::mobilenet_v2(1.0);
  std::array<int, 4> reduce_channels{16, 24, 32, 32};
  int gpc_channels = 48;  // working width of the pyramid fusion sites
  int gpc_m = 7;
  std::array<int, 4> gpc_atrous_rates{8, 4, 2, 1};
  bool gpc_attention = true;
  int attention_heads = 1;
  int csa_dim = 64;
  int csa_ffn_expansion = 4;
  int gfe_irb_expansion = 6;
  char supervision_setting = 'f';
  bool video = false;

  static ModelConfig paper_preset();
  static ModelConfig toy_preset();
  // The toy preset and width_multiplier scale decoder widths along with the
  // backbone (multiples of 8); gpc_m = 0 selects the attention-free pyramid.
  static ModelConfig from_run_config(const RunConfig& rc);
};

// Prediction heads present per supervision setting. d1/d2/d3 always exist
// (the model outputs all three probability maps); auxiliary heads appear
// only when their site is supervised.
struct HeadSet {
  bool dl = false, dh = false, gf = false;
};
HeadSet aux_heads_for_setting(char setting);

template <typename T>
struct ModelOutputs {
  Tensor<T> p1, p2, p3;  // probability maps at input resolution
  Tensor<T> d1, d2, d3;  // decoder features at strides 4, 16, 4
  std::map<std::string, Tensor<T>> aux;  // "dl" / "dh" / "gf" probability maps
};

struct ParamBreakdown {
  int64_t backbone = 0;
  int64_t reduce = 0;
  int64_t gfe = 0;
  int64_t gpc_sites = 0;
  int64_t csa_sites = 0;
  int64_t heads = 0;
  int64_t fusion = 0;
  int64_t total = 0;
  std::map<std::string, int64_t> per_site;  // gpc_dl, gpc_d1, gpc_d3, csa_dh, csa_d2
};

struct CsaSiteTrace {
  int query_len = 0;
  int key_len = 0;
  int dim = 0;
  int64_t attention_matrix_macs() const {
    return 2ll * query_len * key_len * dim;
  }
};

struct MacBreakdown {
  int64_t backbone = 0;
  int64_t reduce = 0;
  int64_t gfe = 0;
  int64_t gpc_sites = 0;
  int64_t csa_sites = 0;
  int64_t heads = 0;
  int64_t fusion = 0;
  int64_t total = 0;
  std::map<std::string, int64_t> by_scope;
  std::map<std::string, CsaSiteTrace> csa_traces;
  int64_t flops() const { return 2 * total; }
};

// Gated low-level fusion of the video two-stream path:
// out = rgb * sigmoid(flow) + rgb + flow.
template <typename T>
Tensor<T> fuse_low_video(const Tensor<T>& rgb, const Tensor<T>& flow, const Context<T>& ctx = {});

template <typename T>
class GapNet {
 public:
  GapNet(const ModelConfig& config, uint64_t seed);

  ModelOutputs<T> forward_image(const Tensor<T>& image, const Context<T>& ctx);

  // Two-stream forward: RGB plus a flow image (2 channels are expanded with
  // a magnitude channel). bypass_flow short-circuits every fusion point so
  // the output equals forward_image on the RGB frame.
  ModelOutputs<T> forward_video(const Tensor<T>& rgb, const Tensor<T>& flow_image,
                                const Context<T>& ctx, bool bypass_flow = false);

  const ModelConfig& config() const { return cfg_; }
  ParamList<T> parameters();
  ParamList<T> state();

  ParamBreakdown count_params();
  // Instrumented eval-mode forward on a zero image of the given extent.
  MacBreakdown count_macs(int height, int width);

  void load_checkpoint(const Checkpoint& ckpt);
  void save_checkpoint(const std::string& path);

 private:
  struct ConvBnRelu {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    ConvBnRelu() = default;
    ConvBnRelu(int in, int out, Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, const Context<T>& ctx);
  };
  struct GpcSite {
    ConvBnRelu adapt;
    GranularPyramidConv<T> gpc;
  };
  struct CsaSite {
    Linear<T> proj_low, proj_high;
    CrossScaleAttention<T> csa;
  };
  struct FusionSite {
    Linear<T> proj_rgb, proj_flow, back;
    CrossScaleAttention<T> csa;
  };

  Tensor<T> run_gpc_site(GpcSite& site, const Tensor<T>& x, const Context<T>& ctx);
  Tensor<T> run_csa_site(CsaSite& site, const Tensor<T>& low, const Tensor<T>& high,
                         const Context<T>& ctx, CsaSiteTrace* trace);
  Tensor<T> run_fusion_site(FusionSite& site, const Tensor<T>& rgb, const Tensor<T>& flow,
                            const Context<T>& ctx);
  Tensor<T> run_head(const Conv2d<T>& head, const Tensor<T>& feature, int out_h, int out_w,
                     const Context<T>& ctx);
  ModelOutputs<T> decode(const StageFeatures<T>& stages, int in_h, int in_w, const Context<T>& ctx,
                         std::map<std::string, CsaSiteTrace>* traces);

  ModelConfig cfg_;
  Backbone<T> backbone_;
  std::optional<Backbone<T>> flow_backbone_;
  ConvBnRelu reduce_[4];
  GlobalFeatureExtractor<T> gfe_;
  GpcSite site_dl_, site_d1_, site_d3_;
  CsaSite site_dh_, site_d2_;
  Conv2d<T> head_d1_, head_d2_, head_d3_;
  std::optional<Conv2d<T>> head_dl_, head_dh_, head_gf_;
  std::optional<FusionSite> fusion_e3_, fusion_e4_;
};

extern template class GapNet<float>;
extern template class GapNet<double>;
extern template Tensor<float> fuse_low_video<float>(const Tensor<float>&, const Tensor<float>&,
                                                    const Context<float>&);
extern template Tensor<double> fuse_low_video<double>(const Tensor<double>&, const Tensor<double>&,
                                                      const Context<double>&);

}  // namespace gapnet
