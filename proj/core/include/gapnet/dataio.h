#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gapnet/labels.h"
#include "gapnet/tensor.h"

namespace gapnet {

// ---- Portable anymap images (binary P5/P6, 8-bit) ----

struct PnmImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<uint8_t> pixels;  // row-major, interleaved
};

PnmImage read_pnm(const std::string& path);
void write_pnm(const std::string& path, const PnmImage& image);
void write_gray_pnm(const std::string& path, int width, int height, const std::vector<uint8_t>& pixels);

// General bilinear resample (both directions) with half-pixel centers and
// edge clamping, per channel-plane.
std::vector<double> resize_bilinear_plane(const std::vector<double>& src, int width, int height,
                                          int out_width, int out_height);

struct ImageNormalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> stddev{0.229, 0.224, 0.225};
};

// Channels-first [1,3,H,W]: scale to [0,1], replicate grayscale to three
// channels, bilinear-resize to the target, then per-channel normalize.
Tensor<float> load_image(const std::string& path, int target_height, int target_width,
                         const ImageNormalization& norm = {});

// 8-bit mask at native extent; pixel >= threshold reads as foreground.
BinaryMask load_mask(const std::string& path, int threshold = 128);

// Saliency map in [0,1] at native extent (no normalization), single plane.
std::vector<double> load_gray01(const std::string& path, int& width, int& height);

// ---- Optical flow (.flo) ----

struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> uv;  // row-major, interleaved (u, v)
};

FlowField read_flo(const std::string& path);
void write_flo(const std::string& path, const FlowField& flow);

// (u, v, magnitude) as a 3-channel [1,3,H,W] tensor, each channel min-max
// normalized per frame (constant channels map to zero), then per-channel
// normalized like a regular image.
Tensor<float> flow_to_image(const FlowField& flow, const ImageNormalization& norm = {});

// ---- Checkpoints ----
// Layout: "GAPN", version u32=1, count u32, then per tensor:
// name u16-length + UTF-8, rank u8, extents u32 each, dtype u8 (0 = 32-bit
// IEEE-754 little-endian), raw values.

struct Checkpoint {
  uint32_t version = 1;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;  // insertion order

  const Tensor<float>* find(const std::string& name) const;
};

void checkpoint_write(const std::string& path,
                      const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors);
Checkpoint checkpoint_read(const std::string& path);

// ---- Dataset scanning ----

enum class DatasetMode { kImage, kVideo };

struct SampleRecord {
  std::string stem;
  std::string image_path;
  std::string mask_path;
  std::string flow_path;  // video mode only
  std::string clip_id;    // video mode only
  int frame_index = -1;   // video mode only
};

struct DatasetScan {
  std::vector<SampleRecord> records;
  std::vector<std::string> warnings;  // orphans and other non-fatal findings
};

// Image mode expects root/images + root/masks; video mode expects
// root/clips/<id>/{frames,flow,masks}. Ordering is lexicographic by stem
// (clip then frame for video), independent of directory enumeration order.
DatasetScan scan_dataset(const std::string& root, DatasetMode mode);

// ---- Run configuration ----

struct RunConfig {
  std::string preset = "paper";  // paper | toy
  double width_multiplier = 1.0;
  int csa_dim = 64;
  int csa_heads = 1;
  int csa_ffn_expansion = 4;
  int gpc_m = 7;  // 0 selects the attention-disabled variant
  std::array<int, 4> gpc_atrous_rates{8, 4, 2, 1};
  std::array<int, 4> reduce_channels{16, 24, 32, 32};
  char supervision_setting = 'f';
  double lr = 1.7e-4;
  double lr_power = 0.9;
  int epochs = 30;
  int batch_size = 32;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  uint64_t seed = 0;
  std::vector<int> train_sizes{320, 352, 384};
  int infer_size = 384;
  std::string mode = "image";  // image | video
  double wf_beta2 = 1.0;
};

// Line-oriented `key = value` text with `#` comments. Unknown keys and
// unparsable values are hard errors naming the key.
RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

// Canonical key=value rendering; parse_config_text(config_to_text(c)) == c.
std::string config_to_text(const RunConfig& config);

}  // namespace gapnet
