#pragma once

#include <string>
#include <vector>

#include "gapnet/losses.h"
#include "gapnet/metrics.h"
#include "gapnet/model.h"

namespace gapnet {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // decoupled: an additive -lr*wd*param term
};

// Bias-corrected Adam over a fixed parameter list. The step counter
// increments by exactly one per step, before bias correction.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(ParamList<T> params, const AdamConfig& config);

  // Applies one update from the gradients accumulated on the tape.
  void step(Tape<T>& tape, double lr);
  int64_t steps() const { return t_; }
  const ParamList<T>& params() const { return params_; }

 private:
  ParamList<T> params_;
  std::vector<std::vector<T>> m_, v_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

// base * (1 - iter/max_iter)^power; monotone non-increasing, zero at the end.
double poly_lr(int64_t iter, int64_t max_iter, double base = 1.7e-4, double power = 0.9);

struct TrainOptions {
  bool flip_augment = true;  // seeded horizontal flip, p = 0.5
  int max_steps = -1;        // optional cap; -1 runs the configured epochs
  std::string init_checkpoint;  // warm start; with video mode this cuts lr by 10
  bool verbose = false;
  bool epoch_checkpoints = true;
};

struct RunManifest {
  uint64_t seed = 0;
  std::string config_snapshot;
  std::vector<double> step_losses;
  std::vector<double> epoch_seconds;

  std::string to_text() const;
};

struct TrainResult {
  RunManifest manifest;
  std::string final_checkpoint;
};

// Seeded full training loop: shuffled epochs, per-batch choice among the
// configured training sizes, on-the-fly supervision targets, polynomial
// learning-rate decay, per-epoch checkpoints. Identical inputs and seed
// reproduce the loss log bit-for-bit.
TrainResult train(const std::string& dataset_root, const RunConfig& config,
                  const std::string& out_dir, const TrainOptions& options = {});

struct InferOptions {
  int size = 384;           // network input extent (must divide by 32)
  bool emit_sides = false;  // also write the two side-output maps
  bool emit_regions = false;  // decompose the binarized final map
};

struct InferResult {
  std::vector<std::string> written;  // final maps, one per input image
};

// Runs the final saliency map over every image in input_dir and writes
// 8-bit grayscale maps at the original image extent (255 = salient).
InferResult infer(const std::string& checkpoint_path, const RunConfig& config,
                  const std::string& input_dir, const std::string& out_dir,
                  const InferOptions& options = {});

// Paletted region-map export: background 0, boundary 85, others 170,
// center 255.
void write_region_map(const std::string& path, const TriRegionLabel& label);

}  // namespace gapnet
