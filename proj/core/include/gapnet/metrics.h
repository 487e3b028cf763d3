#pragma once

#include <array>
#include <string>
#include <vector>

#include "gapnet/labels.h"

namespace gapnet::metrics {

// Plain double-precision saliency map for evaluation.
struct RealMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  RealMap() = default;
  RealMap(int w, int h) : width(w), height(h), values(static_cast<size_t>(w) * h, 0.0) {}
  int64_t numel() const { return static_cast<int64_t>(width) * height; }
  double& at(int y, int x) { return values[static_cast<size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

double mae(const RealMap& pred, const BinaryMask& gt);

struct ThresholdPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

struct FCurve {
  std::array<ThresholdPoint, 256> points;  // thresholds k/255, binarize pred >= t
  double f_max = 0.0;
};

// F-beta over the 256-level threshold sweep; beta2 = 0.3 weights precision.
// Requires a non-empty ground-truth foreground.
FCurve f_curve(const RealMap& pred, const BinaryMask& gt, double beta2 = 0.3);

// Weighted F-measure: errors propagated from the nearest foreground pixel,
// 7x7 Gaussian (sigma 5) smoothing, exponential background weighting.
double f_weighted(const RealMap& pred, const BinaryMask& gt, double beta2 = 1.0);

// Structure measure: 0.5 * object term + 0.5 * centroid-quadrant region
// term; all-background gt scores 1 - mean(pred), all-foreground mean(pred).
double s_measure(const RealMap& pred, const BinaryMask& gt);

struct EMeasure {
  double e_max = 0.0;
  double e_mean = 0.0;
};

// Enhanced-alignment measure swept over 256 binarization thresholds placed
// at bin midpoints (k+0.5)/256.
EMeasure e_measure(const RealMap& pred, const BinaryMask& gt);

struct PerImageMetrics {
  std::string stem;
  double mae = 0.0;
  double f_max = 0.0;
  double f_weighted = 0.0;
  double s_measure = 0.0;
  double e_max = 0.0;
  double e_mean = 0.0;
  bool empty_gt = false;  // excluded from F/S/E aggregation
};

struct MetricReport {
  double mae = 0.0;
  double f_max = 0.0;
  double f_weighted = 0.0;
  double s_measure = 0.0;
  double e_max = 0.0;
  double e_mean = 0.0;
  int count = 0;  // image pairs evaluated
  std::vector<PerImageMetrics> per_image;
  std::vector<std::string> empty_gt_stems;
  std::vector<std::string> skipped;    // unreadable files
  std::vector<std::string> unmatched;  // stems missing on one side

  bool clean() const { return skipped.empty() && unmatched.empty(); }
  std::string table() const;      // line-oriented text table
  std::string key_values() const; // machine-readable key=value lines
};

struct EvalOptions {
  double f_beta2 = 0.3;
  double wf_beta2 = 1.0;
};

// Stem-matched pairs from two directories; predictions are bilinear-resized
// to the mask extent before scoring. Deterministic stem order. Images with
// empty ground truth stay in MAE but are excluded from F/S/E.
MetricReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir,
                              const EvalOptions& options = {});

// Per-image sextuple used by both dataset evaluation and the CLI.
PerImageMetrics evaluate_pair(const RealMap& pred, const BinaryMask& gt, const EvalOptions& options);

}  // namespace gapnet::metrics
