#include "gapnet/metrics.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>

#include "gapnet/check.h"
#include "gapnet/dataio.h"

namespace fs = std::filesystem;

namespace gapnet::metrics {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

void require_same_extent(const RealMap& pred, const BinaryMask& gt, const char* op) {
  GAPNET_REQUIRE(pred.width == gt.width && pred.height == gt.height,
                 "{}: map {}x{} vs mask {}x{}", op, pred.width, pred.height, gt.width, gt.height);
  GAPNET_REQUIRE(pred.width > 0 && pred.height > 0, "{}: empty map", op);
}

// Min-max rescaling applied to thresholded metrics only when values leave
// [0,1]; in-range maps pass through untouched.
RealMap normalize_if_out_of_range(const RealMap& pred) {
  double lo = pred.values[0], hi = pred.values[0];
  for (double v : pred.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (lo >= 0.0 && hi <= 1.0) return pred;
  RealMap out(pred.width, pred.height);
  if (hi > lo) {
    for (size_t i = 0; i < pred.values.size(); ++i) out.values[i] = (pred.values[i] - lo) / (hi - lo);
  } else {
    for (size_t i = 0; i < pred.values.size(); ++i) out.values[i] = std::clamp(pred.values[i], 0.0, 1.0);
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Sample standard deviation (N-1), zero for single elements.
double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() <= 1) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Object-level similarity of one masked map region.
double object_score(const std::vector<double>& region_values) {
  if (region_values.empty()) return 0.0;
  const double x = mean_of(region_values);
  const double sigma = sample_std(region_values, x);
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

struct QuadStats {
  double mean_p = 0.0, mean_g = 0.0;
  double var_p = 0.0, var_g = 0.0, cov = 0.0;
  int64_t area = 0;
};

QuadStats quad_stats(const RealMap& pred, const BinaryMask& gt, int y0, int y1, int x0, int x1) {
  QuadStats q;
  q.area = static_cast<int64_t>(y1 - y0) * (x1 - x0);
  if (q.area <= 0) return q;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      q.mean_p += pred.at(y, x);
      q.mean_g += gt.at(y, x) ? 1.0 : 0.0;
    }
  q.mean_p /= static_cast<double>(q.area);
  q.mean_g /= static_cast<double>(q.area);
  if (q.area > 1) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const double dp = pred.at(y, x) - q.mean_p;
        const double dg = (gt.at(y, x) ? 1.0 : 0.0) - q.mean_g;
        q.var_p += dp * dp;
        q.var_g += dg * dg;
        q.cov += dp * dg;
      }
    q.var_p /= static_cast<double>(q.area - 1);
    q.var_g /= static_cast<double>(q.area - 1);
    q.cov /= static_cast<double>(q.area - 1);
  }
  return q;
}

double quad_ssim(const QuadStats& q) {
  const double alpha = 4.0 * q.mean_p * q.mean_g * q.cov;
  const double beta = (q.mean_p * q.mean_p + q.mean_g * q.mean_g) * (q.var_p + q.var_g);
  if (alpha != 0.0) return alpha / (beta + kEps);
  return beta == 0.0 ? 1.0 : 0.0;
}

}  // namespace

double mae(const RealMap& pred, const BinaryMask& gt) {
  require_same_extent(pred, gt, "mae");
  double acc = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    acc += std::abs(pred.values[static_cast<size_t>(i)] - (gt.bits[static_cast<size_t>(i)] ? 1.0 : 0.0));
  }
  return acc / static_cast<double>(pred.numel());
}

FCurve f_curve(const RealMap& pred_in, const BinaryMask& gt, double beta2) {
  require_same_extent(pred_in, gt, "f_curve");
  const int64_t fg = gt.foreground_count();
  GAPNET_REQUIRE(fg > 0, "f_curve: empty ground-truth foreground");
  const RealMap pred = normalize_if_out_of_range(pred_in);

  FCurve curve;
  for (int k = 0; k < 256; ++k) {
    const double t = static_cast<double>(k) / 255.0;
    int64_t tp = 0, predicted = 0;
    for (int64_t i = 0; i < pred.numel(); ++i) {
      if (pred.values[static_cast<size_t>(i)] >= t) {
        ++predicted;
        if (gt.bits[static_cast<size_t>(i)]) ++tp;
      }
    }
    ThresholdPoint& pt = curve.points[static_cast<size_t>(k)];
    pt.threshold = t;
    if (predicted > 0) pt.precision = static_cast<double>(tp) / static_cast<double>(predicted);
    pt.recall = static_cast<double>(tp) / static_cast<double>(fg);
    if (tp > 0) {
      pt.f = (1.0 + beta2) * pt.precision * pt.recall / (beta2 * pt.precision + pt.recall);
    }
    curve.f_max = std::max(curve.f_max, pt.f);
  }
  return curve;
}

double f_weighted(const RealMap& pred, const BinaryMask& gt, double beta2) {
  require_same_extent(pred, gt, "f_weighted");
  GAPNET_REQUIRE(gt.foreground_count() > 0, "f_weighted: empty ground-truth foreground");
  const int w = gt.width, h = gt.height;
  const int64_t total = gt.numel();

  // Distance of every pixel to the nearest foreground pixel, with that
  // pixel's index for error propagation.
  std::vector<int64_t> dist2;
  std::vector<int32_t> nearest;
  edt_to_sites(w, h, gt.bits, dist2, &nearest);

  std::vector<double> err(static_cast<size_t>(total));
  for (int64_t i = 0; i < total; ++i) {
    err[static_cast<size_t>(i)] =
        std::abs(pred.values[static_cast<size_t>(i)] - (gt.bits[static_cast<size_t>(i)] ? 1.0 : 0.0));
  }
  std::vector<double> propagated = err;
  for (int64_t i = 0; i < total; ++i) {
    if (!gt.bits[static_cast<size_t>(i)]) {
      propagated[static_cast<size_t>(i)] = err[static_cast<size_t>(nearest[static_cast<size_t>(i)])];
    }
  }

  // 7x7 Gaussian, sigma 5, normalized to unit sum; zero padding.
  double kernel[7][7];
  double ksum = 0.0;
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx) {
      kernel[dy + 3][dx + 3] = std::exp(-(dy * dy + dx * dx) / (2.0 * 25.0));
      ksum += kernel[dy + 3][dx + 3];
    }
  for (auto& row : kernel)
    for (double& v : row) v /= ksum;

  std::vector<double> smoothed(static_cast<size_t>(total), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = -3; dy <= 3; ++dy) {
        const int sy = y + dy;
        if (sy < 0 || sy >= h) continue;
        for (int dx = -3; dx <= 3; ++dx) {
          const int sx = x + dx;
          if (sx < 0 || sx >= w) continue;
          acc += kernel[dy + 3][dx + 3] * propagated[static_cast<size_t>(sy) * w + sx];
        }
      }
      smoothed[static_cast<size_t>(y) * w + x] = acc;
    }

  // Foreground keeps the smaller of raw and smoothed error; background gets
  // the raw error scaled by distance-based importance.
  const double decay = std::log(0.5) / 5.0;
  double sum_ew_fg = 0.0, sum_ew_bg = 0.0;
  int64_t fg_count = 0;
  for (int64_t i = 0; i < total; ++i) {
    const size_t s = static_cast<size_t>(i);
    if (gt.bits[s]) {
      const double e = smoothed[s] < err[s] ? smoothed[s] : err[s];
      sum_ew_fg += e;
      ++fg_count;
    } else {
      const double weight = 2.0 - std::exp(decay * std::sqrt(static_cast<double>(dist2[s])));
      sum_ew_bg += err[s] * weight;
    }
  }

  const double tp_w = static_cast<double>(fg_count) - sum_ew_fg;
  const double fp_w = sum_ew_bg;
  const double recall = 1.0 - sum_ew_fg / static_cast<double>(fg_count);
  const double precision = tp_w / (kEps + tp_w + fp_w);
  const double q = (1.0 + beta2) * recall * precision / (kEps + recall + beta2 * precision);
  return std::clamp(q, 0.0, 1.0);
}

double s_measure(const RealMap& pred, const BinaryMask& gt) {
  require_same_extent(pred, gt, "s_measure");
  const int64_t total = gt.numel();
  const int64_t fg = gt.foreground_count();
  const double pred_mean = mean_of(pred.values);
  if (fg == 0) return std::clamp(1.0 - pred_mean, 0.0, 1.0);
  if (fg == total) return std::clamp(pred_mean, 0.0, 1.0);

  // Object term: foreground on the prediction, background on its complement.
  std::vector<double> fg_vals, bg_vals;
  fg_vals.reserve(static_cast<size_t>(fg));
  bg_vals.reserve(static_cast<size_t>(total - fg));
  for (int64_t i = 0; i < total; ++i) {
    const size_t s = static_cast<size_t>(i);
    if (gt.bits[s]) {
      fg_vals.push_back(pred.values[s]);
    } else {
      bg_vals.push_back(1.0 - pred.values[s]);
    }
  }
  const double u = static_cast<double>(fg) / static_cast<double>(total);
  const double s_object = u * object_score(fg_vals) + (1.0 - u) * object_score(bg_vals);

  // Region term: split at the foreground centroid (1-indexed rounding).
  const int w = gt.width, h = gt.height;
  double cx = 0.0, cy = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (gt.at(y, x)) {
        cx += static_cast<double>(x + 1);
        cy += static_cast<double>(y + 1);
      }
    }
  const int x_cut = static_cast<int>(std::round(cx / static_cast<double>(fg)));
  const int y_cut = static_cast<int>(std::round(cy / static_cast<double>(fg)));

  const int x0[4] = {0, x_cut, 0, x_cut};
  const int x1[4] = {x_cut, w, x_cut, w};
  const int y0[4] = {0, 0, y_cut, y_cut};
  const int y1[4] = {y_cut, y_cut, h, h};
  double s_region = 0.0;
  for (int qd = 0; qd < 4; ++qd) {
    const QuadStats q = quad_stats(pred, gt, y0[qd], y1[qd], x0[qd], x1[qd]);
    if (q.area <= 0) continue;  // zero-weight quadrant
    const double weight = static_cast<double>(q.area) / static_cast<double>(total);
    s_region += weight * quad_ssim(q);
  }

  return std::clamp(0.5 * s_object + 0.5 * s_region, 0.0, 1.0);
}

EMeasure e_measure(const RealMap& pred_in, const BinaryMask& gt) {
  require_same_extent(pred_in, gt, "e_measure");
  const RealMap pred = normalize_if_out_of_range(pred_in);
  const int64_t total = gt.numel();
  const int64_t fg = gt.foreground_count();
  const double gt_mean = static_cast<double>(fg) / static_cast<double>(total);

  EMeasure em;
  em.e_max = 0.0;
  double sum = 0.0;
  for (int k = 0; k < 256; ++k) {
    const double t = (static_cast<double>(k) + 0.5) / 256.0;
    int64_t on = 0;
    for (int64_t i = 0; i < total; ++i) {
      if (pred.values[static_cast<size_t>(i)] >= t) ++on;
    }
    const double bin_mean = static_cast<double>(on) / static_cast<double>(total);
    double e;
    if (fg == 0) {
      e = 1.0 - bin_mean;
    } else if (fg == total) {
      e = bin_mean;
    } else {
      double acc = 0.0;
      for (int64_t i = 0; i < total; ++i) {
        const size_t s = static_cast<size_t>(i);
        const double phi_p = (pred.values[s] >= t ? 1.0 : 0.0) - bin_mean;
        const double phi_g = (gt.bits[s] ? 1.0 : 0.0) - gt_mean;
        const double align = 2.0 * phi_g * phi_p / (phi_g * phi_g + phi_p * phi_p + kEps);
        acc += (1.0 + align) * (1.0 + align) / 4.0;
      }
      e = acc / static_cast<double>(total);
    }
    em.e_max = std::max(em.e_max, e);
    sum += e;
  }
  em.e_mean = sum / 256.0;
  return em;
}

PerImageMetrics evaluate_pair(const RealMap& pred, const BinaryMask& gt, const EvalOptions& options) {
  PerImageMetrics m;
  m.mae = mae(pred, gt);
  m.empty_gt = gt.foreground_count() == 0;
  if (!m.empty_gt) {
    m.f_max = f_curve(pred, gt, options.f_beta2).f_max;
    m.f_weighted = f_weighted(pred, gt, options.wf_beta2);
    m.s_measure = s_measure(pred, gt);
    const EMeasure em = e_measure(pred, gt);
    m.e_max = em.e_max;
    m.e_mean = em.e_mean;
  }
  return m;
}

MetricReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir,
                              const EvalOptions& options) {
  GAPNET_REQUIRE(fs::is_directory(pred_dir), "{}: not a directory", pred_dir);
  GAPNET_REQUIRE(fs::is_directory(gt_dir), "{}: not a directory", gt_dir);

  auto collect = [](const std::string& dir) {
    std::map<std::string, std::string> stems;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") {
        stems[entry.path().stem().string()] = entry.path().string();
      }
    }
    return stems;
  };
  const auto preds = collect(pred_dir);
  const auto gts = collect(gt_dir);

  MetricReport report;
  for (const auto& [stem, path] : preds) {
    if (!gts.count(stem)) report.unmatched.push_back(fmt::format("prediction without mask: {}", path));
  }
  for (const auto& [stem, path] : gts) {
    if (!preds.count(stem)) report.unmatched.push_back(fmt::format("mask without prediction: {}", path));
  }

  double sums[6] = {0, 0, 0, 0, 0, 0};
  int scored = 0;  // images contributing to F/S/E
  for (const auto& [stem, gt_path] : gts) {
    const auto pred_it = preds.find(stem);
    if (pred_it == preds.end()) continue;
    RealMap pred;
    BinaryMask gt;
    try {
      int pw = 0, ph = 0;
      const auto raw = load_gray01(pred_it->second, pw, ph);
      gt = load_mask(gt_path);
      pred.width = gt.width;
      pred.height = gt.height;
      pred.values = (pw == gt.width && ph == gt.height)
                        ? raw
                        : resize_bilinear_plane(raw, pw, ph, gt.width, gt.height);
    } catch (const IoError& err) {
      report.skipped.push_back(err.what());
      continue;
    }
    PerImageMetrics m = evaluate_pair(pred, gt, options);
    m.stem = stem;
    report.per_image.push_back(m);
    ++report.count;
    sums[0] += m.mae;
    if (m.empty_gt) {
      report.empty_gt_stems.push_back(stem);
    } else {
      sums[1] += m.f_max;
      sums[2] += m.f_weighted;
      sums[3] += m.s_measure;
      sums[4] += m.e_max;
      sums[5] += m.e_mean;
      ++scored;
    }
  }
  GAPNET_REQUIRE(report.count > 0, "no evaluable image pairs between {} and {}", pred_dir, gt_dir);

  report.mae = sums[0] / static_cast<double>(report.count);
  if (scored > 0) {
    report.f_max = sums[1] / static_cast<double>(scored);
    report.f_weighted = sums[2] / static_cast<double>(scored);
    report.s_measure = sums[3] / static_cast<double>(scored);
    report.e_max = sums[4] / static_cast<double>(scored);
    report.e_mean = sums[5] / static_cast<double>(scored);
  }
  return report;
}

std::string MetricReport::table() const {
  std::ostringstream out;
  out << fmt::format("{:<24} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "image", "mae", "fmax", "fw",
                     "sm", "emax", "emean");
  for (const auto& m : per_image) {
    if (m.empty_gt) {
      out << fmt::format("{:<24} {:>8.4f} {:>8} {:>8} {:>8} {:>8} {:>8}\n", m.stem, m.mae, "-", "-",
                         "-", "-", "-");
    } else {
      out << fmt::format("{:<24} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f}\n", m.stem,
                         m.mae, m.f_max, m.f_weighted, m.s_measure, m.e_max, m.e_mean);
    }
  }
  out << fmt::format("{:<24} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f}\n", "mean", mae,
                     f_max, f_weighted, s_measure, e_max, e_mean);
  for (const auto& stem : empty_gt_stems) {
    out << fmt::format("# empty ground truth (MAE only): {}\n", stem);
  }
  for (const auto& s : unmatched) out << fmt::format("# unmatched: {}\n", s);
  for (const auto& s : skipped) out << fmt::format("# skipped: {}\n", s);
  return out.str();
}

std::string MetricReport::key_values() const {
  return fmt::format("mae={:.6f}\nfmax={:.6f}\nfw={:.6f}\nsm={:.6f}\nemax={:.6f}\nemean={:.6f}\ncount={}\n",
                     mae, f_max, f_weighted, s_measure, e_max, e_mean, count);
}

}  // namespace gapnet::metrics
