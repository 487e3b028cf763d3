#pragma once

#include <cstdint>
#include <limits>
#include <vector>

namespace gapnet {

struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;  // row-major, 0 background / 1 foreground

  BinaryMask() = default;
  BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<size_t>(w) * h, 0) {}

  int64_t numel() const { return static_cast<int64_t>(width) * height; }
  uint8_t& at(int y, int x) { return bits[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x]; }
  int64_t foreground_count() const;
};

enum class Region : uint8_t { kBackground = 0, kBoundary = 1, kCenter = 2, kOthers = 3 };

struct TriRegionLabel {
  int width = 0;
  int height = 0;
  std::vector<Region> region;
  std::vector<int64_t> dist2;  // squared distance to the nearest background pixel

  Region at(int y, int x) const { return region[static_cast<size_t>(y) * width + x]; }
};

// Distance reported for pixels when the mask has no background at all.
constexpr int64_t kInfiniteDist2 = std::numeric_limits<int64_t>::max();

// Exact squared Euclidean distance from every pixel to the nearest
// background pixel (background pixels read 0). All-foreground masks get the
// kInfiniteDist2 sentinel everywhere.
std::vector<int64_t> edt_squared(const BinaryMask& mask);

// Exact squared distance to the nearest site pixel (site[i] != 0), with the
// row-major index of that site when `nearest` is non-null. Equidistant sites
// tie-break on (column, row), smallest first. Used directly by the
// weighted-F metric; requires at least one site.
void edt_to_sites(int width, int height, const std::vector<uint8_t>& site,
                  std::vector<int64_t>& dist2, std::vector<int32_t>* nearest);

struct DecomposeParams {
  int boundary_dist = 5;      // boundary: Euclidean distance strictly below this
  double center_frac = 0.20;  // center: this top fraction of distances
};

// Partitions the mask foreground into boundary / center / others:
//   boundary  pixels closer than boundary_dist to the background,
//   center    the ceil(center_frac * |foreground|) largest distances,
//             ranked over the whole foreground with boundary taking
//             precedence; ties at the cutoff break in row-major order,
//   others    the remaining foreground.
TriRegionLabel decompose(const BinaryMask& mask, const DecomposeParams& params = {});

enum class TargetKind : uint8_t {
  kFull,
  kBoundary,
  kCenter,
  kOthers,
  kCenterOthers,
  kBoundaryOthers,
};

BinaryMask target_mask(const TriRegionLabel& label, TargetKind kind);

struct SupervisionTargets {
  BinaryMask boundary_others;  // g1
  BinaryMask center;           // g2
  BinaryMask full;             // g3
};

SupervisionTargets supervision_targets(const BinaryMask& mask);

}  // namespace gapnet
