#include "gapnet/labels.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gapnet/check.h"

namespace gapnet {

namespace {

// Internal "no site in this column" marker. Bounded so the lower-envelope
// arithmetic stays exact in int64 for extents up to 4096.
constexpr int64_t kColumnInf = int64_t(1) << 26;
constexpr int kMaxExtent = 4096;

int64_t floor_div64(int64_t a, int64_t b) {
  // b > 0 always here
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

}  // namespace

int64_t BinaryMask::foreground_count() const {
  int64_t n = 0;
  for (uint8_t b : bits) n += b ? 1 : 0;
  return n;
}

void edt_to_sites(int width, int height, const std::vector<uint8_t>& site,
                  std::vector<int64_t>& dist2, std::vector<int32_t>* nearest) {
  GAPNET_REQUIRE(width > 0 && height > 0, "zero-area mask");
  GAPNET_REQUIRE(width <= kMaxExtent && height <= kMaxExtent,
                 "mask extent {}x{} beyond supported {}", width, height, kMaxExtent);
  GAPNET_REQUIRE(static_cast<int64_t>(site.size()) == static_cast<int64_t>(width) * height,
                 "site buffer size mismatch");
  bool any = false;
  for (uint8_t s : site) {
    if (s) {
      any = true;
      break;
    }
  }
  GAPNET_REQUIRE(any, "edt_to_sites needs at least one site pixel");

  const int64_t total = static_cast<int64_t>(width) * height;
  dist2.assign(static_cast<size_t>(total), 0);
  if (nearest) nearest->assign(static_cast<size_t>(total), -1);

  // Column pass: squared vertical distance to the nearest site in the same
  // column, preferring the smaller row on ties.
  std::vector<int64_t> coldist(static_cast<size_t>(total), kColumnInf);
  std::vector<int32_t> colrow(static_cast<size_t>(total), -1);
  for (int x = 0; x < width; ++x) {
    int last = -1;
    for (int y = 0; y < height; ++y) {
      if (site[static_cast<size_t>(y) * width + x]) last = y;
      if (last >= 0) {
        const int64_t d = y - last;
        coldist[static_cast<size_t>(y) * width + x] = d * d;
        colrow[static_cast<size_t>(y) * width + x] = last;
      }
    }
    last = -1;
    for (int y = height - 1; y >= 0; --y) {
      if (site[static_cast<size_t>(y) * width + x]) last = y;
      if (last >= 0) {
        const int64_t d = last - y;
        const size_t i = static_cast<size_t>(y) * width + x;
        // Strict improvement only: the downward scan already claimed the
        // smaller row when the two candidates are equidistant.
        if (d * d < coldist[i]) {
          coldist[i] = d * d;
          colrow[i] = last;
        }
      }
    }
  }

  // Row pass: lower envelope of parabolas f(x') + (x - x')^2 with exact
  // integer takeover points. A new parabola (larger column) becomes active
  // strictly past the intersection, so the smaller column keeps ties.
  std::vector<int> v(static_cast<size_t>(width));
  std::vector<int64_t> z(static_cast<size_t>(width) + 1);
  for (int y = 0; y < height; ++y) {
    const int64_t* f = coldist.data() + static_cast<int64_t>(y) * width;
    int k = 0;
    v[0] = 0;
    z[0] = std::numeric_limits<int64_t>::min() / 4;
    for (int q = 1; q < width; ++q) {
      int64_t takeover;
      while (true) {
        const int p = v[static_cast<size_t>(k)];
        const int64_t num = (f[q] + static_cast<int64_t>(q) * q) - (f[p] + static_cast<int64_t>(p) * p);
        const int64_t den = 2 * static_cast<int64_t>(q - p);
        takeover = floor_div64(num, den) + 1;  // first integer x where q strictly wins
        if (takeover <= z[static_cast<size_t>(k)] && k > 0) {
          --k;
          continue;
        }
        break;
      }
      if (takeover <= z[static_cast<size_t>(k)]) {
        // Replaces the only remaining parabola.
        v[static_cast<size_t>(k)] = q;
      } else {
        ++k;
        v[static_cast<size_t>(k)] = q;
        z[static_cast<size_t>(k)] = takeover;
      }
    }
    int j = 0;
    for (int x = 0; x < width; ++x) {
      while (j < k && z[static_cast<size_t>(j) + 1] <= x) ++j;
      const int p = v[static_cast<size_t>(j)];
      const int64_t dx = x - p;
      const int64_t d = f[p] + dx * dx;
      const size_t i = static_cast<size_t>(y) * width + x;
      dist2[i] = d;
      if (nearest) {
        (*nearest)[i] = static_cast<int32_t>(colrow[static_cast<size_t>(y) * width + p]) * width + p;
      }
    }
  }
}

std::vector<int64_t> edt_squared(const BinaryMask& mask) {
  GAPNET_REQUIRE(mask.width > 0 && mask.height > 0, "zero-area mask");
  const int64_t total = mask.numel();
  bool has_background = false;
  for (uint8_t b : mask.bits) {
    if (!b) {
      has_background = true;
      break;
    }
  }
  if (!has_background) {
    return std::vector<int64_t>(static_cast<size_t>(total), kInfiniteDist2);
  }
  std::vector<uint8_t> background(static_cast<size_t>(total));
  for (size_t i = 0; i < background.size(); ++i) background[i] = mask.bits[i] ? 0 : 1;
  std::vector<int64_t> dist2;
  edt_to_sites(mask.width, mask.height, background, dist2, nullptr);
  return dist2;
}

TriRegionLabel decompose(const BinaryMask& mask, const DecomposeParams& params) {
  GAPNET_REQUIRE(mask.width > 0 && mask.height > 0, "zero-area mask");
  TriRegionLabel label;
  label.width = mask.width;
  label.height = mask.height;
  label.region.assign(static_cast<size_t>(mask.numel()), Region::kBackground);
  label.dist2 = edt_squared(mask);

  std::vector<int64_t> fg;
  for (int64_t i = 0; i < mask.numel(); ++i) {
    if (mask.bits[static_cast<size_t>(i)]) fg.push_back(i);
  }
  if (fg.empty()) return label;  // empty foreground: all three regions empty

  const int64_t boundary_cut = static_cast<int64_t>(params.boundary_dist) * params.boundary_dist;
  for (int64_t i : fg) {
    const int64_t d = label.dist2[static_cast<size_t>(i)];
    label.region[static_cast<size_t>(i)] = (d != kInfiniteDist2 && d < boundary_cut)
                                               ? Region::kBoundary
                                               : Region::kOthers;
  }

  // Rank the whole foreground by distance, row-major on ties; the top
  // ceil(center_frac * |F|) become center unless already boundary.
  std::vector<int64_t> order = fg;
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    const int64_t da = label.dist2[static_cast<size_t>(a)];
    const int64_t db = label.dist2[static_cast<size_t>(b)];
    if (da != db) return da > db;
    return a < b;
  });
  const int64_t k = static_cast<int64_t>(
      std::ceil(params.center_frac * static_cast<double>(fg.size())));
  for (int64_t r = 0; r < std::min<int64_t>(k, static_cast<int64_t>(order.size())); ++r) {
    const int64_t i = order[static_cast<size_t>(r)];
    if (label.region[static_cast<size_t>(i)] != Region::kBoundary) {
      label.region[static_cast<size_t>(i)] = Region::kCenter;
    }
  }
  return label;
}

BinaryMask target_mask(const TriRegionLabel& label, TargetKind kind) {
  BinaryMask out(label.width, label.height);
  for (size_t i = 0; i < label.region.size(); ++i) {
    const Region r = label.region[i];
    bool on = false;
    switch (kind) {
      case TargetKind::kFull:
        on = r != Region::kBackground;
        break;
      case TargetKind::kBoundary:
        on = r == Region::kBoundary;
        break;
      case TargetKind::kCenter:
        on = r == Region::kCenter;
        break;
      case TargetKind::kOthers:
        on = r == Region::kOthers;
        break;
      case TargetKind::kCenterOthers:
        on = r == Region::kCenter || r == Region::kOthers;
        break;
      case TargetKind::kBoundaryOthers:
        on = r == Region::kBoundary || r == Region::kOthers;
        break;
    }
    out.bits[i] = on ? 1 : 0;
  }
  return out;
}

SupervisionTargets supervision_targets(const BinaryMask& mask) {
  const TriRegionLabel label = decompose(mask);
  SupervisionTargets t;
  t.boundary_others = target_mask(label, TargetKind::kBoundaryOthers);
  t.center = target_mask(label, TargetKind::kCenter);
  t.full = target_mask(label, TargetKind::kFull);
  return t;
}

}  // namespace gapnet
