#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <fmt/core.h>

#include "gapnet/dataio.h"
#include "gapnet/metrics.h"
#include "gapnet/rng.h"
#include "metric_oracles.h"

using namespace gapnet;
using namespace gapnet::metrics;
namespace fs = std::filesystem;

namespace {

RealMap map_of(const BinaryMask& g) {
  RealMap p(g.width, g.height);
  for (size_t i = 0; i < g.bits.size(); ++i) p.values[i] = g.bits[i] ? 1.0 : 0.0;
  return p;
}

RealMap inverted(const RealMap& p) {
  RealMap q(p.width, p.height);
  for (size_t i = 0; i < p.values.size(); ++i) q.values[i] = 1.0 - p.values[i];
  return q;
}

BinaryMask square_mask(int size, int y0, int y1, int x0, int x1) {
  BinaryMask m(size, size);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

// Smooth prediction: the mask blurred by a 3x3 box filter.
RealMap blurred(const BinaryMask& g) {
  RealMap p(g.width, g.height);
  for (int y = 0; y < g.height; ++y)
    for (int x = 0; x < g.width; ++x) {
      double acc = 0.0;
      int cnt = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int sy = y + dy, sx = x + dx;
          if (sy < 0 || sy >= g.height || sx < 0 || sx >= g.width) continue;
          acc += g.at(sy, sx);
          ++cnt;
        }
      p.at(y, x) = acc / cnt;
    }
  return p;
}

RealMap random_map(int w, int h, Rng& rng) {
  RealMap p(w, h);
  for (auto& v : p.values) v = rng.uniform();
  return p;
}

BinaryMask random_blob(int size, Rng& rng) {
  const int y0 = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(size / 3)));
  const int x0 = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(size / 3)));
  const int y1 = y0 + 2 + static_cast<int>(rng.below(static_cast<uint64_t>(size - y0 - 2)));
  const int x1 = x0 + 2 + static_cast<int>(rng.below(static_cast<uint64_t>(size - x0 - 2)));
  return square_mask(size, y0, y1, x0, x1);
}

}  // namespace

TEST_CASE("mae closed forms") {
  const auto g = square_mask(8, 2, 6, 2, 6);
  CHECK(mae(map_of(g), g) == 0.0);
  CHECK(mae(inverted(map_of(g)), g) == doctest::Approx(1.0));

  BinaryMask zero(4, 4);
  RealMap quarter(4, 4);
  for (auto& v : quarter.values) v = 0.25;
  CHECK(mae(quarter, zero) == doctest::Approx(0.25));

  CHECK_THROWS_AS(mae(RealMap(3, 3), zero), std::invalid_argument);
}

TEST_CASE("mae complement symmetry") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_blob(16, rng);
    const auto p = random_map(16, 16, rng);
    BinaryMask ginv(16, 16);
    for (size_t i = 0; i < ginv.bits.size(); ++i) ginv.bits[i] = g.bits[i] ? 0 : 1;
    CHECK(mae(p, g) == doctest::Approx(mae(inverted(p), ginv)).epsilon(1e-12));
  }
}

TEST_CASE("f_curve closed forms") {
  const auto g = square_mask(10, 0, 5, 0, 10);  // exactly half foreground
  CHECK(f_curve(map_of(g), g).f_max == doctest::Approx(1.0));

  RealMap ones(10, 10);
  for (auto& v : ones.values) v = 1.0;
  const auto curve = f_curve(ones, g);
  const double expected = 1.3 * 0.5 * 1.0 / (0.3 * 0.5 + 1.0);
  for (const auto& pt : curve.points) {
    CHECK(pt.precision == doctest::Approx(0.5));
    CHECK(pt.recall == doctest::Approx(1.0));
    CHECK(pt.f == doctest::Approx(expected).epsilon(1e-9));
  }
  CHECK(curve.f_max == doctest::Approx(0.5652).epsilon(1e-3));

  Rng rng(3);
  const auto p = random_map(10, 10, rng);
  const auto c2 = f_curve(p, g);
  for (const auto& pt : c2.points) CHECK(c2.f_max >= pt.f);

  BinaryMask empty(10, 10);
  CHECK_THROWS_AS(f_curve(p, empty), std::invalid_argument);
}

TEST_CASE("f_max is monotone under sharpening toward the mask") {
  const auto g = square_mask(16, 4, 12, 4, 12);
  const auto soft = blurred(g);
  double prev = 0.0;
  for (int step = 0; step <= 4; ++step) {
    // Interpolate from the blurred map toward the exact mask.
    const double a = step / 4.0;
    RealMap p(16, 16);
    for (size_t i = 0; i < p.values.size(); ++i) {
      p.values[i] = (1.0 - a) * soft.values[i] + a * (g.bits[i] ? 1.0 : 0.0);
    }
    const double f = f_curve(p, g).f_max;
    CHECK(f >= prev - 1e-12);
    prev = f;
  }
  CHECK(prev == doctest::Approx(1.0));
}

TEST_CASE("weighted F closed forms") {
  const auto g = square_mask(12, 3, 9, 3, 9);
  CHECK(f_weighted(map_of(g), g) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(f_weighted(inverted(map_of(g)), g) < 0.05);
  BinaryMask empty(12, 12);
  CHECK_THROWS_AS(f_weighted(map_of(g), empty), std::invalid_argument);
}

TEST_CASE("weighted F matches the step-by-step oracle on fixtures") {
  Rng rng(23);
  // Handcrafted 5x5: plus-shaped foreground with a graded prediction.
  BinaryMask plus(5, 5);
  for (int i = 0; i < 5; ++i) {
    plus.at(2, i) = 1;
    plus.at(i, 2) = 1;
  }
  RealMap graded(5, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) graded.at(y, x) = (y * 5 + x) / 24.0;
  CHECK(f_weighted(graded, plus) == doctest::Approx(oracle::wf_oracle(graded, plus, 1.0)).epsilon(1e-6));

  for (const int size : {5, 9, 16, 24, 32}) {
    const auto g = random_blob(size, rng);
    const auto p = random_map(size, size, rng);
    CHECK(f_weighted(p, g) == doctest::Approx(oracle::wf_oracle(p, g, 1.0)).epsilon(1e-6));
    CHECK(f_weighted(p, g, 0.3) == doctest::Approx(oracle::wf_oracle(p, g, 0.3)).epsilon(1e-6));
    const auto soft = blurred(g);
    CHECK(f_weighted(soft, g) == doctest::Approx(oracle::wf_oracle(soft, g, 1.0)).epsilon(1e-6));
  }
}

TEST_CASE("s_measure closed forms") {
  const auto g = square_mask(14, 4, 10, 5, 11);
  CHECK(s_measure(map_of(g), g) == doctest::Approx(1.0).epsilon(1e-9));

  BinaryMask empty(10, 10);
  RealMap p3(10, 10);
  for (auto& v : p3.values) v = 0.3;
  CHECK(s_measure(p3, empty) == doctest::Approx(0.7));

  BinaryMask full(10, 10);
  for (auto& b : full.bits) b = 1;
  CHECK(s_measure(p3, full) == doctest::Approx(0.3));
}

TEST_CASE("s_measure matches the transcription oracle on fixtures") {
  Rng rng(29);
  const auto fixture = square_mask(20, 6, 15, 3, 12);
  const auto soft = blurred(fixture);
  CHECK(s_measure(soft, fixture) == doctest::Approx(oracle::s_oracle(soft, fixture)).epsilon(1e-6));

  for (const int size : {5, 8, 16, 25, 32}) {
    const auto g = random_blob(size, rng);
    const auto p = random_map(size, size, rng);
    CHECK(s_measure(p, g) == doctest::Approx(oracle::s_oracle(p, g)).epsilon(1e-6));
    const auto smooth = blurred(g);
    CHECK(s_measure(smooth, g) == doctest::Approx(oracle::s_oracle(smooth, g)).epsilon(1e-6));
  }
}

TEST_CASE("e_measure closed forms") {
  const auto g = square_mask(10, 0, 5, 0, 10);  // balanced mask
  const auto ident = e_measure(map_of(g), g);
  CHECK(ident.e_max == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(ident.e_mean == doctest::Approx(1.0).epsilon(1e-9));

  const auto inv = e_measure(inverted(map_of(g)), g);
  CHECK(inv.e_max < 1e-6);   // every threshold produces the anti-aligned map
  CHECK(inv.e_mean < 1e-6);

  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_map(10, 10, rng);
    const auto em = e_measure(p, g);
    CHECK(em.e_mean <= em.e_max + 1e-12);
  }
}

TEST_CASE("e_measure matches the transcription oracle on fixtures") {
  Rng rng(37);
  for (const int size : {5, 8, 16, 24, 32}) {
    const auto g = random_blob(size, rng);
    const auto p = random_map(size, size, rng);
    const auto got = e_measure(p, g);
    const auto want = oracle::e_oracle(p, g);
    CHECK(got.e_max == doctest::Approx(want.first).epsilon(1e-6));
    CHECK(got.e_mean == doctest::Approx(want.second).epsilon(1e-6));
    const auto soft = blurred(g);
    const auto got2 = e_measure(soft, g);
    const auto want2 = oracle::e_oracle(soft, g);
    CHECK(got2.e_max == doctest::Approx(want2.first).epsilon(1e-6));
    CHECK(got2.e_mean == doctest::Approx(want2.second).epsilon(1e-6));
  }
}

TEST_CASE("identity predictions score the ideal sextuple") {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const auto g = random_blob(20, rng);
    const auto m = evaluate_pair(map_of(g), g, EvalOptions{});
    CHECK(m.mae == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(m.f_max == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(m.f_weighted == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(m.s_measure == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(m.e_max == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(m.e_mean == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("metrics are invariant to joint translation") {
  Rng rng(43);
  const int size = 28;
  const auto g = random_blob(12, rng);
  const auto p = blurred(g);

  auto embed = [&](int dy, int dx) {
    BinaryMask ge(size, size);
    RealMap pe(size, size);
    for (int y = 0; y < g.height; ++y)
      for (int x = 0; x < g.width; ++x) {
        ge.at(y + dy, x + dx) = g.at(y, x);
        pe.at(y + dy, x + dx) = p.at(y, x);
      }
    return std::make_pair(pe, ge);
  };
  // Both placements keep the object well inside the canvas so the Gaussian
  // support of the weighted-F error map never clips.
  const auto [p0, g0] = embed(4, 4);
  const auto [p1, g1] = embed(11, 9);

  CHECK(mae(p0, g0) == doctest::Approx(mae(p1, g1)).epsilon(1e-12));
  CHECK(f_curve(p0, g0).f_max == doctest::Approx(f_curve(p1, g1).f_max).epsilon(1e-12));
  CHECK(f_weighted(p0, g0) == doctest::Approx(f_weighted(p1, g1)).epsilon(1e-9));
  const auto e0 = e_measure(p0, g0);
  const auto e1 = e_measure(p1, g1);
  CHECK(e0.e_max == doctest::Approx(e1.e_max).epsilon(1e-9));
  CHECK(e0.e_mean == doctest::Approx(e1.e_mean).epsilon(1e-9));
  // The region term anchors its quadrants at the object centroid but they
  // extend to the canvas edges, so a shift redistributes background between
  // quadrants; the structure measure is therefore only nearly invariant.
  CHECK(s_measure(p0, g0) == doctest::Approx(s_measure(p1, g1)).epsilon(0.02));
}

TEST_CASE("out-of-range maps are min-max normalized for thresholded metrics") {
  const auto g = square_mask(8, 2, 6, 2, 6);
  RealMap wide(8, 8);
  for (size_t i = 0; i < wide.values.size(); ++i) wide.values[i] = g.bits[i] ? 3.0 : -1.0;
  CHECK(f_curve(wide, g).f_max == doctest::Approx(1.0));
  CHECK(e_measure(wide, g).e_max == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("evaluate_dataset on disk fixtures") {
  const fs::path dir = fs::temp_directory_path() / "gapnet_metrics_test";
  fs::remove_all(dir);
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");

  Rng rng(47);
  for (int i = 0; i < 10; ++i) {
    const auto g = random_blob(20, rng);
    std::vector<uint8_t> bytes(static_cast<size_t>(g.numel()));
    for (size_t k = 0; k < bytes.size(); ++k) bytes[k] = g.bits[k] ? 255 : 0;
    write_gray_pnm((dir / "pred" / fmt::format("img{:02d}.pgm", i)).string(), 20, 20, bytes);
    write_gray_pnm((dir / "gt" / fmt::format("img{:02d}.pgm", i)).string(), 20, 20, bytes);
  }

  const auto report = evaluate_dataset((dir / "pred").string(), (dir / "gt").string());
  CHECK(report.count == 10);
  CHECK(report.clean());
  CHECK(report.mae == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(report.f_max == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(report.f_weighted == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(report.s_measure == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(report.e_max == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(report.e_mean == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(report.key_values().find("count=10") != std::string::npos);

  // A corrupt prediction is skipped and flagged; the rest still score.
  {
    std::ofstream bad((dir / "pred" / "img00.pgm").string(), std::ios::binary | std::ios::trunc);
    bad << "P5\n20 20\n255\nshort";
  }
  const auto partial = evaluate_dataset((dir / "pred").string(), (dir / "gt").string());
  CHECK(partial.count == 9);
  CHECK(partial.skipped.size() == 1);
  CHECK_FALSE(partial.clean());

  // Unmatched stems are reported.
  {
    std::vector<uint8_t> bytes(400, 128);
    write_gray_pnm((dir / "pred" / "orphan.pgm").string(), 20, 20, bytes);
  }
  const auto orphaned = evaluate_dataset((dir / "pred").string(), (dir / "gt").string());
  CHECK(orphaned.unmatched.size() == 1);

  // Predictions at a different extent are resized to the mask extent.
  fs::remove_all(dir / "pred2");
  fs::create_directories(dir / "pred2");
  {
    std::vector<uint8_t> big(40 * 40, 0);
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x)
        if (y >= 10 && y < 30 && x >= 10 && x < 30) big[static_cast<size_t>(y) * 40 + x] = 255;
    write_gray_pnm((dir / "pred2" / "img.pgm").string(), 40, 40, big);
    std::vector<uint8_t> small(20 * 20, 0);
    for (int y = 5; y < 15; ++y)
      for (int x = 5; x < 15; ++x) small[static_cast<size_t>(y) * 20 + x] = 255;
    fs::create_directories(dir / "gt2");
    write_gray_pnm((dir / "gt2" / "img.pgm").string(), 20, 20, small);
  }
  const auto resized = evaluate_dataset((dir / "pred2").string(), (dir / "gt2").string());
  CHECK(resized.count == 1);
  CHECK(resized.mae < 0.05);
  CHECK(resized.f_max > 0.9);

  fs::remove_all(dir);
}

TEST_CASE("empty ground truth stays in MAE but leaves F/S/E") {
  const fs::path dir = fs::temp_directory_path() / "gapnet_metrics_empty";
  fs::remove_all(dir);
  fs::create_directories(dir / "pred");
  fs::create_directories(dir / "gt");

  std::vector<uint8_t> blank(16 * 16, 0);
  std::vector<uint8_t> square(16 * 16, 0);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) square[static_cast<size_t>(y) * 16 + x] = 255;

  write_gray_pnm((dir / "pred" / "a.pgm").string(), 16, 16, square);
  write_gray_pnm((dir / "gt" / "a.pgm").string(), 16, 16, square);
  write_gray_pnm((dir / "pred" / "b.pgm").string(), 16, 16, blank);
  write_gray_pnm((dir / "gt" / "b.pgm").string(), 16, 16, blank);  // empty ground truth

  const auto report = evaluate_dataset((dir / "pred").string(), (dir / "gt").string());
  CHECK(report.count == 2);
  CHECK(report.empty_gt_stems == std::vector<std::string>{"b"});
  CHECK(report.mae == doctest::Approx(0.0));
  CHECK(report.f_max == doctest::Approx(1.0).epsilon(1e-6));  // averaged over "a" only

  fs::remove_all(dir);
}
