#include <doctest.h>

#include <stdexcept>

#include <random>

#include "msforge/geometry.hpp"
#include "oracles.hpp"

using namespace msforge;

TEST_CASE("tile_image: exact division") {
  const auto p = tile_image(64, 64, 8);
  REQUIRE(p.size() == 64);
  CHECK(p[0].rect == BBox{0, 0, 8, 8});
  CHECK(p[9].rect == BBox{8, 8, 16, 16});
}

TEST_CASE("tile_image: last patch of a 512 image") {
  const auto p = tile_image(512, 512, 8);
  CHECK(p[63].rect == BBox{448, 448, 512, 512});
  CHECK(p[63].index == 63);
}

TEST_CASE("tile_image: remainder goes to the last column") {
  const auto p = tile_image(513, 512, 8);
  for (int c = 0; c < 7; ++c) CHECK(p[static_cast<std::size_t>(c)].rect.width() == 64);
  CHECK(p[7].rect.width() == 65);
  CHECK(p[7].rect.x_max == 513);
}

TEST_CASE("tile_image: rejects dimensions below M") {
  CHECK_THROWS_AS(tile_image(7, 64, 8), std::invalid_argument);
  CHECK_THROWS_AS(tile_image(64, 7, 8), std::invalid_argument);
  CHECK_THROWS_AS(tile_image(64, 64, 0), std::invalid_argument);
}

TEST_CASE("tile_image: patches are disjoint and cover the image") {
  std::mt19937_64 g(5);
  for (int t = 0; t < 50; ++t) {
    const int m = std::uniform_int_distribution<int>(1, 9)(g);
    const int w = std::uniform_int_distribution<int>(m, 70)(g);
    const int h = std::uniform_int_distribution<int>(m, 70)(g);
    const auto p = tile_image(w, h, m);
    std::vector<int> cover(static_cast<std::size_t>(w * h), 0);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      CHECK(p[i].index == static_cast<int>(i));
      CHECK(p[i].rect == oracle::cell_rect(w, h, m, static_cast<int>(i)));
      total += p[i].rect.area();
      for (int y = p[i].rect.y_min; y < p[i].rect.y_max; ++y)
        for (int x = p[i].rect.x_min; x < p[i].rect.x_max; ++x) ++cover[static_cast<std::size_t>(y * w + x)];
    }
    CHECK(total == static_cast<std::int64_t>(w) * h);
    CHECK(std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("region_patch_iou: hand cases") {
  CHECK(region_patch_iou(BBox{0, 0, 8, 8}, BBox{0, 0, 8, 8}) == 1.0);
  CHECK(region_patch_iou(BBox{0, 0, 4, 4}, BBox{8, 8, 16, 16}) == 0.0);
  CHECK(region_patch_iou(BBox{0, 0, 12, 8}, BBox{8, 0, 16, 8}) == doctest::Approx(0.25));
  CHECK(region_patch_iou(RasterMask(16, 8), BBox{8, 0, 16, 8}) == 0.0);
}

TEST_CASE("region_patch_iou: box equals its rasterized mask, matching the pixel oracle") {
  std::mt19937_64 g(9);
  auto rnd = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(g); };
  for (int t = 0; t < 300; ++t) {
    const int w = 32, h = 24;
    const int x0 = rnd(0, w - 1), y0 = rnd(0, h - 1);
    const BBox box{x0, y0, rnd(x0 + 1, w), rnd(y0 + 1, h)};
    const int px = rnd(0, w - 1), py = rnd(0, h - 1);
    const BBox patch{px, py, rnd(px + 1, w), rnd(py + 1, h)};
    const double a = region_patch_iou(box, patch);
    const double b = region_patch_iou(RasterMask::from_box(w, h, box), patch);
    const double o = oracle::pixel_iou(oracle::rasterize_box(box, w, h), oracle::rasterize_box(patch, w, h));
    CHECK(a == b);
    CHECK(a == o);
    CHECK(a >= 0.0);
    CHECK(a <= 1.0);
    CHECK(box_iou(box, patch) == box_iou(patch, box));
  }
}

TEST_CASE("region_patch_ious on masks matches the pixel oracle") {
  std::mt19937_64 g(21);
  const int w = 40, h = 30;
  for (int t = 0; t < 40; ++t) {
    RasterMask m(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) m.set(x, y, std::bernoulli_distribution(0.3)(g));
    const auto patches = tile_image(w, h, 6);
    const auto ious = region_patch_ious(m, patches);
    oracle::Bits bits(static_cast<std::size_t>(w * h));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) bits[static_cast<std::size_t>(y * w + x)] = m.at(x, y);
    for (std::size_t i = 0; i < patches.size(); ++i) {
      CHECK(ious[i] == oracle::pixel_iou(bits, oracle::rasterize_box(patches[i].rect, w, h)));
    }
  }
}

TEST_CASE("dynamic_threshold: hand cases and lambda scaling") {
  const std::vector<double> a{0.2, 0.4, 0.6, 0.0};
  CHECK(dynamic_threshold(a, 0.05) == doctest::Approx(0.02).epsilon(1e-12));
  const std::vector<double> one{1.0};
  CHECK(dynamic_threshold(one, 0.05) == doctest::Approx(0.05));
  const std::vector<double> zeros{0.0, 0.0};
  CHECK(dynamic_threshold(zeros, 0.05) == 0.0);
  CHECK(dynamic_threshold(std::vector<double>{}, 0.05) == 0.0);
  CHECK(dynamic_threshold(a, 0.1) == doctest::Approx(2 * dynamic_threshold(a, 0.05)));
}

TEST_CASE("area_filter: strict comparison") {
  const std::vector<BBox> keep{{0, 0, 100, 100}};
  CHECK(area_filter(keep, 1000, 1000, 0.01).size() == 1);
  const std::vector<BBox> drop{{0, 0, 99, 99}};
  CHECK(area_filter(drop, 1000, 1000, 0.01).empty());
  const std::vector<BBox> tiny{{0, 0, 1, 1}, {5, 5, 6, 6}};
  CHECK(area_filter(tiny, 1000, 1000, 0.0).size() == 2);
  const std::vector<BBox> order{{0, 0, 200, 200}, {0, 0, 10, 10}, {0, 0, 150, 150}};
  const auto kept = area_filter(order, 1000, 1000, 0.01);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0] == order[0]);
  CHECK(kept[1] == order[2]);
}

TEST_CASE("RasterMask RLE round trip, first run counts zeros") {
  RasterMask m(4, 2);
  m.set(0, 0, true);
  m.set(1, 0, true);
  m.set(3, 1, true);
  const auto rle = m.to_rle();
  CHECK(rle == std::vector<std::int64_t>{0, 2, 5, 1});
  CHECK(RasterMask::from_rle(4, 2, rle) == m);
  CHECK(RasterMask(3, 3).to_rle() == std::vector<std::int64_t>{9});
  const std::vector<std::int64_t> bad{3, 3};
  CHECK_THROWS(RasterMask::from_rle(4, 2, bad));
}

TEST_CASE("require_box_within") {
  CHECK_NOTHROW(require_box_within({0, 0, 10, 10}, 10, 10));
  CHECK_THROWS_AS(require_box_within({0, 0, 11, 10}, 10, 10), std::invalid_argument);
  CHECK_THROWS_AS(require_box_within({5, 0, 5, 10}, 10, 10), std::invalid_argument);
}
