#include <doctest.h>

#include <stdexcept>

#include <filesystem>
#include <fstream>
#include <random>
#include <regex>
#include <sstream>

#include "msforge/errors.hpp"
#include "msforge/layout_planner.hpp"
#include "oracles.hpp"

using namespace msforge;

namespace {

std::string golden(const std::string& name) {
  std::ifstream in(std::filesystem::path(MSFORGE_GOLDEN_DIR) / name, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

EmbeddingVector ev(std::vector<double> v) { return EmbeddingVector{std::move(v)}; }

SubjectRecord box_subject(int id, std::string cat, BBox b) {
  SubjectRecord s;
  s.subject_id = id;
  s.category = std::move(cat);
  s.box = b;
  return s;
}

std::vector<SubjectRecord> random_subjects(std::mt19937_64& g, int w, int h) {
  static const std::vector<std::string> cats = {"cat", "dog", "lamp", "piano", "flower", "desk cabinet"};
  std::uniform_int_distribution<int> n_dist(1, 5), cat_dist(0, static_cast<int>(cats.size()) - 1);
  std::vector<SubjectRecord> out;
  const int n = n_dist(g);
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<int> xd(0, w - 2), yd(0, h - 2);
    const int x0 = xd(g), y0 = yd(g);
    std::uniform_int_distribution<int> wd(1, w - x0), hd(1, h - y0);
    auto s = box_subject(i, cats[static_cast<std::size_t>(cat_dist(g))], {x0, y0, x0 + wd(g), y0 + hd(g)});
    if (g() % 2) {
      // A blobby mask inside the box.
      RasterMask m(w, h);
      std::bernoulli_distribution on(0.6);
      for (int y = s.box.y_min; y < s.box.y_max; ++y)
        for (int x = s.box.x_min; x < s.box.x_max; ++x) m.set(x, y, on(g));
      s.mask = std::move(m);
      s.region_mode = RegionMode::mask;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

TEST_CASE("choose_region_mode") {
  CHECK(choose_region_mode(ev({1, 0}), ev({1, 0}), ev({0, 1})) == RegionMode::mask);
  CHECK(choose_region_mode(ev({1, 0}), ev({0, 1}), ev({1, 0})) == RegionMode::box);
  CHECK(choose_region_mode(ev({1, 0}), ev({0.6, 0.8}), ev({0.6, -0.8})) == RegionMode::box);
  CHECK_THROWS_AS(choose_region_mode(ev({1, 0}), ev({1, 0, 0}), ev({0, 1})), std::invalid_argument);

  std::mt19937_64 g(11);
  for (int i = 0; i < 500; ++i) {
    const auto c = oracle::random_unit(g, 16), m = oracle::random_unit(g, 16), u = oracle::random_unit(g, 16);
    const bool expect_mask = oracle::cosine(m, c) > oracle::cosine(u, c);
    CHECK((choose_region_mode(ev(c), ev(m), ev(u)) == RegionMode::mask) == expect_mask);
  }
}

TEST_CASE("a subject covering exactly one cell labels only that cell") {
  // 64x64 with M=8 gives 8x8 cells; cell 5 is row 0, column 5.
  const std::vector<SubjectRecord> subs = {box_subject(0, "lamp", {40, 0, 48, 8})};
  const auto grid = assign_patches(subs, 64, 64, {8, 0.05, ThresholdScope::per_subject});
  for (int i = 0; i < 64; ++i) CHECK(grid.cells[static_cast<std::size_t>(i)].empty() == (i != 5));
  CHECK(grid.cells[5] == std::set<std::string>{"lamp"});
  CHECK(grid.focus_classes == std::vector<std::string>{"lamp"});
}

TEST_CASE("overlapping subjects share a cell") {
  // Cell 38 of an 8x8 grid on 64x64: row 4, column 6 -> [48,56) x [32,40).
  const std::vector<SubjectRecord> subs = {box_subject(0, "piano", {44, 30, 60, 42}),
                                           box_subject(1, "flower", {46, 31, 58, 41})};
  const auto grid = assign_patches(subs, 64, 64, {8, 0.05, ThresholdScope::per_subject});
  CHECK(grid.cells[38] == std::set<std::string>{"flower", "piano"});
  CHECK(serialize_layout(grid).find("[38] flower, piano [") != std::string::npos);
}

TEST_CASE("duplicate categories collapse in the header") {
  const std::vector<SubjectRecord> subs = {box_subject(0, "carpet", {0, 0, 10, 10}),
                                           box_subject(1, "chair", {20, 20, 30, 30}),
                                           box_subject(2, "carpet", {40, 40, 60, 60})};
  const auto grid = assign_patches(subs, 64, 64, {8, 0.05, ThresholdScope::per_subject});
  CHECK(grid.focus_classes == std::vector<std::string>{"carpet", "chair"});
}

TEST_CASE("assignment matches the pixel brute-force oracle") {
  std::mt19937_64 g(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const int w = 64, h = 64;
    const int m = (trial % 3 == 0) ? 8 : (trial % 3 == 1 ? 5 : 7);
    const double lambda = (trial % 4) * 0.4;
    const bool pooled = trial % 2 == 1;
    const auto subs = random_subjects(g, w, h);
    const auto grid =
        assign_patches(subs, w, h, {m, lambda, pooled ? ThresholdScope::pooled : ThresholdScope::per_subject});
    const auto expect = oracle::assign(subs, w, h, m, lambda, pooled);
    REQUIRE(grid.cells.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK_MESSAGE(grid.cells[i] == expect[i], "trial ", trial, " cell ", i);
  }
}

TEST_CASE("shrinking lambda never removes labels") {
  std::mt19937_64 g(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto subs = random_subjects(g, 64, 64);
    const auto hi = assign_patches(subs, 64, 64, {8, 1.2, ThresholdScope::per_subject});
    const auto lo = assign_patches(subs, 64, 64, {8, 0.3, ThresholdScope::per_subject});
    for (std::size_t i = 0; i < hi.cells.size(); ++i)
      for (const auto& l : hi.cells[i]) CHECK(lo.cells[i].count(l) == 1);
  }
}

TEST_CASE("every labeled cell clears its subject's threshold") {
  std::mt19937_64 g(6);
  for (int trial = 0; trial < 30; ++trial) {
    const auto subs = random_subjects(g, 64, 64);
    const LayoutParams p{8, 0.8, ThresholdScope::per_subject};
    const auto grid = assign_patches(subs, 64, 64, p);
    const auto tiles = tile_image(64, 64, 8);
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
      for (const auto& label : grid.cells[i]) {
        bool some = false;
        for (const auto& s : subs) {
          if (s.category != label) continue;
          const auto ious = region_patch_ious(s.region(), tiles);
          if (ious[i] > dynamic_threshold(ious, p.lambda)) some = true;
        }
        CHECK(some);
      }
    }
  }
}

TEST_CASE("empty grid serializes to all others") {
  const auto text = serialize_layout(PatchGrid::empty(8));
  std::regex entry(R"(\[(\d+)\] others)");
  CHECK(std::distance(std::sregex_iterator(text.begin(), text.end(), entry), std::sregex_iterator()) == 64);
  CHECK(text.rfind("Here is the segmentation map focusing on :", 0) == 0);
  CHECK(text.back() == '.');
}

TEST_CASE("header block with a frame in cell 2") {
  auto grid = PatchGrid::empty(8, {"flower", "frame", "pineapple", "plate", "potted plant", "lamp", "couch"});
  grid.cells[2] = {"frame"};
  const auto text = serialize_layout(grid);
  CHECK(text.rfind("Here is the segmentation map focusing on flower, frame, pineapple, plate, potted plant, lamp, "
                   "couch:\n<patch>[0] others [1] others [2] frame [3] others",
                   0) == 0);
  const auto back = parse_layout(text);
  CHECK(back.side == 8);
  CHECK(back.focus_classes.size() == 7);
  CHECK(back.cells[2] == std::set<std::string>{"frame"});
  CHECK(text.ends_with("[63] others</patch>\n Now, generate an image."));
}

TEST_CASE("golden layout blocks round trip byte for byte") {
  for (const char* name : {"layout_example1.txt", "layout_example2.txt", "layout_example3.txt"}) {
    const auto text = golden(name);
    REQUIRE_MESSAGE(!text.empty(), name);
    const auto grid = parse_layout(text, 8);
    CHECK(grid.side == 8);
    CHECK_MESSAGE(serialize_layout(grid) == text, name);
  }
  const auto ex2 = parse_layout(golden("layout_example2.txt"));
  CHECK(ex2.focus_classes == std::vector<std::string>{"ship", "sports car"});
  CHECK(ex2.cells[17] == std::set<std::string>{"ship"});
  CHECK(ex2.cells[18] == std::set<std::string>{"ship"});
  CHECK(ex2.cells[33] == std::set<std::string>{"sports car"});
  const auto s2 = serialize_layout(ex2);
  CHECK(s2.find("[17] ship [18] ship") != std::string::npos);
  CHECK(s2.find("[33] sports car") != std::string::npos);
}

TEST_CASE("random grids round trip") {
  std::mt19937_64 g(77);
  const std::vector<std::string> pool = {"a", "b c", "desk cabinet", "z", "sneakers leather shoes", "x-ray"};
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 1 + static_cast<int>(g() % 9);
    std::vector<std::string> focus;
    for (const auto& p : pool)
      if (g() % 2) focus.push_back(p);
    std::shuffle(focus.begin(), focus.end(), g);
    auto grid = PatchGrid::empty(m, focus);
    for (auto& c : grid.cells)
      for (const auto& f : focus)
        if (g() % 4 == 0) c.insert(f);
    const auto text = serialize_layout(grid);
    const auto back = parse_layout(text, m);
    CHECK(back == grid);
    CHECK(serialize_layout(back) == text);
  }
}

TEST_CASE("parse is whitespace tolerant") {
  const std::string loose =
      "Here is the segmentation map focusing \non  a, b:  <patch> [0]\nothers [1] a [2] a,   b [3] others </patch>\nNow, "
      "generate an image.";
  const auto grid = parse_layout(loose);
  CHECK(grid.side == 2);
  CHECK(grid.cells[2] == std::set<std::string>{"a", "b"});
}

TEST_CASE("parse errors") {
  CHECK_THROWS_AS(parse_layout("Here is the segmentation map focusing on a:\n<patch>[0] others</patch>\n Now, generate an image.", 8),
                  FormatError);
  CHECK_THROWS_AS(parse_layout("Here is the segmentation map focusing on a:\n<patch>[0] others [1] a [2] a</patch>\n Now, "
                               "generate an image."),
                  FormatError);
  CHECK_THROWS_AS(parse_layout("Here is the segmentation map focusing on a:\n<patch>[0] dog</patch>\n Now, generate an image."),
                  FormatError);
  CHECK_THROWS_AS(parse_layout("Here is the segmentation map focusing on a:\n<patch>[0] a\n Now, generate an image."),
                  FormatError);
  CHECK_THROWS_AS(parse_layout("Here is the segmentation map focusing on a:\n<patch>[1] a</patch>\n Now, generate an image."),
                  FormatError);
  CHECK_THROWS_AS(parse_layout("Here is the segmentation map focusing on a:\n<patch>[0] a, others</patch>\n Now, generate an "
                               "image."),
                  FormatError);
  CHECK_THROWS_AS(parse_layout(""), FormatError);
}

TEST_CASE("label validity") {
  CHECK(is_valid_layout_label("desk cabinet"));
  CHECK_FALSE(is_valid_layout_label("others"));
  CHECK_FALSE(is_valid_layout_label(""));
  CHECK_FALSE(is_valid_layout_label("a, b"));
  CHECK_FALSE(is_valid_layout_label("a]"));
}
