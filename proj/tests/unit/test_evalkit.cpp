#include <doctest.h>

#include <stdexcept>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include <nlohmann/json.hpp>

#include "msforge/errors.hpp"
#include "msforge/evalkit.hpp"
#include "msforge/layout_planner.hpp"
#include "scripted_backend.hpp"

using namespace msforge;
using testing_support::HookedBackend;
using testing_support::gateway_over;

namespace {

// Embedder keyed on the red channel of the first pixel, or on the prompt text.
std::shared_ptr<HookedBackend> table_embedder(std::map<int, std::vector<double>> by_red,
                                              std::map<std::string, std::vector<double>> by_text) {
  return std::make_shared<HookedBackend>([=](ModelRole role, const ModelRequest& r) -> std::optional<ModelResponse> {
    if (role != ModelRole::embedder) return std::nullopt;
    ModelResponse out;
    if (!r.images.empty()) {
      out.embedding = by_red.at(r.images.front().at(0, 0).r);
    } else {
      out.embedding = by_text.at(r.prompt);
    }
    return out;
  });
}

Image solid(std::uint8_t red) { return Image(4, 4, {red, 0, 0}); }

SampleMetrics m(double a, double b, double t, int s) { return {a, b, t, s}; }

PatchGrid grid(int side, std::vector<std::pair<int, std::string>> labels) {
  std::vector<std::string> focus;
  for (const auto& [i, l] : labels)
    if (std::find(focus.begin(), focus.end(), l) == focus.end()) focus.push_back(l);
  auto g = PatchGrid::empty(side, focus);
  for (const auto& [i, l] : labels) g.cells[static_cast<std::size_t>(i)].insert(l);
  return g;
}

}  // namespace

TEST_CASE("score_sample against hand-computed cosines") {
  auto a = gateway_over(table_embedder({{1, {1, 0, 0}}, {2, {0.6, 0.8, 0}}, {3, {0, 1, 0}}}, {{"a red scene", {0, 0.6, 0.8}}}));
  auto b = gateway_over(table_embedder({{1, {0, 0, 1}}, {2, {0, 0, 1}}, {3, {1, 0, 0}}}, {}));
  const std::vector<Image> refs = {solid(2), solid(3)};
  const auto s = score_sample(solid(1), refs, "a red scene", *a, *b, 2);
  CHECK(s.image_image_a == doctest::Approx((0.6 + 0.0) / 2).epsilon(1e-9));
  CHECK(s.image_image_b == doctest::Approx((1.0 + 0.0) / 2).epsilon(1e-9));
  CHECK(s.image_text == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(s.subject_count == 2);

  const std::vector<Image> one = {solid(2)};
  const auto single = score_sample(solid(3), one, "a red scene", *a, *b, 1);
  CHECK(single.image_image_a == doctest::Approx(0.8).epsilon(1e-9));
  CHECK(single.image_text == doctest::Approx(0.6).epsilon(1e-9));
  CHECK_THROWS_AS(score_sample(solid(1), {}, "x", *a, *b), std::invalid_argument);
}

TEST_CASE("identical images score 1 under the mock") {
  auto a = make_mock_gateway();
  MockOptions ob;
  ob.embedding_salt = 1;
  auto b = make_mock_gateway(ob);
  Image img(16, 16, {9, 80, 200});
  const std::vector<Image> refs = {img};
  const auto s = score_sample(img, refs, "something", *a, *b, 1);
  CHECK(s.image_image_a == doctest::Approx(1.0));
  CHECK(s.image_image_b == doctest::Approx(1.0));
  CHECK(s.image_text >= -1.0);
  CHECK(s.image_text <= 1.0);
}

TEST_CASE("aggregation, buckets and order independence") {
  std::vector<SampleMetrics> xs;
  std::mt19937_64 g(8);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 300; ++i) xs.push_back(m(u(g), u(g), u(g), 1 + static_cast<int>(g() % 11)));
  const auto rep = sweep_by_subject_count(xs);
  REQUIRE(rep.buckets.size() == 12);
  CHECK(rep.buckets.begin()->first == 1);
  CHECK(rep.buckets.rbegin()->first == 12);
  CHECK(rep.buckets.at(12).count == 0);
  CHECK_FALSE(rep.buckets.at(12).image_image_a.has_value());
  double weighted = 0;
  std::size_t n = 0;
  for (const auto& [k, b] : rep.buckets) {
    if (!b.count) continue;
    weighted += *b.image_image_a * static_cast<double>(b.count);
    n += b.count;
  }
  CHECK(n == xs.size());
  CHECK(weighted / static_cast<double>(n) == doctest::Approx(*rep.overall.image_image_a).epsilon(1e-12));

  auto shuffled = xs;
  std::shuffle(shuffled.begin(), shuffled.end(), g);
  const auto rep2 = sweep_by_subject_count(shuffled);
  CHECK(*rep2.overall.image_image_a == *rep.overall.image_image_a);
  CHECK(*rep2.buckets.at(3).image_text == *rep.buckets.at(3).image_text);

  std::vector<SampleMetrics> uniform;
  for (int s = 1; s <= 12; ++s) uniform.push_back(m(0.5, 0.25, 0.125, s));
  for (const auto& [k, b] : sweep_by_subject_count(uniform).buckets) CHECK(*b.image_image_a == 0.5);

  const std::vector<SampleMetrics> bad = {m(0, 0, 0, 13)};
  CHECK_THROWS_AS(sweep_by_subject_count(bad), std::invalid_argument);
  CHECK(aggregate({}).count == 0);
}

TEST_CASE("report carries the reference values") {
  const std::vector<SampleMetrics> xs = {m(0.8, 0.6, 0.3, 2)};
  const auto table = report_table(sweep_by_subject_count(xs));
  for (const char* s : {"0.622", "0.812", "0.322"}) CHECK(table.find(s) != std::string::npos);
  const auto j = report_to_json(sweep_by_subject_count(xs));
  CHECK(j.dump().find("buckets") != std::string::npos);
}

TEST_CASE("layout agreement") {
  const auto ref = grid(4, {{0, "cat"}, {1, "cat"}, {5, "dog"}});
  auto r = layout_agreement(ref, ref);
  CHECK(r.patch_iou == 1.0);
  CHECK(r.category_coverage == 1.0);

  r = layout_agreement(PatchGrid::empty(4), ref);
  CHECK(r.patch_iou == 0.0);
  CHECK(r.category_coverage == 0.0);

  // cat: {0,1} vs {1,2} -> 1/3; dog: {5} vs {} -> 0; lamp: {} vs {9} -> 0.
  const auto pred = grid(4, {{1, "cat"}, {2, "cat"}, {9, "lamp"}});
  r = layout_agreement(pred, ref);
  CHECK(r.patch_iou == doctest::Approx((1.0 / 3.0) / 3.0));
  CHECK(r.category_coverage == doctest::Approx(0.5));
  const auto swapped = layout_agreement(ref, pred);
  CHECK(swapped.patch_iou == doctest::Approx(r.patch_iou));
  CHECK(swapped.category_coverage == doctest::Approx(0.5));

  CHECK_THROWS_AS(layout_agreement(PatchGrid::empty(4), PatchGrid::empty(8)), std::invalid_argument);
  CHECK(kReferencePatchIou == 0.47);
  CHECK(kReferenceCoverage == 0.76);
}

TEST_CASE("patch IoU is symmetric on random grids") {
  std::mt19937_64 g(12);
  const std::vector<std::string> labels = {"a", "b", "c"};
  for (int t = 0; t < 300; ++t) {
    std::vector<std::pair<int, std::string>> x, y;
    for (int i = 0; i < 16; ++i) {
      if (g() % 3 == 0) x.push_back({i, labels[g() % 3]});
      if (g() % 3 == 0) y.push_back({i, labels[g() % 3]});
    }
    CHECK(layout_agreement(grid(4, x), grid(4, y)).patch_iou ==
          doctest::Approx(layout_agreement(grid(4, y), grid(4, x)).patch_iou));
  }
}

TEST_CASE("evaluation manifest and skipped items") {
  const auto dir = std::filesystem::temp_directory_path() / "msforge_eval_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  DirectoryImageStore store(dir);
  store.put("s", "gen", Image(8, 8, {1, 2, 3}));
  store.put("s", "ref", Image(8, 8, {1, 2, 3}));
  {
    std::ofstream out(dir / "eval.jsonl");
    out << R"({"generated": "s/gen.png", "references": ["s/ref.png"], "instruction": "a cup", "subject_count": 1})" << "\n";
    out << R"({"generated": "s/missing.png", "references": ["s/ref.png"], "instruction": "a cup", "subject_count": 2})" << "\n";
  }
  const auto items = read_eval_manifest(dir / "eval.jsonl");
  REQUIRE(items.size() == 2);
  auto a = make_mock_gateway();
  auto b = make_mock_gateway();
  const auto rep = evaluate(items, store, *a, *b);
  CHECK(rep.overall.count == 1);
  CHECK(rep.skipped == 1);
  CHECK(*rep.overall.image_image_a == doctest::Approx(1.0));

  {
    std::ofstream out(dir / "bad.jsonl");
    out << R"({"generated": "x"})" << "\n";
  }
  try {
    read_eval_manifest(dir / "bad.jsonl");
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}
