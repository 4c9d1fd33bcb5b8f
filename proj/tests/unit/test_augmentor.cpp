#include <doctest.h>

#include <stdexcept>
#include <random>

#include <nlohmann/json.hpp>

#include "msforge/augmentor.hpp"
#include "msforge/errors.hpp"
#include "msforge/similarity_dict.hpp"
#include "record_builder.hpp"
#include "scripted_backend.hpp"

using namespace msforge;
using testing_support::make_record;

namespace {

// Boxes with the given areas laid out along a row; each is w x 10.
std::vector<BBox> boxes_with_areas(const std::vector<int>& areas, int row_w = 100) {
  std::vector<BBox> out;
  int x = 0;
  int y = 0;
  for (int a : areas) {
    const int w = a / 10;
    if (x + w > row_w) {
      x = 0;
      y += 12;
    }
    out.push_back({x, y, x + w, y + 10});
    x += w + 1;
  }
  return out;
}

}  // namespace

TEST_CASE("remap_ids examples") {
  CHECK(remap_ids("A from image 0. B from image 2.", {{0, 0}, {2, 1}}, {1}) == "A from image 0. B from image 1.");
  CHECK(remap_ids("A from image 0. B from image 1.", {{0, 0}, {1, 1}}, {}) == "A from image 0. B from image 1.");
  CHECK(remap_ids("A from image 0 and B from image 1 meet.", {{0, 0}}, {1}) == "A from image 0 and B meet.");
  CHECK(remap_ids("Gone from image 1. Stay from image 2.", {{0, 0}, {2, 1}}, {1}) == "Stay from image 1.");
  CHECK(remap_ids("No ids here. Gone from image 1.", {{0, 0}}, {1}) == "No ids here.");
  // Renaming is simultaneous, not chained.
  CHECK(remap_ids("X image 1 Y image 2.", {{1, 2}, {2, 1}}, {}) == "X image 2 Y image 1.");
}

TEST_CASE("smallest_subject breaks ties toward the higher id") {
  const auto r = make_record(boxes_with_areas({500, 200, 300, 200}));
  CHECK(smallest_subject(r.subjects) == 3);
}

TEST_CASE("reduce_subjects hand example") {
  const auto base = make_record(boxes_with_areas({500, 300, 200, 100}));
  validate_record(base);
  const auto derived = reduce_subjects(base);
  REQUIRE(derived.size() == 2);
  CHECK(derived[0].subjects.size() == 3);
  CHECK(derived[1].subjects.size() == 2);
  // Step 1 drops old id 3; step 2 drops old id 2. Survivors are old 0 and 1.
  CHECK(derived[0].subjects[2].category == "thing2");
  CHECK(derived[1].subjects[0].category == "thing0");
  CHECK(derived[1].subjects[1].category == "thing1");
  CHECK(derived[1].instruction.text == "The thing0 from image 0 sits here. The thing1 from image 1 sits here.");
  CHECK(derived[0].scene_id == "scene_000001-d1");
  CHECK(derived[1].scene_id == "scene_000001-d2");
  CHECK(derived[1].provenance.parent_scene_id == "scene_000001");
  CHECK(derived[1].provenance.derivation_step == 2);
  for (const auto& d : derived) CHECK_NOTHROW(validate_record(d));
}

TEST_CASE("reduce_subjects boundaries") {
  CHECK(reduce_subjects(make_record(boxes_with_areas({500, 300}))).empty());
  CHECK(reduce_subjects(make_record(boxes_with_areas({500}))).empty());
  std::vector<int> twelve;
  for (int i = 0; i < 12; ++i) twelve.push_back(400 + 37 * ((i * 5) % 12));
  const auto d = reduce_subjects(make_record(boxes_with_areas(twelve, 200), 200, 200));
  CHECK(d.size() == 10);
}

TEST_CASE("reduce_subjects properties on random records") {
  std::mt19937_64 g(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int s = 1 + static_cast<int>(g() % 12);
    std::vector<int> areas;
    for (int i = 0; i < s; ++i) areas.push_back(400 + static_cast<int>(g() % 8) * 50);
    const auto base = make_record(boxes_with_areas(areas, 200), 200, 200);
    const auto derived = reduce_subjects(base);
    REQUIRE(derived.size() == static_cast<std::size_t>(std::max(s - 2, 0)));
    std::size_t expect = static_cast<std::size_t>(s) - 1;
    const auto* prev = &base;
    for (const auto& d : derived) {
      CHECK(d.subjects.size() == expect--);
      CHECK(d.subject_images.size() == d.subjects.size());
      CHECK_NOTHROW(validate_record(d));
      // Relative order of survivors is preserved: categories are a subsequence of the parent's.
      std::size_t j = 0;
      for (const auto& sub : prev->subjects)
        if (j < d.subjects.size() && sub.category == d.subjects[j].category) ++j;
      CHECK(j == d.subjects.size());
      // The removed one is the smallest of the parent.
      const int victim = smallest_subject(prev->subjects);
      for (const auto& sub : d.subjects) CHECK(sub.category != prev->subjects[static_cast<std::size_t>(victim)].category);
      prev = &d;
    }
  }
}

TEST_CASE("fallback instruction when every sentence is removed") {
  auto base = make_record(boxes_with_areas({500, 400, 100}));
  base.instruction.text = "Only the thing2 from image 2 matters.";
  base.instruction.referenced_ids = {2};
  const auto d = reduce_subjects(base);
  REQUIRE(d.size() == 1);
  CHECK(d[0].instruction.template_id == "derived_fallback");
  CHECK(d[0].instruction.with_ids);
  CHECK(d[0].instruction.referenced_ids == SubjectIdSet{0, 1});
  CHECK_NOTHROW(validate_record(d[0]));
}

TEST_CASE("similarity dictionary filtering") {
  const std::vector<std::string> vocab = {"Chair", "Stool", "Bench", "Couch", "Bottle", "Cup", "Glass", "Jar"};
  CHECK(parse_related_categories("Stool, Bench, Couch", "Chair", vocab) ==
        std::vector<std::string>{"Stool", "Bench", "Couch"});
  CHECK(parse_related_categories("cup\nglass, jar, Bottle, unicorn, cup", "Bottle", vocab) ==
        std::vector<std::string>{"Cup", "Glass", "Jar"});

  SimilarityDict d;
  d.set("Chair", {"Chair"});
  CHECK_THROWS_AS(d.validate(vocab), std::invalid_argument);
  d.set("Chair", {"Unicorn"});
  CHECK_THROWS_AS(d.validate(vocab), std::invalid_argument);
  d.set("Chair", {"Stool"});
  CHECK_NOTHROW(d.validate(vocab));
  CHECK(SimilarityDict::from_json(d.to_json()).entries() == d.entries());
}

TEST_CASE("build_similarity_dict with the mock") {
  const std::vector<std::string> vocab = {"chair", "stool", "bench", "couch", "bottle", "cup", "glass", "jar"};
  auto gw = make_mock_gateway();
  PromptLibrary prompts;
  const auto a = build_similarity_dict(*gw, prompts, vocab, 9);
  const auto b = build_similarity_dict(*gw, prompts, vocab, 9);
  CHECK(a.entries() == b.entries());
  CHECK_NOTHROW(a.validate(vocab));
  for (const auto& [k, v] : a.entries()) CHECK(v.size() <= 3);

  auto failing = std::make_shared<testing_support::HookedBackend>(
      [](ModelRole, const ModelRequest&) -> std::optional<ModelResponse> { throw TransportError("text_gen", "run", "down"); });
  auto gw2 = testing_support::gateway_over(failing);
  try {
    build_similarity_dict(*gw2, prompts, vocab, 9);
    FAIL("expected StageFailure");
  } catch (const StageFailure& e) {
    CHECK(e.stage() == "simdict");
  }
}
