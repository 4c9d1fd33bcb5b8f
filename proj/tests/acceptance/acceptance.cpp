// One line per acceptance criterion; exit status is the number of failures.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "msforge/augmentor.hpp"
#include "msforge/cli.hpp"
#include "msforge/dataset_store.hpp"
#include "msforge/evalkit.hpp"
#include "msforge/geometry.hpp"
#include "msforge/image_store.hpp"
#include "msforge/layout_planner.hpp"
#include "msforge/mock_backend.hpp"
#include "msforge/narrative.hpp"
#include "msforge/pipeline.hpp"
#include "msforge/record.hpp"
#include "msforge/tts_selector.hpp"
#include "oracles.hpp"
#include "record_builder.hpp"
#include "scripted_backend.hpp"

using namespace msforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Records the first failed expectation.
struct Check {
  Outcome out;
  void expect(bool ok, const std::string& what) {
    if (!ok && out.pass) {
      out.pass = false;
      out.detail = what;
    }
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("msforge_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string vocab_path() { return (fs::path(MSFORGE_ASSETS_DIR) / "vocabulary.txt").string(); }

int cli_run(std::vector<std::string> args, std::string* err_out = nullptr) {
  args.insert(args.begin(), "msforge");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (err_out) *err_out = err.str();
  return code;
}

// 1
Outcome layout_round_trip() {
  Check c;
  std::mt19937_64 g(1001);
  const std::vector<std::string> pool = {"ship", "sports car", "desk cabinet", "flower", "piano", "chair", "a-b", "x"};
  for (int t = 0; t < 1000; ++t) {
    const int m = std::vector<int>{2, 4, 8}[g() % 3];
    std::vector<std::string> focus;
    for (const auto& p : pool)
      if (g() % 2) focus.push_back(p);
    std::shuffle(focus.begin(), focus.end(), g);
    auto grid = PatchGrid::empty(m, focus);
    for (auto& cell : grid.cells)
      for (const auto& f : focus)
        if (g() % 3 == 0) cell.insert(f);
    const auto text = serialize_layout(grid);
    c.expect(parse_layout(text, m) == grid, fmt::format("random grid {} did not round trip", t));
  }
  for (const char* name : {"layout_example1.txt", "layout_example2.txt", "layout_example3.txt"}) {
    const auto text = slurp(fs::path(MSFORGE_GOLDEN_DIR) / name);
    c.expect(!text.empty(), fmt::format("golden {} missing", name));
    c.expect(serialize_layout(parse_layout(text, 8)) == text, fmt::format("golden {} not byte-identical", name));
  }
  if (c.out.pass) c.out.detail = "1000 random grids, 3 golden blocks";
  return c.out;
}

std::vector<SubjectRecord> random_scene(std::mt19937_64& g, int w, int h) {
  static const std::vector<std::string> cats = {"cat", "dog", "lamp", "piano", "flower", "carpet"};
  std::vector<SubjectRecord> out;
  const int n = 1 + static_cast<int>(g() % 6);
  for (int i = 0; i < n; ++i) {
    const int x0 = static_cast<int>(g() % (w - 1)), y0 = static_cast<int>(g() % (h - 1));
    const int x1 = x0 + 1 + static_cast<int>(g() % (w - x0)), y1 = y0 + 1 + static_cast<int>(g() % (h - y0));
    SubjectRecord s;
    s.subject_id = i;
    s.category = cats[g() % cats.size()];
    s.box = {x0, y0, std::min(x1, w), std::min(y1, h)};
    if (g() % 2) {
      RasterMask m(w, h);
      for (int y = s.box.y_min; y < s.box.y_max; ++y)
        for (int x = s.box.x_min; x < s.box.x_max; ++x) m.set(x, y, (g() % 10) < 7);
      s.mask = std::move(m);
      s.region_mode = RegionMode::mask;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// 2
Outcome assignment_oracle() {
  Check c;
  std::mt19937_64 g(2002);
  for (int t = 0; t < 200; ++t) {
    const auto subs = random_scene(g, 64, 64);
    const auto grid = assign_patches(subs, 64, 64, {8, 0.05, ThresholdScope::per_subject});
    const auto expect = oracle::assign(subs, 64, 64, 8, 0.05);
    c.expect(grid.cells == expect, fmt::format("scene {} differs from the pixel oracle", t));
  }
  if (c.out.pass) c.out.detail = "200 scenes on 64x64, exact per-cell equality";
  return c.out;
}

// 3
Outcome dynamic_threshold_cases() {
  Check c;
  const std::vector<double> a = {0.2, 0.4, 0.6, 0.0};
  const std::vector<double> b = {1.0};
  c.expect(std::abs(dynamic_threshold(a, 0.05) - 0.02) < 1e-12, "[0.2,0.4,0.6,0] at 0.05 != 0.02");
  c.expect(std::abs(dynamic_threshold(b, 0.05) - 0.05) < 1e-12, "[1.0] at 0.05 != 0.05");
  c.expect(dynamic_threshold(std::vector<double>{}, 0.05) == 0.0, "empty input != 0");
  std::mt19937_64 g(3003);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> v(1 + g() % 20);
    for (auto& x : v) x = (g() % 4 == 0) ? 0.0 : u(g);
    const double lam = u(g), k = 0.1 + 5 * u(g);
    c.expect(std::abs(dynamic_threshold(v, lam) - oracle::tau(v, lam)) < 1e-12, "disagrees with the oracle");
    c.expect(std::abs(dynamic_threshold(v, k * lam) - k * dynamic_threshold(v, lam)) < 1e-12, "not equivariant in lambda");
  }
  if (c.out.pass) c.out.detail = "hand cases and 100 scaled inputs";
  return c.out;
}

// 4
Outcome region_mode_rule() {
  Check c;
  std::mt19937_64 g(4004);
  for (int t = 0; t < 100; ++t) {
    const auto cl = oracle::random_unit(g, 32), m = oracle::random_unit(g, 32), u = oracle::random_unit(g, 32);
    const bool expect = oracle::cosine(m, cl) > oracle::cosine(u, cl);
    c.expect((choose_region_mode({cl}, {m}, {u}) == RegionMode::mask) == expect, fmt::format("triple {} disagrees", t));
  }
  const auto v = oracle::random_unit(g, 32);
  c.expect(choose_region_mode({v}, {v}, {v}) == RegionMode::box, "exact tie did not fall back to box");
  if (c.out.pass) c.out.detail = "100 random triples plus exact tie";
  return c.out;
}

// 5
Outcome forge_determinism() {
  Check c;
  const auto dir = scratch("determinism");
  std::vector<std::string> manifests;
  for (const char* run : {"a", "b"}) {
    const auto root = dir / run;
    std::string err;
    const int code = cli_run({"--vocab", vocab_path(), "--out", root.string(), "--seed", "42", "--width", "128",
                              "--height", "128", "forge", "--scenes", "100"},
                             &err);
    c.expect(code == cli::kExitOk, fmt::format("forge run {} exited {}: {}", run, code, err));
    manifests.push_back(slurp(root / kManifestFile));
  }
  c.expect(!manifests[0].empty() && manifests[0] == manifests[1], "manifests differ between runs");
  const auto manifest = dir / "a" / kManifestFile;
  std::string err;
  c.expect(cli_run({"validate", "--manifest", manifest.string(), "--check-images"}, &err) == cli::kExitOk,
           "validate failed: " + err);
  std::size_t records = 0;
  for (const auto& e : read_manifest(manifest)) {
    ++records;
    const auto s = e.record.subjects.size();
    c.expect(s >= 1 && s <= 12, fmt::format("{} has {} subjects", e.record.scene_id, s));
    c.expect(e.record.params.delta == 0.01 && e.record.params.grid_side == 8 && e.record.params.lambda == 0.05 &&
                 e.record.params.n_max == 12,
             "record parameters differ from the defaults");
  }
  if (c.out.pass) c.out.detail = fmt::format("{} records identical across two runs, all valid", records);
  fs::remove_all(dir);
  return c.out;
}

// 6
Outcome failure_accounting() {
  Check c;
  const auto dir = scratch("accounting");
  MockOptions opts;
  opts.faults = {0.098, 0.146, 0.063, 0.112};
  auto gw = make_mock_gateway(opts);
  PromptLibrary prompts;
  const auto vocab = cli::read_vocabulary(vocab_path());
  PipelineConfig cfg;
  cfg.scene.image_width = 64;
  cfg.scene.image_height = 64;
  DiscardImageStore store;
  ForgeOptions fo;
  fo.root = dir;
  fo.scene_count = 10000;
  fo.store = &store;
  const auto summary = run_forge(*gw, prompts, vocab, cfg, fo);
  const auto& st = summary.stats;
  c.expect(st.consistent(), "attempted != passed + failed");
  for (auto stage : kStages) {
    const auto& k = st.at(stage);
    c.expect(k.attempted == k.passed + k.failed, fmt::format("identity broken at {}", stage));
  }
  c.expect(st.at("t2i_mismatch").attempted == 10000, "not every scene was attempted");
  double analytic = 1.0;
  for (double p : {0.098, 0.146, 0.063, 0.112}) analytic *= 1.0 - p;
  const double measured = st.retained_fraction();
  c.expect(std::abs(measured - analytic) <= 0.02,
           fmt::format("retention {:.2f}% vs analytic {:.2f}%", measured * 100, analytic * 100));
  const auto table = report_stats(st);
  c.expect(table.find("68.1") != std::string::npos, "reference retention missing from the report");
  if (c.out.pass) {
    c.out.detail = fmt::format("retention {:.2f}% vs analytic {:.2f}% (reference 68.1% shown)", measured * 100,
                               analytic * 100);
  }
  fs::remove_all(dir);
  return c.out;
}

// 7
Outcome augmentation() {
  Check c;
  std::mt19937_64 g(7007);
  for (int s = 2; s <= 12; ++s) {
    for (int rep = 0; rep < 10; ++rep) {
      // Distinct rows of 10px height, widths giving random areas above the floor.
      std::vector<BBox> boxes;
      std::vector<std::int64_t> areas;
      for (int i = 0; i < s; ++i) {
        const int w = 12 + static_cast<int>(g() % 6) * 4;
        boxes.push_back({0, i * 12, w, i * 12 + 10});
        areas.push_back(static_cast<std::int64_t>(w) * 10);
      }
      const auto base = testing_support::make_record(boxes, 160, 160);
      const auto derived = reduce_subjects(base);
      c.expect(derived.size() == static_cast<std::size_t>(std::max(s - 2, 0)), fmt::format("S={} wrong count", s));
      // Permutation oracle: original ids surviving each step.
      std::vector<int> alive(static_cast<std::size_t>(s));
      for (int i = 0; i < s; ++i) alive[static_cast<std::size_t>(i)] = i;
      for (std::size_t step = 0; step < derived.size(); ++step) {
        std::size_t victim = 0;
        for (std::size_t k = 1; k < alive.size(); ++k) {
          const auto ak = areas[static_cast<std::size_t>(alive[k])], av = areas[static_cast<std::size_t>(alive[victim])];
          if (ak < av || (ak == av && k > victim)) victim = k;
        }
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(victim));
        const auto& d = derived[step];
        c.expect(d.subjects.size() == static_cast<std::size_t>(s) - 1 - step, "subject counts not S-1..2");
        bool same = d.subjects.size() == alive.size();
        for (std::size_t k = 0; same && k < alive.size(); ++k) {
          same = d.subjects[k].category == fmt::format("thing{}", alive[k]) && d.subjects[k].subject_id == static_cast<int>(k);
        }
        c.expect(same, fmt::format("S={} step {} survivors differ from the permutation oracle", s, step + 1));
        const auto valid = subject_id_range(d.subjects.size());
        for (auto id : extract_ids(d.instruction.text)) c.expect(valid.contains(id), "derived instruction has a stale id");
      }
    }
  }
  if (c.out.pass) c.out.detail = "S = 2..12, 10 records each";
  return c.out;
}

// 8
Outcome best_of_n() {
  Check c;
  std::mt19937_64 g(8008);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 500; ++t) {
    std::vector<PlanCandidate> cands(16);
    std::vector<std::optional<double>> raw(16);
    for (int j = 0; j < 16; ++j) {
      cands[static_cast<std::size_t>(j)].branch_index = j;
      const double v = (t % 2) ? std::round(u(g) * 3) / 3 : u(g);
      cands[static_cast<std::size_t>(j)].score = v;
      cands[static_cast<std::size_t>(j)].image = "x";
      raw[static_cast<std::size_t>(j)] = v;
    }
    const auto [idx, best] = select_best(cands);
    c.expect(idx == *oracle::argmax(raw), fmt::format("vector {} argmax mismatch", t));
    c.expect(select_best(cands).first == idx, "tie-break not reproducible");
    const std::vector<int> sizes = {2, 4, 8, 16};
    const auto curve = best_score_curve(cands, sizes);
    for (std::size_t k = 1; k < curve.size(); ++k)
      c.expect(*curve[k].second >= *curve[k - 1].second, "best score decreased with N");
  }
  if (c.out.pass) c.out.detail = "500 vectors, N = 2,4,8,16";
  return c.out;
}

// 9
Outcome sanitizer() {
  Check c;
  std::mt19937_64 g(9009);
  const std::vector<std::string> filler = {"the", "cat", "sits", "near", "a", "lamp.", "and", "dog,", "Then", "red"};
  for (int t = 0; t < 500; ++t) {
    SubjectIdSet valid;
    for (long long k = 0; k < 6; ++k)
      if (g() % 2) valid.insert(k);
    std::vector<std::string> units, expected_units;
    const int n = 1 + static_cast<int>(g() % 25);
    for (int i = 0; i < n; ++i) {
      if (g() % 3 == 0) {
        const long long k = static_cast<long long>(g() % 9);
        const int form = static_cast<int>(g() % 3);
        const std::string unit = form == 0   ? fmt::format("from image {}", k)
                                 : form == 1 ? fmt::format("(image {})", k)
                                             : fmt::format("image {}", k);
        units.push_back(unit);
        if (valid.contains(k)) expected_units.push_back(unit);
      } else {
        units.push_back(filler[g() % filler.size()]);
        expected_units.push_back(units.back());
      }
    }
    auto join = [](const std::vector<std::string>& xs) {
      std::string s;
      for (const auto& x : xs) s += (s.empty() ? "" : " ") + x;
      return s;
    };
    const auto text = join(units);
    const auto out = sanitize_ids(text, valid);
    for (auto id : extract_ids(out)) c.expect(valid.contains(id), "invalid id survived: " + text);
    c.expect(sanitize_ids(out, valid) == out, "not idempotent: " + text);
    c.expect(out == join(expected_units), "characters outside matched phrases changed: " + text + " => " + out + " valid " + fmt::format("{}", std::vector<long long>(valid.begin(), valid.end())));
  }
  if (c.out.pass) c.out.detail = "500 planted texts";
  return c.out;
}

// 10
Outcome metrics() {
  Check c;
  auto embedder = [](std::map<int, std::vector<double>> by_red, std::map<std::string, std::vector<double>> by_text) {
    return std::make_shared<testing_support::HookedBackend>(
        [=](ModelRole role, const ModelRequest& r) -> std::optional<ModelResponse> {
          if (role != ModelRole::embedder) return std::nullopt;
          ModelResponse out;
          out.embedding = r.images.empty() ? by_text.at(r.prompt) : by_red.at(r.images.front().at(0, 0).r);
          return out;
        });
  };
  const std::vector<double> ga = {2, 1, 0}, r1 = {1, 1, 1}, r2 = {0, 3, 4}, tx = {1, 0, 2};
  auto a = testing_support::gateway_over(embedder({{1, ga}, {2, r1}, {3, r2}}, {{"scene", tx}}));
  auto b = testing_support::gateway_over(embedder({{1, r2}, {2, ga}, {3, tx}}, {}));
  const std::vector<Image> refs = {Image(2, 2, {2, 0, 0}), Image(2, 2, {3, 0, 0})};
  const auto s = score_sample(Image(2, 2, {1, 0, 0}), refs, "scene", *a, *b, 2);
  const double ia = (oracle::cosine(ga, r1) + oracle::cosine(ga, r2)) / 2;
  const double ib = (oracle::cosine(r2, ga) + oracle::cosine(r2, tx)) / 2;
  const double it = oracle::cosine(ga, tx);
  c.expect(std::abs(s.image_image_a - ia) < 1e-9, "image-image A cosine mismatch");
  c.expect(std::abs(s.image_image_b - ib) < 1e-9, "image-image B cosine mismatch");
  c.expect(std::abs(s.image_text - it) < 1e-9, "image-text cosine mismatch");

  auto ref = PatchGrid::empty(4, {"cat", "dog"});
  ref.cells[0] = {"cat"};
  ref.cells[1] = {"cat", "dog"};
  ref.cells[5] = {"dog"};
  auto pred = PatchGrid::empty(4, {"cat", "dog"});
  pred.cells[1] = {"cat"};
  pred.cells[2] = {"cat"};
  pred.cells[5] = {"dog"};
  // cat: {0,1} vs {1,2} -> 1/3; dog: {1,5} vs {5} -> 1/2.
  const auto la = layout_agreement(pred, ref);
  c.expect(std::abs(la.patch_iou - (1.0 / 3.0 + 0.5) / 2) < 1e-9, "patch IoU mismatch");
  c.expect(std::abs(la.category_coverage - 1.0) < 1e-9, "coverage mismatch");
  const auto same = layout_agreement(ref, ref);
  c.expect(same.patch_iou == 1.0 && same.category_coverage == 1.0, "identical grids not (1, 1)");

  std::mt19937_64 g(1010);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<SampleMetrics> xs;
    for (int i = 0; i < 200; ++i) xs.push_back({u(g), u(g), u(g), 1 + static_cast<int>(g() % 12)});
    const auto rep = sweep_by_subject_count(xs);
    double sa = 0, sb = 0, st = 0;
    std::size_t n = 0;
    for (const auto& [k, m] : rep.buckets) {
      if (!m.count) continue;
      sa += *m.image_image_a * static_cast<double>(m.count);
      sb += *m.image_image_b * static_cast<double>(m.count);
      st += *m.image_text * static_cast<double>(m.count);
      n += m.count;
    }
    c.expect(n == xs.size(), "bucket counts do not sum to the sample count");
    c.expect(std::abs(sa / static_cast<double>(n) - *rep.overall.image_image_a) < 1e-12 &&
                 std::abs(sb / static_cast<double>(n) - *rep.overall.image_image_b) < 1e-12 &&
                 std::abs(st / static_cast<double>(n) - *rep.overall.image_text) < 1e-12,
             "bucket means do not recombine to the overall mean");
  }
  if (c.out.pass) c.out.detail = "hand cosines, hand Jaccards, 50 random sweeps";
  return c.out;
}

// 11
Outcome resume() {
  Check c;
  const auto dir = scratch("resume");
  const std::vector<std::string> common = {"--vocab", vocab_path(), "--seed", "42", "--width", "64", "--height", "64"};
  auto args = [&](const fs::path& root, std::vector<std::string> tail) {
    auto a = common;
    a.push_back("--out");
    a.push_back(root.string());
    a.insert(a.end(), tail.begin(), tail.end());
    return a;
  };
  std::string err;
  c.expect(cli_run(args(dir / "full", {"forge", "--scenes", "100"}), &err) == cli::kExitOk, "full run failed: " + err);
  const int first = cli_run(args(dir / "part", {"forge", "--scenes", "100", "--stop-after", "40"}), &err);
  c.expect(first == cli::kExitFailure, "interrupted run did not report an interruption");
  const auto outcomes_after_first = read_outcomes(dir / "part" / kOutcomesFile);
  std::size_t scene_outcomes = 0;
  for (const auto& o : outcomes_after_first) scene_outcomes += !o.run_level;
  c.expect(scene_outcomes == 40, fmt::format("{} scenes after the interrupted run, expected 40", scene_outcomes));
  c.expect(cli_run(args(dir / "part", {"forge", "--scenes", "100"}), &err) == cli::kExitOk, "resume failed: " + err);
  const auto full = slurp(dir / "full" / kManifestFile), part = slurp(dir / "part" / kManifestFile);
  c.expect(!full.empty() && full == part, "resumed manifest differs from the uninterrupted one");
  c.expect(slurp(dir / "full" / "stats.json") == slurp(dir / "part" / "stats.json"), "stats differ after resume");
  if (c.out.pass) c.out.detail = "interrupted at 40/100, resumed manifest byte-identical";
  fs::remove_all(dir);
  return c.out;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"layout round trip", layout_round_trip},
      {"grid assignment oracle", assignment_oracle},
      {"dynamic threshold", dynamic_threshold_cases},
      {"mask-vs-box rule", region_mode_rule},
      {"end-to-end determinism", forge_determinism},
      {"failure accounting", failure_accounting},
      {"augmentation", augmentation},
      {"best-of-N selection", best_of_n},
      {"id sanitizer", sanitizer},
      {"metrics", metrics},
      {"resume", resume},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << fmt::format("[{}] criterion {}: {} - {} ({:.1f}s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                             o.detail, secs)
              << std::flush;
    failures += o.pass ? 0 : 1;
  }
  return failures;
}
