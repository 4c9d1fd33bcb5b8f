#include "msforge/tts_selector.hpp"

#include <algorithm>
#include <future>
#include <stdexcept>

#include <fmt/format.h>

#include "msforge/rng.hpp"

namespace msforge {

MockPlanner::MockPlanner(std::vector<std::string> categories, int grid_side)
    : categories_(std::move(categories)), grid_side_(grid_side) {
  if (grid_side_ < 1) throw std::invalid_argument("MockPlanner: grid side must be >= 1");
  for (const auto& c : categories_) {
    if (!is_valid_layout_label(c)) throw std::invalid_argument(fmt::format("MockPlanner: bad category '{}'", c));
  }
}

std::pair<CoTText, PatchGrid> MockPlanner::plan(const std::string& instruction, std::span<const Image> subjects,
                                                std::uint64_t seed) {
  Rng rng(derive_seed(seed, hash_string(instruction)));
  std::vector<std::string> focus;
  for (const auto& c : categories_) {
    if (std::find(focus.begin(), focus.end(), c) == focus.end()) focus.push_back(c);
  }
  auto grid = PatchGrid::empty(grid_side_, focus);
  const int m = grid_side_;
  std::string text = fmt::format("Plan for: {}\n", instruction);
  for (std::size_t k = 0; k < categories_.size(); ++k) {
    const int w = static_cast<int>(rng.uniform_int(1, std::max(1, m / 2)));
    const int h = static_cast<int>(rng.uniform_int(1, std::max(1, m / 2)));
    const int c0 = static_cast<int>(rng.uniform_int(0, m - w));
    const int r0 = static_cast<int>(rng.uniform_int(0, m - h));
    for (int r = r0; r < r0 + h; ++r) {
      for (int c = c0; c < c0 + w; ++c) grid.cells[static_cast<std::size_t>(r * m + c)].insert(categories_[k]);
    }
    const auto id = k < subjects.size() ? fmt::format(" from image {}", k) : std::string();
    text += fmt::format("The {}{} occupies rows {}-{} and columns {}-{}. ", categories_[k], id, r0, r0 + h - 1, c0,
                        c0 + w - 1);
  }
  CoTText cot;
  cot.text = std::move(text);
  cot.referenced_ids = extract_ids(cot.text);
  cot.word_count = count_words(cot.text);
  return {std::move(cot), std::move(grid)};
}

GatewayGenerator::GatewayGenerator(ModelGateway& gateway, int width, int height, std::string context)
    : gateway_(gateway), width_(width), height_(height), context_(std::move(context)) {
  if (width_ < 1 || height_ < 1) throw std::invalid_argument("GatewayGenerator: image size must be positive");
}

Image GatewayGenerator::realize(const CoTText& cot, const PatchGrid& layout, std::uint64_t seed) {
  return gateway_.generate_image({context_, "realize", seed}, cot.text + "\n" + serialize_layout(layout), width_,
                                 height_);
}

std::uint64_t branch_seed(std::uint64_t seed, int branch) noexcept {
  return derive_seed(seed, static_cast<std::uint64_t>(branch));
}

std::vector<PlanCandidate> generate_branches(Planner& planner, const std::string& instruction,
                                             std::span<const Image> subjects, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_branches: N must be >= 1");
  std::vector<PlanCandidate> out;
  for (int j = 0; j < n; ++j) {
    PlanCandidate c;
    c.branch_index = j;
    try {
      auto [cot, layout] = planner.plan(instruction, subjects, branch_seed(seed, j));
      c.cot = std::move(cot);
      c.layout = std::move(layout);
    } catch (const std::exception& e) {
      c.failed = true;
      c.error = e.what();
    }
    out.push_back(std::move(c));
  }
  if (std::all_of(out.begin(), out.end(), [](const PlanCandidate& c) { return c.failed; })) {
    throw std::runtime_error(fmt::format("all {} planning branches failed: {}", n, out.front().error));
  }
  return out;
}

void realize_and_score(std::vector<PlanCandidate>& candidates, Generator& generator, ModelGateway& gateway,
                       const std::string& instruction, ImageStore& store, const std::string& run_id,
                       std::uint64_t seed, int parallel) {
  if (parallel < 1) throw std::invalid_argument("realize_and_score: parallel must be >= 1");
  const auto text_vec = gateway.embed_text({run_id, "verifier_text", seed}, instruction);
  auto work = [&](PlanCandidate& c) {
    try {
      const auto img = generator.realize(c.cot, c.layout, branch_seed(seed, c.branch_index));
      c.image = store.put(run_id, fmt::format("branch_{:02d}", c.branch_index), img);
      c.score = cosine(gateway.embed_image({run_id, "verifier_image", seed}, img), text_vec);
    } catch (const std::exception& e) {
      c.failed = true;
      c.error = e.what();
      c.image.reset();
      c.score.reset();
    }
  };
  std::vector<PlanCandidate*> live;
  for (auto& c : candidates) {
    if (!c.failed) live.push_back(&c);
  }
  for (std::size_t start = 0; start < live.size(); start += static_cast<std::size_t>(parallel)) {
    std::vector<std::future<void>> batch;
    const auto end = std::min(live.size(), start + static_cast<std::size_t>(parallel));
    for (auto i = start; i < end; ++i) batch.push_back(std::async(std::launch::async, work, std::ref(*live[i])));
    for (auto& f : batch) f.get();
  }
}

std::pair<std::size_t, PlanCandidate> select_best(std::span<const PlanCandidate> candidates) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    if (c.failed || !c.score) continue;
    if (!best) {
      best = i;
      continue;
    }
    const auto& b = candidates[*best];
    if (*c.score > *b.score || (*c.score == *b.score && c.branch_index < b.branch_index)) best = i;
  }
  if (!best) throw std::invalid_argument("select_best: no scored candidate");
  return {*best, candidates[*best]};
}

std::vector<std::pair<int, std::optional<double>>> best_score_curve(std::span<const PlanCandidate> candidates,
                                                                   std::span<const int> sizes) {
  std::vector<std::pair<int, std::optional<double>>> out;
  for (int n : sizes) {
    std::optional<double> best;
    for (const auto& c : candidates) {
      if (c.branch_index < n && !c.failed && c.score && (!best || *c.score > *best)) best = c.score;
    }
    out.emplace_back(n, best);
  }
  return out;
}

}  // namespace msforge
