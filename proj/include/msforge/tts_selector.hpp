#pragma once

// Best-of-N plan selection: N planning branches, each realized into an image and scored
// by the cosine between the image and instruction embeddings.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msforge/image_store.hpp"
#include "msforge/layout_planner.hpp"
#include "msforge/model_gateway.hpp"
#include "msforge/narrative.hpp"

namespace msforge {

struct PlanCandidate {
  int branch_index = 0;
  CoTText cot;
  PatchGrid layout;
  std::optional<std::string> image;
  std::optional<double> score;
  bool failed = false;
  std::string error;
};

/// Instruction + subject images -> (CoT, layout).
class Planner {
 public:
  virtual ~Planner() = default;
  virtual std::pair<CoTText, PatchGrid> plan(const std::string& instruction, std::span<const Image> subjects,
                                             std::uint64_t seed) = 0;
};

/// (CoT, layout) -> image.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual Image realize(const CoTText& cot, const PatchGrid& layout, std::uint64_t seed) = 0;
};

/// Labels one random rectangle of cells per category; deterministic in the seed.
class MockPlanner final : public Planner {
 public:
  MockPlanner(std::vector<std::string> categories, int grid_side = 8);
  std::pair<CoTText, PatchGrid> plan(const std::string& instruction, std::span<const Image> subjects,
                                     std::uint64_t seed) override;

 private:
  std::vector<std::string> categories_;
  int grid_side_;
};

/// Image generation through the gateway, prompted with the CoT and the layout text.
class GatewayGenerator final : public Generator {
 public:
  GatewayGenerator(ModelGateway& gateway, int width, int height, std::string context = "select");
  Image realize(const CoTText& cot, const PatchGrid& layout, std::uint64_t seed) override;

 private:
  ModelGateway& gateway_;
  int width_;
  int height_;
  std::string context_;
};

std::uint64_t branch_seed(std::uint64_t seed, int branch) noexcept;

/// N unscored candidates; a branch whose planner throws is marked failed. Throws
/// std::invalid_argument for N < 1 and std::runtime_error when every branch failed.
std::vector<PlanCandidate> generate_branches(Planner& planner, const std::string& instruction,
                                             std::span<const Image> subjects, int n, std::uint64_t seed);

/// Realizes and scores every live candidate, up to `parallel` at a time. Generation or
/// embedding failures mark the branch failed.
void realize_and_score(std::vector<PlanCandidate>& candidates, Generator& generator, ModelGateway& gateway,
                       const std::string& instruction, ImageStore& store, const std::string& run_id,
                       std::uint64_t seed, int parallel = 4);

/// Position in `candidates` and copy of the highest-scoring live candidate; ties go to
/// the lowest branch index. Throws std::invalid_argument when none is scored.
std::pair<std::size_t, PlanCandidate> select_best(std::span<const PlanCandidate> candidates);

/// Best score among branches [0, n) for each n; absent when none of them is scored.
std::vector<std::pair<int, std::optional<double>>> best_score_curve(std::span<const PlanCandidate> candidates,
                                                                   std::span<const int> sizes);

}  // namespace msforge
