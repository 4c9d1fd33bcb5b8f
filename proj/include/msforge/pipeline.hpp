#pragma once

// End-to-end scene forging: one scene runs its stages sequentially, scenes run on a
// worker pool, and results are committed in scene order.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msforge/dataset_store.hpp"
#include "msforge/image_store.hpp"
#include "msforge/layout_planner.hpp"
#include "msforge/model_gateway.hpp"
#include "msforge/narrative.hpp"
#include "msforge/prompts.hpp"
#include "msforge/scene_forge.hpp"
#include "msforge/similarity_dict.hpp"

namespace msforge {

struct PipelineConfig {
  SceneParams scene;
  LayoutParams layout;
  NarrativeParams narrative;
  double with_ids_ratio = 0.5;
  int workers = 1;
  std::uint64_t global_seed = 42;
  int max_related = 3;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

std::string scene_id_for(std::size_t index);
std::uint64_t scene_seed(std::uint64_t global_seed, const std::string& scene_id);

struct SceneResult {
  SceneOutcome outcome;
  std::optional<TrainingRecord> record;
};

/// Runs every stage for one scene. Stage failures come back in the outcome; any other
/// exception propagates.
SceneResult forge_scene(ModelGateway& gateway, const PromptLibrary& prompts, const SimilarityDict& similar,
                        std::span<const std::string> vocabulary, const PipelineConfig& config,
                        const std::string& scene_id, ImageStore& store);

struct ForgeOptions {
  std::filesystem::path root;
  std::size_t scene_count = 0;
  /// Image sink; a DirectoryImageStore under `root` when null.
  ImageStore* store = nullptr;
  /// Polled between scenes; when set, in-flight scenes finish and the run drains.
  const std::atomic<bool>* stop = nullptr;
  /// Stop after this many scenes were committed (testing interrupted runs).
  std::optional<std::size_t> stop_after = std::nullopt;
  /// Called after each committed scene.
  std::function<void(const SceneResult&)> on_commit;
};

struct ForgeSummary {
  std::size_t requested = 0;
  std::size_t already_done = 0;
  std::size_t processed = 0;
  std::size_t committed_records = 0;
  bool interrupted = false;
  PipelineStats stats;  // whole dataset, including earlier runs
};

/// Files under options.root: manifest.jsonl, outcomes.jsonl, similarity_dict.json,
/// stats.json, stats.txt and one image directory per scene. Scenes that already have a
/// record or a recorded failure are skipped.
ForgeSummary run_forge(ModelGateway& gateway, const PromptLibrary& prompts, std::span<const std::string> vocabulary,
                       const PipelineConfig& config, const ForgeOptions& options);

inline constexpr const char* kManifestFile = "manifest.jsonl";
inline constexpr const char* kOutcomesFile = "outcomes.jsonl";
inline constexpr const char* kSimilarityFile = "similarity_dict.json";

}  // namespace msforge
