#pragma once

// JSONL manifest of training records, resumable execution and per-stage accounting.

#include <array>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "msforge/record.hpp"

namespace msforge {

/// Accounting stages. The first seven run per scene in this order; simdict is run-level.
inline constexpr std::array<std::string_view, 8> kStages = {
    "t2i_mismatch", "detection_sparse", "ovd_verify", "vlm_validation",
    "segmentation", "transform",        "cot_short",  "simdict"};
inline constexpr std::size_t kSceneStageCount = 7;

/// Index into kStages; throws std::invalid_argument for an unknown name.
std::size_t stage_index(std::string_view stage);

struct StageCounter {
  std::int64_t attempted = 0;
  std::int64_t passed = 0;
  std::int64_t failed = 0;

  friend bool operator==(const StageCounter&, const StageCounter&) = default;
};

/// How one scene ended: every scene stage before `failed_stage` passed. A run-level
/// outcome counts one attempt of the simdict stage instead.
struct SceneOutcome {
  std::string scene_id;
  std::optional<std::string> failed_stage;
  std::string message;
  bool run_level = false;

  friend bool operator==(const SceneOutcome&, const SceneOutcome&) = default;
};

nlohmann::json outcome_to_json(const SceneOutcome& o);
SceneOutcome outcome_from_json(const nlohmann::json& doc);

class PipelineStats {
 public:
  void record(std::string_view stage, bool passed);
  void record_scene(const SceneOutcome& outcome);
  void merge(const PipelineStats& other);

  const StageCounter& at(std::string_view stage) const { return counters_[stage_index(stage)]; }
  /// passed(cot_short) / attempted(t2i_mismatch); 0 before any scene was attempted.
  double retained_fraction() const;
  /// attempted = passed + failed for every stage.
  bool consistent() const;

  nlohmann::json to_json() const;
  static PipelineStats from_json(const nlohmann::json& doc);

  friend bool operator==(const PipelineStats&, const PipelineStats&) = default;

 private:
  std::array<StageCounter, kStages.size()> counters_{};
};

/// Reference failure rates (percent) for the four stages that have one.
struct ReferenceRate {
  std::string_view stage;
  std::string_view label;
  double percent;
};
inline constexpr std::array<ReferenceRate, 4> kReferenceRates = {{
    {"t2i_mismatch", "T2I semantic mismatch", 9.8},
    {"ovd_verify", "OVD miss / false detection", 14.6},
    {"vlm_validation", "VLM hallucinated validation", 6.3},
    {"segmentation", "Segmenter incorrect mask", 11.2},
}};
inline constexpr double kReferenceRetainedPercent = 68.1;

/// Retention if the reference rates hit independent stages (about 64.1%).
double independent_retention(std::span<const ReferenceRate> rates = kReferenceRates);

/// Per-stage table followed by the retained fraction and the reference rows.
std::string report_stats(const PipelineStats& stats);

struct CommitReceipt {
  std::string scene_id;
  std::uint64_t offset = 0;  // byte offset of the line start
  std::uint64_t length = 0;  // line length including the newline
};

/// Append-only JSONL writer. Each append validates the record and writes one full line
/// with a single locked append; a failed write is truncated away. Opening the file
/// drops a torn last line left by a crash.
class ManifestWriter {
 public:
  explicit ManifestWriter(std::filesystem::path path);
  ~ManifestWriter();
  ManifestWriter(const ManifestWriter&) = delete;
  ManifestWriter& operator=(const ManifestWriter&) = delete;

  CommitReceipt append(const TrainingRecord& record);
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::mutex mu_;
};

/// Appends JSON lines under a lock; used for the scene outcome log.
class JsonlAppender {
 public:
  explicit JsonlAppender(std::filesystem::path path);
  ~JsonlAppender();
  JsonlAppender(const JsonlAppender&) = delete;
  JsonlAppender& operator=(const JsonlAppender&) = delete;

  void append(const nlohmann::json& doc);

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::mutex mu_;
};

struct ManifestEntry {
  std::size_t line = 0;  // 1-based
  std::uint64_t offset = 0;
  TrainingRecord record;
};

/// Parses every line (schema only, see validate_record for invariants). Throws
/// FormatError naming the 1-based line on malformed JSON or schema errors. A missing
/// file reads as empty.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

/// Requested ids minus scenes that already have a committed base record, in request order.
std::vector<std::string> resume_plan(const std::filesystem::path& manifest, const std::vector<std::string>& requested);

/// Latest outcome per scene, in order of first appearance.
std::vector<SceneOutcome> read_outcomes(const std::filesystem::path& path);
PipelineStats stats_from_outcomes(const std::vector<SceneOutcome>& outcomes);

/// Writes the whole file through a temporary and a rename.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace msforge
