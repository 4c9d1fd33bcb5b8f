#pragma once

// Embedding-similarity metrics, per-subject-count sweeps and layout agreement.
//
// Embedder A plays the CLIP role (image-image and image-text); embedder B plays the
// DINO role (image-image only).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "msforge/image_store.hpp"
#include "msforge/layout_planner.hpp"
#include "msforge/model_gateway.hpp"

namespace msforge {

struct SampleMetrics {
  double image_image_a = 0.0;  // CLIP-I analogue
  double image_image_b = 0.0;  // DINO analogue
  double image_text = 0.0;     // CLIP-T analogue
  int subject_count = 0;
};

/// Cosines of `generated` against each reference (averaged) and against the instruction.
/// Throws std::invalid_argument without references; gateway errors propagate.
SampleMetrics score_sample(const Image& generated, std::span<const Image> references, const std::string& instruction,
                           ModelGateway& embedder_a, ModelGateway& embedder_b, int subject_count = 0,
                           std::uint64_t seed = 0);

struct MetricMeans {
  std::size_t count = 0;
  std::optional<double> image_image_a;
  std::optional<double> image_image_b;
  std::optional<double> image_text;
};

/// Means of each metric; order-independent (values are summed in sorted order).
MetricMeans aggregate(std::span<const SampleMetrics> samples);

inline constexpr int kMinBucket = 1;
inline constexpr int kMaxBucket = 12;

struct MetricReport {
  MetricMeans overall;
  std::map<int, MetricMeans> buckets;  // exactly kMinBucket..kMaxBucket
  std::size_t skipped = 0;
};

/// Throws std::invalid_argument for a subject count outside 1..12.
MetricReport sweep_by_subject_count(std::span<const SampleMetrics> samples);

struct ReferenceMetrics {
  double dino = 0.622;
  double clip_i = 0.812;
  double clip_t = 0.322;
};

nlohmann::json report_to_json(const MetricReport& report);
/// Overall row, the reference row and one row per bucket.
std::string report_table(const MetricReport& report, const ReferenceMetrics& reference = {});

struct LayoutAgreement {
  double patch_iou = 0.0;
  double category_coverage = 0.0;
};

/// patch_iou: mean over labels present in either grid of the Jaccard index of the
/// labelled cell sets (1 when neither grid has a label). category_coverage: fraction of
/// the reference labels that the prediction uses (1 when the reference has none).
/// Throws std::invalid_argument when the grid sides differ.
LayoutAgreement layout_agreement(const PatchGrid& predicted, const PatchGrid& reference);

inline constexpr double kReferencePatchIou = 0.47;
inline constexpr double kReferenceCoverage = 0.76;

/// One line of an evaluation manifest.
struct EvalItem {
  std::string generated;
  std::vector<std::string> references;
  std::string instruction;
  int subject_count = 0;
};

/// Throws FormatError naming the 1-based line.
std::vector<EvalItem> read_eval_manifest(const std::filesystem::path& path);

/// Scores every item; items whose images or embeddings fail are skipped and counted.
MetricReport evaluate(std::span<const EvalItem> items, const ImageStore& store, ModelGateway& embedder_a,
                      ModelGateway& embedder_b, std::uint64_t seed = 0);

}  // namespace msforge
