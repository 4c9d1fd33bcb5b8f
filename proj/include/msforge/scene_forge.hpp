#pragma once

// Scene synthesis: candidate categories -> caption and target image -> detected,
// filtered and verified subjects -> crops and view-transformed subject images.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msforge/image.hpp"
#include "msforge/image_store.hpp"
#include "msforge/model_gateway.hpp"
#include "msforge/prompts.hpp"
#include "msforge/similarity_dict.hpp"
#include "msforge/subject.hpp"

namespace msforge {

struct SceneParams {
  int n_min = 1;
  int n_max = 12;
  double delta = 0.01;
  double complex_prob = 0.3;
  int caption_attempts = 3;
  int image_width = 512;
  int image_height = 512;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
};

struct SceneDraft {
  std::string scene_id;
  std::uint64_t rng_seed = 0;
  std::vector<std::string> candidate_categories;
  std::vector<std::string> chosen_categories;
  std::string caption;
  Image target_image;
  int caption_attempts_used = 0;
};

/// k ~ U[2*n_min, 2*n_max] distinct categories, in draw order.
std::vector<std::string> sample_candidates(std::span<const std::string> vocabulary, int n_min, int n_max,
                                           std::uint64_t rng_seed);

/// Candidates named in `caption` (case-insensitive, whole words), in candidate order.
std::vector<std::string> mentioned_categories(std::string_view caption, std::span<const std::string> candidates);

/// Caption -> target image -> object-filter check, regenerating up to
/// params.caption_attempts times. Raises StageFailure("t2i_mismatch") when every attempt fails.
SceneDraft compose_scene(ModelGateway& gateway, const PromptLibrary& prompts, SceneDraft draft,
                         const SceneParams& params);

/// Area filter, then round-robin over categories (largest box first within each
/// category) until n_max are chosen. Categories take turns in order of their largest
/// box. Raises StageFailure("detection_sparse") if fewer than two boxes survive the filter.
std::vector<Detection> select_subjects(std::span<const Detection> detections, int image_w, int image_h, double delta,
                                       int n_max, const std::string& scene_id = {});

/// Copy of `target` with each box outlined in an index-specific color.
Image overlay_detections(const Image& target, std::span<const Detection> detections);

/// Asks the VLM to judge the annotated overlay; returns the approved detections in
/// their original order. Boxes without an explicit "yes" are dropped. Raises
/// StageFailure("ovd_verify") on transport failure or when nothing survives.
std::vector<Detection> verify_subjects(ModelGateway& gateway, const PromptLibrary& prompts, const Image& target,
                                       std::span<const Detection> selected, std::uint64_t seed,
                                       const std::string& scene_id);

/// Verdicts parsed from "<index>: yes|no" lines.
std::vector<bool> parse_box_verdicts(std::string_view reply, std::size_t box_count);

struct TransformPlan {
  TransformKind kind = TransformKind::simple;
  std::string template_id;
  std::string prompt;
};

/// Chooses the transform prompt. Complex mode draws 1-3 related classes from the
/// dictionary and the template with that many slots; a category without related
/// classes falls back to the simple prompt.
TransformPlan plan_transform(const PromptLibrary& prompts, const std::string& category, TransformKind mode,
                             const SimilarityDict& similar, std::uint64_t rng_seed);

/// Runs the view transform on `crop` and stores the result. Raises StageFailure("transform").
SubjectRecord transform_subject(ModelGateway& gateway, const PromptLibrary& prompts, SubjectRecord subject,
                                const Image& crop, TransformKind mode, const SimilarityDict& similar,
                                std::uint64_t rng_seed, const std::string& scene_id, ImageStore& store);

}  // namespace msforge
