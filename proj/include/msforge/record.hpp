#pragma once

// One training instance and its JSON form (one manifest line).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "msforge/layout_planner.hpp"
#include "msforge/narrative.hpp"
#include "msforge/subject.hpp"

namespace msforge {

/// Construction parameters needed to re-check a record on its own.
struct RecordParams {
  double delta = 0.01;
  int grid_side = 8;
  double lambda = 0.05;
  ThresholdScope scope = ThresholdScope::per_subject;
  int n_max = 12;
};

struct Provenance {
  std::uint64_t scene_seed = 0;
  std::map<std::string, std::uint64_t> seeds;          // per-stage seeds
  std::map<std::string, std::string> template_ids;     // purpose -> prompt template id
  std::map<std::string, std::string> backend_ids;      // role -> backend id
  std::optional<std::string> parent_scene_id;
  std::optional<int> derivation_step;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct TrainingRecord {
  std::string scene_id;
  std::string caption;
  int image_width = 0;
  int image_height = 0;
  std::string target_image;
  std::vector<std::string> subject_images;
  std::vector<SubjectRecord> subjects;
  InstructionText instruction;
  CoTText cot;
  std::string layout_prompt;
  RecordParams params;
  Provenance provenance;

  bool derived() const noexcept { return provenance.parent_scene_id.has_value(); }
};

nlohmann::json subject_to_json(const SubjectRecord& s);
SubjectRecord subject_from_json(const nlohmann::json& doc);

nlohmann::json record_to_json(const TrainingRecord& r);
/// Throws ValidationError naming the first missing or mistyped field.
TrainingRecord record_from_json(const nlohmann::json& doc);

/// Full invariant check: subject ids 0..S-1, S in [1, n_max], boxes inside the image and
/// above the area floor, masks sized to the image, instruction and CoT ids within
/// [0, S), and a layout prompt that parses and equals the grid recomputed from the
/// subjects. Throws ValidationError with a field path.
void validate_record(const TrainingRecord& r);

}  // namespace msforge
