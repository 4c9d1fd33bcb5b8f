#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "msforge/geometry.hpp"

namespace msforge {

enum class RegionMode { mask, box };
enum class TransformKind { simple, complex };

std::string_view to_string(RegionMode m) noexcept;
std::string_view to_string(TransformKind k) noexcept;
RegionMode parse_region_mode(std::string_view s);
TransformKind parse_transform_kind(std::string_view s);

/// One detected subject of a scene. Image fields are paths relative to the dataset root.
struct SubjectRecord {
  int subject_id = 0;
  std::string category;
  BBox box;
  double score = 0.0;
  std::optional<RasterMask> mask;
  RegionMode region_mode = RegionMode::box;
  std::string crop;
  std::string transformed;
  TransformKind transform_kind = TransformKind::simple;
  std::string transform_template;  // prompt template id used for the view transform
  std::string transform_prompt;

  /// The region used for patch assignment: the mask when selected and present, else the box.
  Region region() const;
};

}  // namespace msforge
