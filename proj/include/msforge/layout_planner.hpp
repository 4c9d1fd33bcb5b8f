#pragma once

// Grid-based semantic layout: which subject categories occupy each cell of an M x M
// tiling of the target image, and the `<patch>` text form embedded in training records.
//
// Canonical text (no trailing newline):
//
//   Here is the segmentation map focusing on ship, sports car:\n
//   <patch>[0] others [1] others ... [17] ship ... [63] others</patch>\n
//    Now, generate an image.
//
// Cells list labels in byte-lexicographic order joined by ", "; empty cells read "others".

#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "msforge/image.hpp"
#include "msforge/model_gateway.hpp"
#include "msforge/subject.hpp"

namespace msforge {

struct PatchGrid {
  int side = 0;
  std::vector<std::set<std::string>> cells;  // side*side entries, row-major from top-left
  std::vector<std::string> focus_classes;    // first-appearance order, no duplicates

  static PatchGrid empty(int side, std::vector<std::string> focus = {});

  /// Throws std::invalid_argument when a structural invariant does not hold.
  void validate() const;

  friend bool operator==(const PatchGrid&, const PatchGrid&) = default;
};

/// Mask iff cos(mask, class) > cos(unmask, class). Vectors are assumed unit-norm, so the
/// cosines are plain dot products. Throws std::invalid_argument on dimension mismatch.
RegionMode choose_region_mode(const EmbeddingVector& class_vec, const EmbeddingVector& mask_vec,
                              const EmbeddingVector& unmask_vec);

/// The two crops compared by choose_region_mode: the box crop with out-of-mask pixels
/// zeroed, and the raw box crop.
std::pair<Image, Image> region_views(const Image& target, const BBox& box, const RasterMask& mask);

enum class ThresholdScope {
  per_subject,  // tau from the subject's own patch IoUs
  pooled,       // one tau from the positive IoUs of every subject in the image
};

struct LayoutParams {
  int grid_side = 8;
  double lambda = 0.05;
  ThresholdScope scope = ThresholdScope::per_subject;
};

/// Labels every cell whose IoU with a subject's region is strictly above that subject's
/// threshold. Focus classes are the subject categories in order of first appearance.
PatchGrid assign_patches(std::span<const SubjectRecord> subjects, int image_w, int image_h, const LayoutParams& params);

std::string serialize_layout(const PatchGrid& grid);

/// Whitespace-tolerant parse of the layout text. Throws FormatError on any grammar
/// violation, including a grid side different from `expected_side` when given.
PatchGrid parse_layout(std::string_view text, std::optional<int> expected_side = std::nullopt);

/// True when `name` can appear as a layout label (non-empty, no separators, not "others").
bool is_valid_layout_label(std::string_view name) noexcept;

}  // namespace msforge
