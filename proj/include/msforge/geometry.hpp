#pragma once

// Pixel-space primitives: half-open integer boxes, raster masks, patch tiling,
// region/patch IoU and the adaptive IoU cut-off used for layout assignment.

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace msforge {

/// Half-open pixel box [x_min, x_max) x [y_min, y_max).
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const noexcept { return x_max - x_min; }
  int height() const noexcept { return y_max - y_min; }
  std::int64_t area() const noexcept { return static_cast<std::int64_t>(width()) * height(); }
  bool valid() const noexcept { return x_min >= 0 && y_min >= 0 && x_min < x_max && y_min < y_max; }
  bool within(int image_w, int image_h) const noexcept { return valid() && x_max <= image_w && y_max <= image_h; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Throws std::invalid_argument unless `box` is valid and inside the image.
void require_box_within(const BBox& box, int image_w, int image_h);

std::int64_t intersection_area(const BBox& a, const BBox& b) noexcept;
double box_iou(const BBox& a, const BBox& b) noexcept;

/// Row-major boolean raster of fixed dimensions.
class RasterMask {
 public:
  RasterMask() = default;
  RasterMask(int width, int height);
  RasterMask(int width, int height, std::vector<std::uint8_t> bits);

  static RasterMask from_box(int width, int height, const BBox& box);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v) { bits_[index(x, y)] = v ? 1 : 0; }
  void fill(const BBox& box, bool v);
  std::int64_t popcount() const noexcept;
  std::int64_t count_in(const BBox& rect) const noexcept;
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }

  /// Run lengths, row-major, first run counts zeros (possibly 0), then alternating.
  std::vector<std::int64_t> to_rle() const;
  static RasterMask from_rle(int width, int height, std::span<const std::int64_t> counts);

  friend bool operator==(const RasterMask&, const RasterMask&) = default;

 private:
  std::size_t index(int x, int y) const noexcept { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct PatchRect {
  int index = 0;
  BBox rect;
};

/// M x M row-major tiling; the last column/row absorbs remainder pixels.
std::vector<PatchRect> tile_image(int width, int height, int grid_side);

using Region = std::variant<BBox, RasterMask>;

/// |region ∩ patch| / |region ∪ patch| in exact pixel counts; 0 for an empty region.
double region_patch_iou(const Region& region, const BBox& patch);

/// IoU of one region against every patch of a tiling. Masks use a summed-area table.
std::vector<double> region_patch_ious(const Region& region, std::span<const PatchRect> patches);

/// lambda times the mean of the strictly positive IoUs; 0 if none are positive.
double dynamic_threshold(std::span<const double> ious, double lambda);

/// Drops boxes whose area is strictly below delta * image_w * image_h. Order preserved.
std::vector<BBox> area_filter(std::span<const BBox> boxes, int image_w, int image_h, double delta);
bool passes_area_filter(const BBox& box, int image_w, int image_h, double delta) noexcept;

}  // namespace msforge
