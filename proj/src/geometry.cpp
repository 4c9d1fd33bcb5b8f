#include "msforge/geometry.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace msforge {

void require_box_within(const BBox& box, int image_w, int image_h) {
  if (!box.within(image_w, image_h)) {
    throw std::invalid_argument(fmt::format("box ({},{},{},{}) is empty or outside {}x{} image", box.x_min,
                                            box.y_min, box.x_max, box.y_max, image_w, image_h));
  }
}

std::int64_t intersection_area(const BBox& a, const BBox& b) noexcept {
  const int w = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const int h = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (w <= 0 || h <= 0) return 0;
  return static_cast<std::int64_t>(w) * h;
}

double box_iou(const BBox& a, const BBox& b) noexcept {
  const std::int64_t inter = intersection_area(a, b);
  const std::int64_t uni = a.area() + b.area() - inter;
  if (inter == 0 || uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

RasterMask::RasterMask(int width, int height) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw std::invalid_argument("RasterMask: negative dimensions");
  bits_.assign(static_cast<std::size_t>(width) * height, 0);
}

RasterMask::RasterMask(int width, int height, std::vector<std::uint8_t> bits)
    : width_(width), height_(height), bits_(std::move(bits)) {
  if (width < 0 || height < 0) throw std::invalid_argument("RasterMask: negative dimensions");
  if (bits_.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("RasterMask: bit count does not match width*height");
  }
  for (auto& b : bits_) b = b ? 1 : 0;
}

RasterMask RasterMask::from_box(int width, int height, const BBox& box) {
  RasterMask m(width, height);
  m.fill(box, true);
  return m;
}

void RasterMask::fill(const BBox& box, bool v) {
  const int x0 = std::max(box.x_min, 0), x1 = std::min(box.x_max, width_);
  const int y0 = std::max(box.y_min, 0), y1 = std::min(box.y_max, height_);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) bits_[index(x, y)] = v ? 1 : 0;
  }
}

std::int64_t RasterMask::popcount() const noexcept {
  return std::count(bits_.begin(), bits_.end(), std::uint8_t{1});
}

std::int64_t RasterMask::count_in(const BBox& rect) const noexcept {
  const int x0 = std::max(rect.x_min, 0), x1 = std::min(rect.x_max, width_);
  const int y0 = std::max(rect.y_min, 0), y1 = std::min(rect.y_max, height_);
  std::int64_t n = 0;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) n += bits_[index(x, y)];
  }
  return n;
}

std::vector<std::int64_t> RasterMask::to_rle() const {
  std::vector<std::int64_t> counts;
  std::uint8_t current = 0;
  std::int64_t run = 0;
  for (std::uint8_t b : bits_) {
    if (b != current) {
      counts.push_back(run);
      run = 0;
      current = b;
    }
    ++run;
  }
  counts.push_back(run);
  return counts;
}

RasterMask RasterMask::from_rle(int width, int height, std::span<const std::int64_t> counts) {
  if (width < 0 || height < 0) throw std::invalid_argument("RLE mask: negative dimensions");
  const auto total = static_cast<std::int64_t>(width) * height;
  std::vector<std::uint8_t> bits;
  bits.reserve(static_cast<std::size_t>(total));
  std::uint8_t value = 0;
  for (std::int64_t run : counts) {
    if (run < 0 || static_cast<std::int64_t>(bits.size()) + run > total) {
      throw std::invalid_argument("RLE mask: run lengths exceed width*height");
    }
    bits.insert(bits.end(), static_cast<std::size_t>(run), value);
    value ^= 1;
  }
  if (static_cast<std::int64_t>(bits.size()) != total) {
    throw std::invalid_argument("RLE mask: run lengths do not cover width*height");
  }
  return RasterMask(width, height, std::move(bits));
}

std::vector<PatchRect> tile_image(int width, int height, int grid_side) {
  if (grid_side < 1) throw std::invalid_argument("tile_image: grid side must be >= 1");
  if (width < grid_side || height < grid_side) {
    throw std::invalid_argument(
        fmt::format("tile_image: {}x{} image cannot hold a {}x{} grid", width, height, grid_side, grid_side));
  }
  const int cell_w = width / grid_side;
  const int cell_h = height / grid_side;
  std::vector<PatchRect> patches;
  patches.reserve(static_cast<std::size_t>(grid_side) * grid_side);
  for (int row = 0; row < grid_side; ++row) {
    for (int col = 0; col < grid_side; ++col) {
      BBox r{col * cell_w, row * cell_h, col == grid_side - 1 ? width : (col + 1) * cell_w,
             row == grid_side - 1 ? height : (row + 1) * cell_h};
      patches.push_back({row * grid_side + col, r});
    }
  }
  return patches;
}

namespace {

double ratio(std::int64_t inter, std::int64_t uni) {
  if (inter <= 0 || uni <= 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// Summed-area table with a zero border: sat[(y)*(w+1)+x] = count of set bits in [0,x)x[0,y).
std::vector<std::int64_t> summed_area(const RasterMask& m) {
  const int w = m.width(), h = m.height();
  std::vector<std::int64_t> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  for (int y = 0; y < h; ++y) {
    std::int64_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += m.at(x, y) ? 1 : 0;
      sat[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = sat[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  return sat;
}

}  // namespace

double region_patch_iou(const Region& region, const BBox& patch) {
  if (const auto* box = std::get_if<BBox>(&region)) return box_iou(*box, patch);
  const auto& mask = std::get<RasterMask>(region);
  const std::int64_t pop = mask.popcount();
  if (pop == 0) return 0.0;
  const std::int64_t inter = mask.count_in(patch);
  return ratio(inter, pop + patch.area() - inter);
}

std::vector<double> region_patch_ious(const Region& region, std::span<const PatchRect> patches) {
  std::vector<double> out;
  out.reserve(patches.size());
  if (const auto* box = std::get_if<BBox>(&region)) {
    for (const auto& p : patches) out.push_back(box_iou(*box, p.rect));
    return out;
  }
  const auto& mask = std::get<RasterMask>(region);
  const std::int64_t pop = mask.popcount();
  const auto sat = summed_area(mask);
  const int stride = mask.width() + 1;
  auto at = [&](int x, int y) { return sat[static_cast<std::size_t>(y) * stride + x]; };
  for (const auto& p : patches) {
    if (pop == 0) {
      out.push_back(0.0);
      continue;
    }
    const int x0 = std::clamp(p.rect.x_min, 0, mask.width()), x1 = std::clamp(p.rect.x_max, 0, mask.width());
    const int y0 = std::clamp(p.rect.y_min, 0, mask.height()), y1 = std::clamp(p.rect.y_max, 0, mask.height());
    const std::int64_t inter = at(x1, y1) - at(x0, y1) - at(x1, y0) + at(x0, y0);
    out.push_back(ratio(inter, pop + p.rect.area() - inter));
  }
  return out;
}

double dynamic_threshold(std::span<const double> ious, double lambda) {
  double sum = 0.0;
  std::size_t positive = 0;
  for (double v : ious) {
    if (v > 0.0) {
      sum += v;
      ++positive;
    }
  }
  if (positive == 0) return 0.0;
  return lambda * (sum / static_cast<double>(positive));
}

bool passes_area_filter(const BBox& box, int image_w, int image_h, double delta) noexcept {
  const double threshold = delta * static_cast<double>(image_w) * static_cast<double>(image_h);
  return !(static_cast<double>(box.area()) < threshold);
}

std::vector<BBox> area_filter(std::span<const BBox> boxes, int image_w, int image_h, double delta) {
  std::vector<BBox> kept;
  for (const auto& b : boxes) {
    if (passes_area_filter(b, image_w, image_h, delta)) kept.push_back(b);
  }
  return kept;
}

}  // namespace msforge
