#include "msforge/layout_planner.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "msforge/errors.hpp"

namespace msforge {

namespace {

constexpr std::string_view kHeader = "Here is the segmentation map focusing on";
constexpr std::string_view kOpen = "<patch>";
constexpr std::string_view kClose = "</patch>";
constexpr std::string_view kTrailer = "Now, generate an image.";
constexpr std::string_view kOthers = "others";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view s) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    parts.push_back(trim(s.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return parts;
}

}  // namespace

bool is_valid_layout_label(std::string_view name) noexcept {
  if (name.empty() || name == kOthers) return false;
  if (trim(name).size() != name.size()) return false;
  return name.find_first_of(",[]<>:\n\r") == std::string_view::npos;
}

PatchGrid PatchGrid::empty(int side, std::vector<std::string> focus) {
  if (side < 1) throw std::invalid_argument("PatchGrid: side must be >= 1");
  PatchGrid g;
  g.side = side;
  g.cells.resize(static_cast<std::size_t>(side) * side);
  g.focus_classes = std::move(focus);
  return g;
}

void PatchGrid::validate() const {
  if (side < 1) throw std::invalid_argument("PatchGrid: side must be >= 1");
  if (cells.size() != static_cast<std::size_t>(side) * side) {
    throw std::invalid_argument(fmt::format("PatchGrid: {} cells for side {}", cells.size(), side));
  }
  for (std::size_t i = 0; i < focus_classes.size(); ++i) {
    if (!is_valid_layout_label(focus_classes[i])) {
      throw std::invalid_argument(fmt::format("PatchGrid: invalid focus class '{}'", focus_classes[i]));
    }
    if (std::find(focus_classes.begin(), focus_classes.begin() + static_cast<std::ptrdiff_t>(i), focus_classes[i]) !=
        focus_classes.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw std::invalid_argument(fmt::format("PatchGrid: duplicate focus class '{}'", focus_classes[i]));
    }
  }
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (const auto& label : cells[i]) {
      if (std::find(focus_classes.begin(), focus_classes.end(), label) == focus_classes.end()) {
        throw std::invalid_argument(fmt::format("PatchGrid: cell {} label '{}' is not a focus class", i, label));
      }
    }
  }
}

RegionMode choose_region_mode(const EmbeddingVector& class_vec, const EmbeddingVector& mask_vec,
                              const EmbeddingVector& unmask_vec) {
  if (class_vec.dim() != mask_vec.dim() || class_vec.dim() != unmask_vec.dim()) {
    throw std::invalid_argument(fmt::format("choose_region_mode: dimensions {}, {}, {} differ", class_vec.dim(),
                                            mask_vec.dim(), unmask_vec.dim()));
  }
  const double sim_mask = dot(mask_vec, class_vec);
  const double sim_unmask = dot(unmask_vec, class_vec);
  return sim_mask > sim_unmask ? RegionMode::mask : RegionMode::box;
}

std::pair<Image, Image> region_views(const Image& target, const BBox& box, const RasterMask& mask) {
  return {target.masked_crop(box, mask), target.crop(box)};
}

PatchGrid assign_patches(std::span<const SubjectRecord> subjects, int image_w, int image_h, const LayoutParams& params) {
  if (params.lambda < 0.0) throw std::invalid_argument("assign_patches: lambda must be >= 0");
  const auto patches = tile_image(image_w, image_h, params.grid_side);

  PatchGrid grid = PatchGrid::empty(params.grid_side);
  for (const auto& s : subjects) {
    if (std::find(grid.focus_classes.begin(), grid.focus_classes.end(), s.category) == grid.focus_classes.end()) {
      grid.focus_classes.push_back(s.category);
    }
  }

  std::vector<std::vector<double>> ious;
  ious.reserve(subjects.size());
  for (const auto& s : subjects) ious.push_back(region_patch_ious(s.region(), patches));

  double pooled_tau = 0.0;
  if (params.scope == ThresholdScope::pooled) {
    std::vector<double> all;
    for (const auto& v : ious) all.insert(all.end(), v.begin(), v.end());
    pooled_tau = dynamic_threshold(all, params.lambda);
  }

  for (std::size_t k = 0; k < subjects.size(); ++k) {
    const double tau =
        params.scope == ThresholdScope::pooled ? pooled_tau : dynamic_threshold(ious[k], params.lambda);
    for (std::size_t i = 0; i < patches.size(); ++i) {
      if (ious[k][i] > tau) grid.cells[i].insert(subjects[k].category);
    }
  }
  return grid;
}

std::string serialize_layout(const PatchGrid& grid) {
  std::string out(kHeader);
  out += ' ';
  for (std::size_t i = 0; i < grid.focus_classes.size(); ++i) {
    if (i) out += ", ";
    out += grid.focus_classes[i];
  }
  out += ":\n";
  out += kOpen;
  for (std::size_t i = 0; i < grid.cells.size(); ++i) {
    if (i) out += ' ';
    out += fmt::format("[{}] ", i);
    if (grid.cells[i].empty()) {
      out += kOthers;
      continue;
    }
    bool first = true;
    for (const auto& label : grid.cells[i]) {
      if (!first) out += ", ";
      out += label;
      first = false;
    }
  }
  out += kClose;
  out += "\n ";
  out += kTrailer;
  return out;
}

PatchGrid parse_layout(std::string_view text, std::optional<int> expected_side) {
  // Collapse whitespace runs so line breaks inside phrases are tolerated.
  std::string flat;
  flat.reserve(text.size());
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!flat.empty() && flat.back() != ' ') flat.push_back(' ');
    } else {
      flat.push_back(c);
    }
  }
  std::string_view rest = trim(flat);
  if (!rest.starts_with(kHeader)) throw FormatError("layout: missing 'Here is the segmentation map focusing on' header");
  rest.remove_prefix(kHeader.size());

  const auto open = rest.find(kOpen);
  if (open == std::string_view::npos) throw FormatError("layout: missing '<patch>'");
  std::string_view header = trim(rest.substr(0, open));
  if (header.empty() || header.back() != ':') throw FormatError("layout: header must end with ':' before '<patch>'");
  header = trim(header.substr(0, header.size() - 1));

  PatchGrid grid;
  if (!header.empty()) {
    for (auto name : split_commas(header)) {
      if (!is_valid_layout_label(name)) throw FormatError(fmt::format("layout: invalid focus class '{}'", name));
      if (std::find(grid.focus_classes.begin(), grid.focus_classes.end(), name) != grid.focus_classes.end()) {
        throw FormatError(fmt::format("layout: focus class '{}' listed twice", name));
      }
      grid.focus_classes.emplace_back(name);
    }
  }

  rest.remove_prefix(open + kOpen.size());
  const auto close = rest.find(kClose);
  if (close == std::string_view::npos) throw FormatError("layout: missing '</patch>'");
  std::string_view body = rest.substr(0, close);
  const std::string_view trailer = trim(rest.substr(close + kClose.size()));
  if (trailer != kTrailer) throw FormatError("layout: expected 'Now, generate an image.' after '</patch>'");

  std::size_t expected_index = 0;
  body = trim(body);
  while (!body.empty()) {
    if (body.front() != '[') throw FormatError(fmt::format("layout: expected '[' at entry {}", expected_index));
    const auto rb = body.find(']');
    if (rb == std::string_view::npos) throw FormatError("layout: unterminated entry index");
    const auto digits = trim(body.substr(1, rb - 1));
    std::size_t index = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), index);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty()) {
      throw FormatError(fmt::format("layout: bad entry index '{}'", digits));
    }
    if (index != expected_index) {
      throw FormatError(fmt::format("layout: entry index {} where {} was expected", index, expected_index));
    }
    body.remove_prefix(rb + 1);
    const auto next = body.find('[');
    const auto labels = trim(body.substr(0, next));
    body = next == std::string_view::npos ? std::string_view{} : body.substr(next);

    std::set<std::string> cell;
    if (labels.empty()) throw FormatError(fmt::format("layout: entry {} has no label", index));
    if (labels != kOthers) {
      for (auto label : split_commas(labels)) {
        if (label == kOthers) throw FormatError(fmt::format("layout: entry {} mixes 'others' with labels", index));
        if (std::find(grid.focus_classes.begin(), grid.focus_classes.end(), label) == grid.focus_classes.end()) {
          throw FormatError(fmt::format("layout: entry {} label '{}' is not in the header", index, label));
        }
        if (!cell.emplace(label).second) {
          throw FormatError(fmt::format("layout: entry {} repeats label '{}'", index, label));
        }
      }
    }
    grid.cells.push_back(std::move(cell));
    ++expected_index;
  }

  const auto count = grid.cells.size();
  const auto side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(count))));
  if (count == 0 || static_cast<std::size_t>(side) * static_cast<std::size_t>(side) != count) {
    throw FormatError(fmt::format("layout: {} entries is not a square grid", count));
  }
  if (expected_side && *expected_side != side) {
    throw FormatError(fmt::format("layout: grid side {} where {} was expected", side, *expected_side));
  }
  grid.side = side;
  return grid;
}

}  // namespace msforge
