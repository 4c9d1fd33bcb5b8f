#include "msforge/subject.hpp"

#include <stdexcept>

namespace msforge {

std::string_view to_string(RegionMode m) noexcept { return m == RegionMode::mask ? "mask" : "box"; }

std::string_view to_string(TransformKind k) noexcept { return k == TransformKind::complex ? "complex" : "simple"; }

RegionMode parse_region_mode(std::string_view s) {
  if (s == "mask") return RegionMode::mask;
  if (s == "box") return RegionMode::box;
  throw std::invalid_argument("region_mode must be 'mask' or 'box'");
}

TransformKind parse_transform_kind(std::string_view s) {
  if (s == "simple") return TransformKind::simple;
  if (s == "complex") return TransformKind::complex;
  throw std::invalid_argument("transform_kind must be 'simple' or 'complex'");
}

Region SubjectRecord::region() const {
  if (region_mode == RegionMode::mask && mask) return *mask;
  return box;
}

}  // namespace msforge
