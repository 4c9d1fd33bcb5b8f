#include "msforge/record.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "msforge/errors.hpp"

namespace msforge {

using nlohmann::json;

namespace {

std::string join_path(const std::string& base, std::string_view key) {
  return base.empty() ? std::string(key) : base + "." + std::string(key);
}

const json& member(const json& doc, std::string_view key, const std::string& path) {
  if (!doc.is_object()) throw ValidationError(path.empty() ? "<record>" : path, "expected an object");
  auto it = doc.find(key);
  if (it == doc.end()) throw ValidationError(join_path(path, key), "missing field");
  return *it;
}

template <typename T>
T field(const json& doc, std::string_view key, const std::string& path) {
  const auto& v = member(doc, key, path);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(join_path(path, key), fmt::format("wrong type ({})", e.what()));
  }
}

json ids_json(const SubjectIdSet& ids) { return json(std::vector<long long>(ids.begin(), ids.end())); }

SubjectIdSet ids_from(const json& doc, std::string_view key, const std::string& path) {
  const auto v = field<std::vector<long long>>(doc, key, path);
  return {v.begin(), v.end()};
}

}  // namespace

json subject_to_json(const SubjectRecord& s) {
  json mask = nullptr;
  if (s.mask) mask = {{"width", s.mask->width()}, {"height", s.mask->height()}, {"counts", s.mask->to_rle()}};
  return {{"subject_id", s.subject_id},
          {"category", s.category},
          {"box", {s.box.x_min, s.box.y_min, s.box.x_max, s.box.y_max}},
          {"score", s.score},
          {"mask", mask},
          {"region_mode", to_string(s.region_mode)},
          {"crop", s.crop},
          {"transformed", s.transformed},
          {"transform_kind", to_string(s.transform_kind)},
          {"transform_template", s.transform_template},
          {"transform_prompt", s.transform_prompt}};
}

namespace {

SubjectRecord subject_at(const json& doc, const std::string& path) {
  SubjectRecord s;
  s.subject_id = field<int>(doc, "subject_id", path);
  s.category = field<std::string>(doc, "category", path);
  const auto box = field<std::vector<int>>(doc, "box", path);
  if (box.size() != 4) throw ValidationError(join_path(path, "box"), "expected [x_min, y_min, x_max, y_max]");
  s.box = {box[0], box[1], box[2], box[3]};
  s.score = field<double>(doc, "score", path);
  const auto& mask = member(doc, "mask", path);
  if (!mask.is_null()) {
    const auto mpath = join_path(path, "mask");
    const auto counts = field<std::vector<std::int64_t>>(mask, "counts", mpath);
    try {
      s.mask = RasterMask::from_rle(field<int>(mask, "width", mpath), field<int>(mask, "height", mpath), counts);
    } catch (const std::exception& e) {
      throw ValidationError(join_path(mpath, "counts"), e.what());
    }
  }
  try {
    s.region_mode = parse_region_mode(field<std::string>(doc, "region_mode", path));
  } catch (const std::invalid_argument& e) {
    throw ValidationError(join_path(path, "region_mode"), e.what());
  }
  s.crop = field<std::string>(doc, "crop", path);
  s.transformed = field<std::string>(doc, "transformed", path);
  try {
    s.transform_kind = parse_transform_kind(field<std::string>(doc, "transform_kind", path));
  } catch (const std::invalid_argument& e) {
    throw ValidationError(join_path(path, "transform_kind"), e.what());
  }
  s.transform_template = field<std::string>(doc, "transform_template", path);
  s.transform_prompt = field<std::string>(doc, "transform_prompt", path);
  return s;
}

}  // namespace

SubjectRecord subject_from_json(const json& doc) { return subject_at(doc, ""); }

json record_to_json(const TrainingRecord& r) {
  json subjects = json::array();
  for (const auto& s : r.subjects) subjects.push_back(subject_to_json(s));
  json prov = {{"scene_seed", r.provenance.scene_seed},
               {"seeds", r.provenance.seeds},
               {"template_ids", r.provenance.template_ids},
               {"backend_ids", r.provenance.backend_ids},
               {"parent_scene_id", nullptr},
               {"derivation_step", nullptr}};
  if (r.provenance.parent_scene_id) prov["parent_scene_id"] = *r.provenance.parent_scene_id;
  if (r.provenance.derivation_step) prov["derivation_step"] = *r.provenance.derivation_step;
  return {{"scene_id", r.scene_id},
          {"caption", r.caption},
          {"image_width", r.image_width},
          {"image_height", r.image_height},
          {"target_image", r.target_image},
          {"subject_images", r.subject_images},
          {"subjects", subjects},
          {"instruction",
           {{"text", r.instruction.text},
            {"with_ids", r.instruction.with_ids},
            {"referenced_ids", ids_json(r.instruction.referenced_ids)},
            {"template_id", r.instruction.template_id}}},
          {"cot",
           {{"text", r.cot.text}, {"referenced_ids", ids_json(r.cot.referenced_ids)}, {"word_count", r.cot.word_count}}},
          {"layout_prompt", r.layout_prompt},
          {"params",
           {{"delta", r.params.delta},
            {"grid_side", r.params.grid_side},
            {"lambda", r.params.lambda},
            {"threshold_scope", r.params.scope == ThresholdScope::pooled ? "pooled" : "per_subject"},
            {"n_max", r.params.n_max}}},
          {"provenance", prov}};
}

TrainingRecord record_from_json(const json& doc) {
  TrainingRecord r;
  r.scene_id = field<std::string>(doc, "scene_id", "");
  r.caption = field<std::string>(doc, "caption", "");
  r.image_width = field<int>(doc, "image_width", "");
  r.image_height = field<int>(doc, "image_height", "");
  r.target_image = field<std::string>(doc, "target_image", "");
  r.subject_images = field<std::vector<std::string>>(doc, "subject_images", "");
  const auto& subjects = member(doc, "subjects", "");
  if (!subjects.is_array()) throw ValidationError("subjects", "expected an array");
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    r.subjects.push_back(subject_at(subjects[i], fmt::format("subjects[{}]", i)));
  }
  const auto& ins = member(doc, "instruction", "");
  r.instruction.text = field<std::string>(ins, "text", "instruction");
  r.instruction.with_ids = field<bool>(ins, "with_ids", "instruction");
  r.instruction.referenced_ids = ids_from(ins, "referenced_ids", "instruction");
  r.instruction.template_id = field<std::string>(ins, "template_id", "instruction");
  const auto& cot = member(doc, "cot", "");
  r.cot.text = field<std::string>(cot, "text", "cot");
  r.cot.referenced_ids = ids_from(cot, "referenced_ids", "cot");
  r.cot.word_count = field<int>(cot, "word_count", "cot");
  r.layout_prompt = field<std::string>(doc, "layout_prompt", "");
  const auto& params = member(doc, "params", "");
  r.params.delta = field<double>(params, "delta", "params");
  r.params.grid_side = field<int>(params, "grid_side", "params");
  r.params.lambda = field<double>(params, "lambda", "params");
  const auto scope = field<std::string>(params, "threshold_scope", "params");
  if (scope == "pooled") {
    r.params.scope = ThresholdScope::pooled;
  } else if (scope == "per_subject") {
    r.params.scope = ThresholdScope::per_subject;
  } else {
    throw ValidationError("params.threshold_scope", "expected per_subject or pooled");
  }
  r.params.n_max = field<int>(params, "n_max", "params");
  const auto& prov = member(doc, "provenance", "");
  r.provenance.scene_seed = field<std::uint64_t>(prov, "scene_seed", "provenance");
  r.provenance.seeds = field<std::map<std::string, std::uint64_t>>(prov, "seeds", "provenance");
  r.provenance.template_ids = field<std::map<std::string, std::string>>(prov, "template_ids", "provenance");
  r.provenance.backend_ids = field<std::map<std::string, std::string>>(prov, "backend_ids", "provenance");
  if (const auto& p = member(prov, "parent_scene_id", "provenance"); !p.is_null()) {
    r.provenance.parent_scene_id = field<std::string>(prov, "parent_scene_id", "provenance");
  }
  if (const auto& d = member(prov, "derivation_step", "provenance"); !d.is_null()) {
    r.provenance.derivation_step = field<int>(prov, "derivation_step", "provenance");
  }
  return r;
}

void validate_record(const TrainingRecord& r) {
  if (r.scene_id.empty()) throw ValidationError("scene_id", "empty");
  if (r.image_width < 1 || r.image_height < 1) throw ValidationError("image_width", "image size must be positive");
  if (r.target_image.empty()) throw ValidationError("target_image", "empty reference");
  if (r.params.n_max < 1) throw ValidationError("params.n_max", "must be >= 1");
  if (!(r.params.delta >= 0.0 && r.params.delta <= 1.0)) throw ValidationError("params.delta", "must lie in [0, 1]");
  if (!(r.params.lambda >= 0.0)) throw ValidationError("params.lambda", "must be >= 0");
  if (r.params.grid_side < 1) throw ValidationError("params.grid_side", "must be >= 1");

  const auto s_count = r.subjects.size();
  if (s_count < 1 || s_count > static_cast<std::size_t>(r.params.n_max)) {
    throw ValidationError("subjects", fmt::format("{} subjects, expected 1..{}", s_count, r.params.n_max));
  }
  if (r.subject_images.size() != s_count) {
    throw ValidationError("subject_images",
                          fmt::format("{} images for {} subjects", r.subject_images.size(), s_count));
  }
  for (std::size_t i = 0; i < s_count; ++i) {
    const auto& s = r.subjects[i];
    const auto path = fmt::format("subjects[{}]", i);
    if (s.subject_id != static_cast<int>(i)) {
      throw ValidationError(path + ".subject_id", fmt::format("expected {}, found {}", i, s.subject_id));
    }
    if (!is_valid_layout_label(s.category)) throw ValidationError(path + ".category", "not a usable category name");
    if (!s.box.valid() || !s.box.within(r.image_width, r.image_height)) {
      throw ValidationError(path + ".box", "box is empty or outside the image");
    }
    if (!passes_area_filter(s.box, r.image_width, r.image_height, r.params.delta)) {
      throw ValidationError(path + ".box", "box area below the delta floor");
    }
    if (!(s.score >= 0.0 && s.score <= 1.0)) throw ValidationError(path + ".score", "must lie in [0, 1]");
    if (s.mask && (s.mask->width() != r.image_width || s.mask->height() != r.image_height)) {
      throw ValidationError(path + ".mask", "mask size differs from the image size");
    }
    if (s.region_mode == RegionMode::mask && !s.mask) throw ValidationError(path + ".region_mode", "mask mode without a mask");
    if (s.transformed.empty()) throw ValidationError(path + ".transformed", "empty reference");
    if (r.subject_images[i] != s.transformed) {
      throw ValidationError(fmt::format("subject_images[{}]", i), "does not match subjects[].transformed");
    }
  }

  const auto valid = subject_id_range(s_count);
  auto check_ids = [&](const std::string& path, const std::string& text, const SubjectIdSet& declared) {
    const auto found = extract_ids(text);
    for (auto id : found) {
      if (!valid.contains(id)) throw ValidationError(path + ".text", fmt::format("references image {} outside [0, {})", id, s_count));
    }
    if (found != declared) throw ValidationError(path + ".referenced_ids", "does not match the ids in the text");
  };
  if (r.instruction.text.empty()) throw ValidationError("instruction.text", "empty");
  check_ids("instruction", r.instruction.text, r.instruction.referenced_ids);
  if (r.instruction.with_ids && r.instruction.referenced_ids.empty()) {
    throw ValidationError("instruction.with_ids", "set but the text references no subject");
  }
  if (r.cot.text.empty()) throw ValidationError("cot.text", "empty");
  check_ids("cot", r.cot.text, r.cot.referenced_ids);
  if (r.cot.word_count != count_words(r.cot.text)) throw ValidationError("cot.word_count", "does not match the text");

  PatchGrid parsed;
  try {
    parsed = parse_layout(r.layout_prompt, r.params.grid_side);
  } catch (const FormatError& e) {
    throw ValidationError("layout_prompt", e.what());
  }
  for (const auto& c : parsed.focus_classes) {
    const bool known = std::any_of(r.subjects.begin(), r.subjects.end(), [&](const auto& s) { return s.category == c; });
    if (!known) throw ValidationError("layout_prompt", fmt::format("focus class '{}' is not a subject category", c));
  }
  const auto expected = assign_patches(r.subjects, r.image_width, r.image_height,
                                       {r.params.grid_side, r.params.lambda, r.params.scope});
  if (!(parsed == expected)) {
    throw ValidationError("layout_prompt", "grid differs from the assignment recomputed from the subjects");
  }
}

}  // namespace msforge
