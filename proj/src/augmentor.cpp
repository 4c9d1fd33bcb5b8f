#include "msforge/augmentor.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <stdexcept>

#include <fmt/format.h>

namespace msforge {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }

bool image_at(std::string_view s, std::size_t i) {
  static constexpr std::string_view kWord = "image";
  if (i + kWord.size() > s.size()) return false;
  if (i > 0 && is_word(s[i - 1])) return false;
  for (std::size_t k = 0; k < kWord.size(); ++k) {
    if (std::tolower(static_cast<unsigned char>(s[i + k])) != kWord[k]) return false;
  }
  return true;
}

// Rewrites every "image <digits>" token whose id is in the map.
std::string rename(std::string_view text, const IdMap& id_map) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (image_at(text, i) && i + 6 < text.size() && is_space(text[i + 5]) &&
        std::isdigit(static_cast<unsigned char>(text[i + 6]))) {
      std::size_t j = i + 6;
      long long id = 0;
      bool overflow = false;
      while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) {
        if (id > (std::numeric_limits<long long>::max() - 9) / 10) overflow = true;
        if (!overflow) id = id * 10 + (text[j] - '0');
        ++j;
      }
      auto it = overflow ? id_map.end() : id_map.find(id);
      out.append(text.substr(i, 6));
      out += it == id_map.end() ? std::string(text.substr(i + 6, j - i - 6)) : std::to_string(it->second);
      i = j;
      continue;
    }
    out += text[i++];
  }
  return out;
}

std::string rstrip(std::string s) {
  while (!s.empty() && is_space(s.back())) s.pop_back();
  return s;
}

std::string fallback_instruction(const std::vector<SubjectRecord>& subjects) {
  std::string out = "Compose a scene with ";
  for (std::size_t i = 0; i < subjects.size(); ++i) {
    if (i) out += i + 1 == subjects.size() ? " and " : ", ";
    out += fmt::format("the {} from image {}", subjects[i].category, subjects[i].subject_id);
  }
  return out + ".";
}

}  // namespace

std::string remap_ids(std::string_view text, const IdMap& id_map, const SubjectIdSet& removed) {
  std::string kept;
  for (auto piece : split_sentences(text)) {
    const auto ids = extract_ids(piece);
    const bool only_removed =
        !ids.empty() && std::all_of(ids.begin(), ids.end(), [&](long long id) { return removed.contains(id); });
    if (!only_removed) kept.append(piece);
  }
  if (kept.size() < text.size() && !text.empty() && !is_space(text.back())) kept = rstrip(std::move(kept));

  SubjectIdSet domain;
  for (const auto& [from, to] : id_map) domain.insert(from);
  return rename(sanitize_ids(kept, domain), id_map);
}

int smallest_subject(const std::vector<SubjectRecord>& subjects) {
  if (subjects.empty()) throw std::invalid_argument("smallest_subject: no subjects");
  const SubjectRecord* best = &subjects.front();
  for (const auto& s : subjects) {
    const auto a = s.box.area();
    if (a < best->box.area() || (a == best->box.area() && s.subject_id > best->subject_id)) best = &s;
  }
  return best->subject_id;
}

std::vector<TrainingRecord> reduce_subjects(const TrainingRecord& record) {
  std::vector<TrainingRecord> out;
  if (record.subjects.size() <= 2) return out;

  const auto& base_id = record.provenance.parent_scene_id ? *record.provenance.parent_scene_id : record.scene_id;
  const int base_step = record.provenance.derivation_step.value_or(0);
  TrainingRecord current = record;
  for (int step = 1; current.subjects.size() > 2; ++step) {
    const int victim = smallest_subject(current.subjects);
    IdMap id_map;
    std::vector<SubjectRecord> survivors;
    for (const auto& s : current.subjects) {
      if (s.subject_id == victim) continue;
      id_map[s.subject_id] = static_cast<long long>(survivors.size());
      survivors.push_back(s);
      survivors.back().subject_id = static_cast<int>(survivors.size()) - 1;
    }
    const SubjectIdSet removed{victim};

    TrainingRecord next = current;
    next.scene_id = fmt::format("{}-d{}", base_id, base_step + step);
    next.provenance.parent_scene_id = base_id;
    next.provenance.derivation_step = base_step + step;
    next.subjects = survivors;
    next.subject_images.clear();
    for (const auto& s : survivors) next.subject_images.push_back(s.transformed);

    next.instruction.text = remap_ids(current.instruction.text, id_map, removed);
    next.instruction.referenced_ids = extract_ids(next.instruction.text);
    if (rstrip(next.instruction.text).empty()) {
      next.instruction.text = fallback_instruction(survivors);
      next.instruction.referenced_ids = extract_ids(next.instruction.text);
      next.instruction.template_id = "derived_fallback";
    }
    next.instruction.with_ids = !next.instruction.referenced_ids.empty();

    next.cot.text = remap_ids(current.cot.text, id_map, removed);
    if (rstrip(next.cot.text).empty()) next.cot.text = fallback_instruction(survivors);
    next.cot.referenced_ids = extract_ids(next.cot.text);
    next.cot.word_count = count_words(next.cot.text);

    next.layout_prompt = serialize_layout(assign_patches(next.subjects, next.image_width, next.image_height,
                                                         {next.params.grid_side, next.params.lambda, next.params.scope}));
    out.push_back(next);
    current = std::move(next);
  }
  return out;
}

}  // namespace msforge
