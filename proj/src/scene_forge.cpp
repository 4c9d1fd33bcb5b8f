#include "msforge/scene_forge.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <numeric>
#include <regex>
#include <stdexcept>

#include <fmt/format.h>

#include "msforge/errors.hpp"
#include "msforge/rng.hpp"

namespace msforge {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool contains_phrase(const std::string& haystack_lower, const std::string& needle_lower) {
  if (needle_lower.empty()) return false;
  for (auto pos = haystack_lower.find(needle_lower); pos != std::string::npos;
       pos = haystack_lower.find(needle_lower, pos + 1)) {
    const auto end = pos + needle_lower.size();
    const bool left_ok = pos == 0 || !word_char(haystack_lower[pos - 1]);
    // Allow a plural 's' after the phrase.
    const bool right_ok = end == haystack_lower.size() || !word_char(haystack_lower[end]) ||
                          (haystack_lower[end] == 's' && (end + 1 == haystack_lower.size() || !word_char(haystack_lower[end + 1])));
    if (left_ok && right_ok) return true;
  }
  return false;
}

std::string join(std::span<const std::string> items, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

template <typename Fn>
auto in_stage(std::string_view stage, const std::string& scene_id, Fn&& fn) {
  try {
    return fn();
  } catch (const TransportError& e) {
    throw StageFailure(std::string(stage), scene_id, e.what());
  } catch (const ProtocolError& e) {
    throw StageFailure(std::string(stage), scene_id, e.what());
  }
}

}  // namespace

void SceneParams::validate() const {
  if (n_min < 1) throw std::invalid_argument("n_min must be >= 1");
  if (n_min > n_max) throw std::invalid_argument("n_min must be <= n_max");
  if (!(delta >= 0.0 && delta <= 1.0)) throw std::invalid_argument("delta must lie in [0, 1]");
  if (!(complex_prob >= 0.0 && complex_prob <= 1.0)) throw std::invalid_argument("complex_prob must lie in [0, 1]");
  if (caption_attempts < 1) throw std::invalid_argument("caption_attempts must be >= 1");
  if (image_width < 1 || image_height < 1) throw std::invalid_argument("image size must be positive");
}

std::vector<std::string> sample_candidates(std::span<const std::string> vocabulary, int n_min, int n_max,
                                           std::uint64_t rng_seed) {
  if (n_min < 1 || n_min > n_max) throw std::invalid_argument("sample_candidates: need 1 <= n_min <= n_max");
  if (vocabulary.size() < static_cast<std::size_t>(2 * n_max)) {
    throw std::invalid_argument(
        fmt::format("sample_candidates: vocabulary has {} categories, at least {} required", vocabulary.size(), 2 * n_max));
  }
  Rng rng(derive_seed(rng_seed, "candidates"));
  const auto k = static_cast<std::size_t>(rng.uniform_int(2 * n_min, 2 * n_max));
  std::vector<std::string> out;
  for (auto i : rng.sample_indices(vocabulary.size(), k)) out.push_back(vocabulary[i]);
  return out;
}

std::vector<std::string> mentioned_categories(std::string_view caption, std::span<const std::string> candidates) {
  const auto text = lower(caption);
  std::vector<std::string> out;
  for (const auto& c : candidates) {
    if (contains_phrase(text, lower(c)) && std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
  return out;
}

SceneDraft compose_scene(ModelGateway& gateway, const PromptLibrary& prompts, SceneDraft draft,
                         const SceneParams& params) {
  if (draft.candidate_categories.empty()) throw std::invalid_argument("compose_scene: no candidate categories");
  const auto& candidates = draft.candidate_categories;
  const std::size_t need = (candidates.size() + 1) / 2;
  const auto caption_prompt = prompts.render(prompt_id::caption, {{"classes_str", join(candidates, ", ")}});
  // The filter verdict is keyed per scene, not per attempt.
  const auto filter_seed = derive_seed(draft.rng_seed, "object_filter");

  std::string last_problem;
  for (int attempt = 0; attempt < params.caption_attempts; ++attempt) {
    draft.caption_attempts_used = attempt + 1;
    const auto attempt_seed = derive_seed(draft.rng_seed, static_cast<std::uint64_t>(attempt));
    auto caption = in_stage("t2i_mismatch", draft.scene_id, [&] {
      return gateway.generate_text({draft.scene_id, std::string(prompt_id::caption), derive_seed(attempt_seed, "caption")},
                                   caption_prompt, candidates);
    });
    auto chosen = mentioned_categories(caption, candidates);
    if (chosen.size() < need) {
      last_problem = fmt::format("caption names {} of {} candidates, {} required", chosen.size(), candidates.size(), need);
      continue;
    }
    auto target = in_stage("t2i_mismatch", draft.scene_id, [&] {
      return gateway.generate_image({draft.scene_id, "t2i", derive_seed(attempt_seed, "t2i")}, caption,
                                    params.image_width, params.image_height);
    });
    const auto filter_prompt =
        prompts.render(prompt_id::object_filter, {{"caption", caption}, {"classes_str", join(chosen, ", ")}});
    const auto verdict = in_stage("t2i_mismatch", draft.scene_id, [&] {
      return gateway.analyze_image({draft.scene_id, std::string(prompt_id::object_filter), filter_seed}, filter_prompt,
                                   target, nullptr, chosen);
    });
    const auto v = lower(verdict);
    if (v.find("meets all criteria") != std::string::npos && v.find("please revise") == std::string::npos) {
      draft.caption = std::move(caption);
      draft.chosen_categories = std::move(chosen);
      draft.target_image = std::move(target);
      return draft;
    }
    last_problem = "object filter: " + verdict;
  }
  throw StageFailure("t2i_mismatch", draft.scene_id,
                     fmt::format("no consistent caption/image after {} attempt(s): {}", params.caption_attempts, last_problem));
}

std::vector<Detection> select_subjects(std::span<const Detection> detections, int image_w, int image_h, double delta,
                                       int n_max, const std::string& scene_id) {
  if (n_max < 1) throw std::invalid_argument("select_subjects: n_max must be >= 1");
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (passes_area_filter(detections[i].box, image_w, image_h, delta)) survivors.push_back(i);
  }
  if (survivors.size() < 2) {
    throw StageFailure("detection_sparse", scene_id,
                       fmt::format("{} detection(s) survive the area filter, at least 2 required", survivors.size()));
  }

  // Per category: indices by descending area, ties by detection order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_category;
  for (auto i : survivors) {
    auto& bucket = by_category[detections[i].category];
    if (bucket.empty()) order.push_back(detections[i].category);
    bucket.push_back(i);
  }
  for (auto& [cat, bucket] : by_category) {
    std::stable_sort(bucket.begin(), bucket.end(),
                     [&](std::size_t a, std::size_t b) { return detections[a].box.area() > detections[b].box.area(); });
  }
  std::stable_sort(order.begin(), order.end(), [&](const std::string& a, const std::string& b) {
    return detections[by_category[a].front()].box.area() > detections[by_category[b].front()].box.area();
  });

  std::vector<Detection> chosen;
  const auto cap = static_cast<std::size_t>(n_max);
  for (std::size_t round = 0; chosen.size() < cap; ++round) {
    bool any = false;
    for (const auto& cat : order) {
      const auto& bucket = by_category[cat];
      if (round < bucket.size()) {
        chosen.push_back(detections[bucket[round]]);
        any = true;
        if (chosen.size() == cap) break;
      }
    }
    if (!any) break;
  }
  return chosen;
}

Image overlay_detections(const Image& target, std::span<const Detection> detections) {
  Image out = target;
  const int thickness = std::max(1, std::min(target.width(), target.height()) / 128);
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto h = splitmix64(i + 1);
    out.draw_outline(detections[i].box,
                     {static_cast<std::uint8_t>(h | 0x80), static_cast<std::uint8_t>((h >> 8) | 0x40),
                      static_cast<std::uint8_t>(h >> 16)},
                     thickness);
  }
  return out;
}

std::vector<bool> parse_box_verdicts(std::string_view reply, std::size_t box_count) {
  std::vector<bool> verdict(box_count, false);
  static const std::regex line_re(R"((\d+)\s*[:\)\.-]\s*(yes|no)\b)", std::regex::icase);
  const std::string text(reply);
  for (auto it = std::sregex_iterator(text.begin(), text.end(), line_re); it != std::sregex_iterator(); ++it) {
    const auto idx = std::stoul((*it)[1].str());
    if (idx < box_count) verdict[idx] = lower((*it)[2].str()) == "yes";
  }
  return verdict;
}

std::vector<Detection> verify_subjects(ModelGateway& gateway, const PromptLibrary& prompts, const Image& target,
                                       std::span<const Detection> selected, std::uint64_t seed,
                                       const std::string& scene_id) {
  if (selected.empty()) throw std::invalid_argument("verify_subjects: nothing to verify");
  std::string boxes;
  std::vector<std::string> categories;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const auto& d = selected[i];
    boxes += fmt::format("[{}] {} ({:.2f}) at {},{},{},{}\n", i, d.category, d.score, d.box.x_min, d.box.y_min,
                         d.box.x_max, d.box.y_max);
    categories.push_back(d.category);
  }
  if (!boxes.empty()) boxes.pop_back();
  const auto prompt = prompts.render(prompt_id::verify_boxes, {{"boxes", boxes}});
  const auto overlay = overlay_detections(target, selected);
  const auto reply = in_stage("ovd_verify", scene_id, [&] {
    return gateway.analyze_image({scene_id, std::string(prompt_id::verify_boxes), seed}, prompt, target, &overlay,
                                 categories);
  });
  const auto verdict = parse_box_verdicts(reply, selected.size());
  std::vector<Detection> kept;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (verdict[i]) kept.push_back(selected[i]);
  }
  if (kept.empty()) throw StageFailure("ovd_verify", scene_id, "the VLM rejected every detected box");
  return kept;
}

TransformPlan plan_transform(const PromptLibrary& prompts, const std::string& category, TransformKind mode,
                             const SimilarityDict& similar, std::uint64_t rng_seed) {
  Rng rng(derive_seed(rng_seed, "transform_plan"));
  const auto related = similar.related(category);
  if (mode == TransformKind::complex && !related.empty()) {
    const auto wanted = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const auto k = std::min(wanted, related.size());
    const auto picks = rng.sample_indices(related.size(), k);
    std::map<std::string, std::string> vars{{"class_name", category}};
    std::string_view tpl;
    if (k == 1) {
      tpl = prompt_id::transform_complex_1;
      vars["random_class"] = related[picks[0]];
    } else {
      tpl = k == 2 ? prompt_id::transform_complex_2 : prompt_id::transform_complex_3;
      for (std::size_t i = 0; i < k; ++i) vars[fmt::format("random_class_{}", i + 1)] = related[picks[i]];
    }
    return {TransformKind::complex, std::string(tpl), prompts.render(tpl, vars)};
  }
  return {TransformKind::simple, std::string(prompt_id::transform_simple),
          prompts.render(prompt_id::transform_simple, {{"class_name", category}})};
}

SubjectRecord transform_subject(ModelGateway& gateway, const PromptLibrary& prompts, SubjectRecord subject,
                                const Image& crop, TransformKind mode, const SimilarityDict& similar,
                                std::uint64_t rng_seed, const std::string& scene_id, ImageStore& store) {
  if (crop.empty()) throw std::invalid_argument("transform_subject: empty crop");
  auto plan = plan_transform(prompts, subject.category, mode, similar, rng_seed);
  auto transformed = in_stage("transform", scene_id, [&] {
    return gateway.transform_image({scene_id, plan.template_id, derive_seed(rng_seed, "i2i")}, plan.prompt, crop);
  });
  subject.transformed = store.put(scene_id, fmt::format("subject_{}", subject.subject_id), transformed);
  subject.transform_kind = plan.kind;
  subject.transform_template = std::move(plan.template_id);
  subject.transform_prompt = std::move(plan.prompt);
  return subject;
}

}  // namespace msforge
