#include "msforge/narrative.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <limits>
#include <optional>

#include <fmt/format.h>

#include "msforge/errors.hpp"
#include "msforge/rng.hpp"

namespace msforge {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool iequals_at(std::string_view text, std::size_t pos, std::string_view word) {
  if (pos + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(text[pos + i])) != word[i]) return false;
  }
  return true;
}

struct IdToken {
  std::size_t begin;  // position of "image"
  std::size_t end;    // one past the last digit
  long long id;
};

// Scans for "image" at a word boundary, one whitespace char, then digits.
std::vector<IdToken> find_id_tokens(std::string_view text) {
  std::vector<IdToken> out;
  constexpr std::string_view kWord = "image";
  for (std::size_t i = 0; i + kWord.size() + 1 < text.size(); ++i) {
    if (!iequals_at(text, i, kWord)) continue;
    if (i > 0 && is_word(text[i - 1])) continue;
    const std::size_t ws = i + kWord.size();
    if (!is_space(text[ws]) || !is_digit(text[ws + 1])) continue;
    std::size_t end = ws + 1;
    while (end < text.size() && is_digit(text[end])) ++end;
    long long id = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + ws + 1, text.data() + end, id);
    if (ec == std::errc::result_out_of_range) id = std::numeric_limits<long long>::max();
    out.push_back({i, end, id});
    i = end - 1;
  }
  return out;
}

// Phrase span [begin, end) for an invalid token, without surrounding spaces.
std::pair<std::size_t, std::size_t> deletion_span(std::string_view text, const IdToken& tok) {
  std::size_t begin = tok.begin, end = tok.end;
  // "from image k"
  if (begin >= 5 && is_space(text[begin - 1]) && iequals_at(text, begin - 5, "from") &&
      (begin == 5 || !is_word(text[begin - 6]))) {
    begin -= 5;
  } else if (begin >= 1 && text[begin - 1] == '(' && end < text.size() && text[end] == ')') {
    // "(image k)"
    --begin;
    ++end;
  }
  return {begin, end};
}

std::string sanitize_phrases_once(std::string_view text, const SubjectIdSet& valid, bool& changed) {
  std::string out;
  out.reserve(text.size());
  std::size_t cursor = 0;
  for (const auto& tok : find_id_tokens(text)) {
    if (valid.contains(tok.id)) continue;
    auto [b, e] = deletion_span(text, tok);
    b = std::max(b, cursor);
    // One adjacent space goes too; prefer the leading one unless an earlier deletion took it.
    if (b > cursor && text[b - 1] == ' ') {
      --b;
    } else if (e < text.size() && text[e] == ' ') {
      ++e;
    }
    out.append(text.substr(cursor, b - cursor));
    cursor = std::max(cursor, e);
    changed = true;
  }
  out.append(text.substr(cursor));
  return out;
}

}  // namespace

SubjectIdSet extract_ids(std::string_view text) {
  SubjectIdSet ids;
  for (const auto& tok : find_id_tokens(text)) ids.insert(tok.id);
  return ids;
}

std::vector<std::string_view> split_sentences(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if ((c == '.' || c == '?' || c == '!') && i + 1 < text.size() && is_space(text[i + 1])) {
      std::size_t end = i + 1;
      while (end < text.size() && is_space(text[end])) ++end;
      out.push_back(text.substr(start, end - start));
      start = end;
      i = end - 1;
    }
  }
  if (start < text.size()) out.push_back(text.substr(start));
  return out;
}

std::string sanitize_ids(std::string_view text, const SubjectIdSet& valid_ids, SanitizeMode mode) {
  if (mode == SanitizeMode::sentence) {
    std::string out;
    for (auto sentence : split_sentences(text)) {
      const auto ids = extract_ids(sentence);
      const bool bad = std::any_of(ids.begin(), ids.end(), [&](long long id) { return !valid_ids.contains(id); });
      if (!bad) out.append(sentence);
    }
    // Dropping a sentence can glue tokens into a new reference; finish with phrase mode.
    return sanitize_ids(out, valid_ids, SanitizeMode::phrase);
  }
  std::string current(text);
  while (true) {
    bool changed = false;
    std::string next = sanitize_phrases_once(current, valid_ids, changed);
    if (!changed) return current;
    current = std::move(next);
  }
}

int count_words(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

SubjectIdSet subject_id_range(std::size_t count) {
  SubjectIdSet ids;
  for (std::size_t i = 0; i < count; ++i) ids.insert(static_cast<long long>(i));
  return ids;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool mentions_any_category(std::string_view text, std::span<const SubjectRecord> subjects) {
  const auto t = lower(text);
  return std::any_of(subjects.begin(), subjects.end(),
                     [&](const SubjectRecord& s) { return t.find(lower(s.category)) != std::string::npos; });
}

template <typename Fn>
auto with_stage(std::string_view stage, const std::string& scene_id, Fn&& fn) {
  try {
    return fn();
  } catch (const TransportError& e) {
    throw StageFailure(std::string(stage), scene_id, e.what());
  } catch (const ProtocolError& e) {
    throw StageFailure(std::string(stage), scene_id, e.what());
  }
}

}  // namespace

InstructionText gen_instruction(ModelGateway& gateway, const PromptLibrary& prompts, const Image& annotated_target,
                                std::span<const SubjectRecord> subjects, bool with_ids, std::uint64_t seed,
                                const std::string& scene_id, const NarrativeParams& params) {
  if (subjects.empty()) throw std::invalid_argument("gen_instruction: no subjects");
  std::vector<std::string> categories;
  std::string classes_str;
  for (const auto& s : subjects) {
    categories.push_back(s.category);
    if (!classes_str.empty()) classes_str += ", ";
    classes_str += with_ids ? fmt::format("{} from image {}", s.category, s.subject_id) : s.category;
  }
  const auto tpl = with_ids ? prompt_id::instruction_with_ids : prompt_id::instruction_without_ids;
  const auto prompt = prompts.render(tpl, {{"classes_str", classes_str}});
  const CallContext ctx{scene_id, std::string(tpl), seed};
  const std::string raw = with_stage("vlm_validation", scene_id, [&] {
    return gateway.analyze_image(ctx, prompt, annotated_target, nullptr, categories);
  });

  const auto valid = with_ids ? subject_id_range(subjects.size()) : SubjectIdSet{};
  InstructionText out;
  out.text = sanitize_ids(raw, valid, params.sanitize_mode);
  out.with_ids = with_ids;
  out.referenced_ids = extract_ids(out.text);
  out.template_id = std::string(tpl);
  if (with_ids && out.referenced_ids.empty()) {
    throw StageFailure("vlm_validation", scene_id, "instruction references no valid subject id after sanitization");
  }
  if (!with_ids && !mentions_any_category(out.text, subjects)) {
    throw StageFailure("vlm_validation", scene_id, "instruction names none of the scene's subjects");
  }
  return out;
}

CoTText gen_cot(ModelGateway& gateway, const PromptLibrary& prompts, const InstructionText& instruction,
                const Image& annotated_target, std::span<const SubjectRecord> subjects, std::uint64_t seed,
                const std::string& scene_id, const NarrativeParams& params) {
  if (instruction.text.empty()) throw std::invalid_argument("gen_cot: empty instruction");
  std::vector<std::string> categories;
  for (const auto& s : subjects) categories.push_back(s.category);
  const auto prompt = prompts.render(prompt_id::cot, {{"initial_prompt", instruction.text}});
  const auto valid = subject_id_range(subjects.size());

  int last_count = 0;
  for (int attempt = 0; attempt <= params.cot_max_regenerations; ++attempt) {
    const CallContext ctx{scene_id, std::string(prompt_id::cot), derive_seed(seed, static_cast<std::uint64_t>(attempt))};
    const std::string raw = with_stage("cot_short", scene_id, [&] {
      return gateway.analyze_image(ctx, prompt, annotated_target, nullptr, categories);
    });
    CoTText cot;
    cot.text = sanitize_ids(raw, valid, params.sanitize_mode);
    cot.word_count = count_words(cot.text);
    cot.referenced_ids = extract_ids(cot.text);
    if (cot.word_count >= params.cot_min_words) return cot;
    last_count = cot.word_count;
  }
  throw StageFailure("cot_short", scene_id,
                     fmt::format("CoT has {} words after {} attempt(s); {} required", last_count,
                                 params.cot_max_regenerations + 1, params.cot_min_words));
}

}  // namespace msforge
