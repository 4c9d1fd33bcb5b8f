#pragma once

// Instruction and reasoning text for a scene, and the "image {k}" subject-reference
// handling that keeps generated text consistent with the scene's subject ids.

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msforge/image.hpp"
#include "msforge/model_gateway.hpp"
#include "msforge/prompts.hpp"
#include "msforge/subject.hpp"

namespace msforge {

using SubjectIdSet = std::set<long long>;

struct InstructionText {
  std::string text;
  bool with_ids = false;
  SubjectIdSet referenced_ids;
  std::string template_id;
};

struct CoTText {
  std::string text;
  SubjectIdSet referenced_ids;
  int word_count = 0;
};

/// Every id k in an occurrence of "image" + one whitespace + digits (case-insensitive,
/// "image" starting at a word boundary). Ids too large for long long saturate.
SubjectIdSet extract_ids(std::string_view text);

enum class SanitizeMode {
  phrase,    // delete the attribution phrase ("from image k", "(image k)" or "image k")
  sentence,  // delete every sentence that mentions an invalid id
};

/// Removes references to ids outside `valid_ids` together with one adjacent space.
/// Idempotent; afterwards extract_ids(result) is a subset of valid_ids.
std::string sanitize_ids(std::string_view text, const SubjectIdSet& valid_ids,
                         SanitizeMode mode = SanitizeMode::phrase);

/// Sentences with their trailing whitespace; a sentence ends at '.', '?' or '!' followed
/// by whitespace. Concatenating the pieces reproduces the input.
std::vector<std::string_view> split_sentences(std::string_view text);

int count_words(std::string_view text);

SubjectIdSet subject_id_range(std::size_t count);

struct NarrativeParams {
  int cot_min_words = 300;
  int cot_max_regenerations = 2;
  SanitizeMode sanitize_mode = SanitizeMode::phrase;
};

/// Simulated user instruction from the VLM. Sanitized against the subject ids; a
/// with-ID instruction left without any valid id, or an instruction naming no subject
/// category, raises StageFailure("vlm_validation").
InstructionText gen_instruction(ModelGateway& gateway, const PromptLibrary& prompts, const Image& annotated_target,
                                std::span<const SubjectRecord> subjects, bool with_ids, std::uint64_t seed,
                                const std::string& scene_id, const NarrativeParams& params = {});

/// Step-by-step scene reasoning. Regenerates while the sanitized text is shorter than
/// params.cot_min_words; raises StageFailure("cot_short") once the budget is spent.
CoTText gen_cot(ModelGateway& gateway, const PromptLibrary& prompts, const InstructionText& instruction,
                const Image& annotated_target, std::span<const SubjectRecord> subjects, std::uint64_t seed,
                const std::string& scene_id, const NarrativeParams& params = {});

}  // namespace msforge
