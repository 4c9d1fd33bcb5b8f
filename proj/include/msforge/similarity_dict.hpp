#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "msforge/model_gateway.hpp"
#include "msforge/prompts.hpp"

namespace msforge {

/// Category -> semantically related categories, used to build complex transform prompts.
class SimilarityDict {
 public:
  void set(std::string category, std::vector<std::string> related);
  /// Empty when the category has no entry.
  std::span<const std::string> related(std::string_view category) const;
  const std::map<std::string, std::vector<std::string>, std::less<>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Throws std::invalid_argument if an entry maps to itself or names a category outside `vocabulary`.
  void validate(std::span<const std::string> vocabulary) const;

  nlohmann::json to_json() const;
  static SimilarityDict from_json(const nlohmann::json& doc);

 private:
  std::map<std::string, std::vector<std::string>, std::less<>> entries_;
};

/// Turns a comma/newline separated model reply into vocabulary spellings, dropping the
/// key itself, unknown names and duplicates.
std::vector<std::string> parse_related_categories(std::string_view reply, std::string_view key,
                                                  std::span<const std::string> vocabulary);

/// One text-model query per category. A model failure raises StageFailure("simdict").
SimilarityDict build_similarity_dict(ModelGateway& gateway, const PromptLibrary& prompts,
                                     std::span<const std::string> categories, std::uint64_t seed,
                                     int max_related = 3);

}  // namespace msforge
