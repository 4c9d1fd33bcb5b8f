#include "msforge/similarity_dict.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "msforge/errors.hpp"
#include "msforge/rng.hpp"

namespace msforge {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view strip(std::string_view s) {
  auto junk = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0 || c == '"' || c == '\'' || c == '-' || c == '*' ||
           c == '.' || c == '[' || c == ']';
  };
  while (!s.empty() && junk(s.front())) s.remove_prefix(1);
  while (!s.empty() && junk(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace

void SimilarityDict::set(std::string category, std::vector<std::string> related) {
  entries_[std::move(category)] = std::move(related);
}

std::span<const std::string> SimilarityDict::related(std::string_view category) const {
  const auto it = entries_.find(category);
  if (it == entries_.end()) return {};
  return it->second;
}

void SimilarityDict::validate(std::span<const std::string> vocabulary) const {
  for (const auto& [key, values] : entries_) {
    for (const auto& v : values) {
      if (v == key) throw std::invalid_argument(fmt::format("similarity dict: '{}' maps to itself", key));
      if (std::find(vocabulary.begin(), vocabulary.end(), v) == vocabulary.end()) {
        throw std::invalid_argument(fmt::format("similarity dict: '{}' -> '{}' is not a vocabulary entry", key, v));
      }
    }
  }
}

nlohmann::json SimilarityDict::to_json() const {
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [key, values] : entries_) doc[key] = values;
  return doc;
}

SimilarityDict SimilarityDict::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw FormatError("similarity dict must be a JSON object");
  SimilarityDict d;
  for (const auto& [key, values] : doc.items()) {
    if (!values.is_array()) throw FormatError(fmt::format("similarity dict entry '{}' must be an array", key));
    d.set(key, values.get<std::vector<std::string>>());
  }
  return d;
}

std::vector<std::string> parse_related_categories(std::string_view reply, std::string_view key,
                                                  std::span<const std::string> vocabulary) {
  std::vector<std::string> out;
  const auto key_lower = lower(key);
  std::size_t start = 0;
  while (start <= reply.size()) {
    const auto sep = reply.find_first_of(",\n;", start);
    const auto token = strip(reply.substr(start, sep == std::string_view::npos ? std::string_view::npos : sep - start));
    start = sep == std::string_view::npos ? reply.size() + 1 : sep + 1;
    if (token.empty()) continue;
    const auto t = lower(token);
    if (t == key_lower) continue;
    const auto hit = std::find_if(vocabulary.begin(), vocabulary.end(), [&](const std::string& v) { return lower(v) == t; });
    if (hit == vocabulary.end()) continue;
    if (*hit == key) continue;
    if (std::find(out.begin(), out.end(), *hit) == out.end()) out.push_back(*hit);
  }
  return out;
}

SimilarityDict build_similarity_dict(ModelGateway& gateway, const PromptLibrary& prompts,
                                     std::span<const std::string> categories, std::uint64_t seed, int max_related) {
  if (categories.empty()) throw std::invalid_argument("build_similarity_dict: no categories");
  std::string all;
  for (const auto& c : categories) all += (all.empty() ? "" : ", ") + c;
  const std::vector<std::string> vocab(categories.begin(), categories.end());
  SimilarityDict dict;
  for (const auto& category : categories) {
    const auto prompt = prompts.render(prompt_id::similar_classes, {{"class_name", category},
                                                                    {"max_related", std::to_string(max_related)},
                                                                    {"categories", all}});
    std::string reply;
    try {
      reply = gateway.generate_text({"simdict", std::string(prompt_id::similar_classes), derive_seed(seed, category)},
                                    prompt, vocab);
    } catch (const TransportError& e) {
      throw StageFailure("simdict", "simdict", e.what());
    } catch (const ProtocolError& e) {
      throw StageFailure("simdict", "simdict", e.what());
    }
    auto related = parse_related_categories(reply, category, categories);
    if (related.size() > static_cast<std::size_t>(max_related)) related.resize(static_cast<std::size_t>(max_related));
    dict.set(category, std::move(related));
  }
  return dict;
}

}  // namespace msforge
