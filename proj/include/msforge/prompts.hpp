#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace msforge {

/// Template ids. Each id is also the task name sent with the model request and the
/// value recorded in record provenance.
namespace prompt_id {
inline constexpr std::string_view caption = "caption";
inline constexpr std::string_view object_filter = "object_filter";
inline constexpr std::string_view verify_boxes = "verify_boxes";
inline constexpr std::string_view transform_simple = "transform_simple";
inline constexpr std::string_view transform_complex_1 = "transform_complex_1";
inline constexpr std::string_view transform_complex_2 = "transform_complex_2";
inline constexpr std::string_view transform_complex_3 = "transform_complex_3";
inline constexpr std::string_view instruction_with_ids = "instruction_with_ids";
inline constexpr std::string_view instruction_without_ids = "instruction_without_ids";
inline constexpr std::string_view cot = "cot";
inline constexpr std::string_view similar_classes = "similar_classes";
}  // namespace prompt_id

/// Prompt templates with `{name}` placeholders. Built-in texts can be replaced by
/// `<id>.txt` files from a directory.
class PromptLibrary {
 public:
  PromptLibrary();

  static const std::vector<std::string>& ids();
  static std::string builtin(std::string_view id);

  /// Replaces templates with any `<id>.txt` found in `dir`. Unknown files are ignored.
  void load_overrides(const std::filesystem::path& dir);

  const std::string& get(std::string_view id) const;
  /// Throws std::invalid_argument on a placeholder with no value or a missing template.
  std::string render(std::string_view id, const std::map<std::string, std::string>& vars) const;

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& vars);

}  // namespace msforge
