#include "msforge/prompts.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace msforge {

namespace {

struct BuiltinTemplate {
  std::string_view id;
  std::string_view text;
};

constexpr BuiltinTemplate kBuiltins[] = {
    {prompt_id::caption,
     "Create a scene for an image generation model by semantically choosing at least half of these objects: "
     "{classes_str} to fit a coherent setting. Use any style. Describe the scene in one concise English paragraph. "
     "no think."},
    {prompt_id::object_filter,
     "I have a scene description to evaluate. Here's the info:\n"
     "- Description: {caption}\n"
     "Think these questions in mind to check the description:\n"
     "1. Does the description avoid excessive adjectives or storytelling? (No more than 2 adjectives, no narrative.)\n"
     "2. Are all classes ({classes_str}) mentioned in the description?\n"
     "Output:\n"
     "- If any answer is 'No', list violations like ['Missing class: xx'] and end with 'Please revise.'\n"
     "- If all answers are 'Yes', say 'Meets all criteria.'"},
    {prompt_id::verify_boxes,
     "The second image overlays numbered detection boxes on the first image. Each box is listed as "
     "[index] category (confidence) at x_min,y_min,x_max,y_max:\n"
     "{boxes}\n"
     "For every box decide whether the category label is correct and the box tightly covers that object. "
     "Answer with one line per box in the form '<index>: yes' or '<index>: no'."},
    {prompt_id::transform_simple,
     "A {class_name} viewed from a different perspective, maintaining its core features and details."},
    {prompt_id::transform_complex_1,
     "A cozy scene shows a {class_name} sitting close to a {random_class}, with their positions suggesting a natural "
     "interaction. The environment is filled with random objects, and neither item dominates the scene."},
    {prompt_id::transform_complex_2,
     "The {class_name}, partially out of focus, lies near the camera; a {random_class_1} stands in full view, and a "
     "{random_class_2} is seen beyond a pile of scattered objects."},
    {prompt_id::transform_complex_3,
     "In a sun-drenched garden, the {class_name} leans gently against a wooden crate. A {random_class_1} is placed on "
     "the grass nearby, with a {random_class_2} resting atop the crate. A {random_class_3} hangs lazily from a tree "
     "branch, swaying slightly with the breeze."},
    {prompt_id::instruction_with_ids,
     "Create a scene description for image annotation using {classes_str}\n"
     "Use short phrases, and describe how these objects might relate or be arranged in a scene. Clearly refer to "
     "each object with its source image (e.g., cat from image 1). Allow slight ambiguity, and mention each given "
     "object at least once relative to another or a landmark. Keep it concise, 5-30 words.\n"
     "Tempelate:\n"
     "The dog from image 0 rolls around in the grass while the cat from image 1 watches from a rock. A tall tree "
     "from image 2 casts shadows across the scene."},
    {prompt_id::instruction_without_ids,
     "Create a detailed prompt for a generative model to create an image, depicting a harmonious scene composed of "
     "the following objects: {classes_str}.\n"
     "Describe how these objects interact or are arranged in the scene to form a cohesive and visually appealing "
     "composition."},
    {prompt_id::cot,
     "You are an expert in multi-image scene composition and visual grounding. Given initial prompt with subjects "
     "from different sub-image, create a detailed composition, step-by-step reasoning (CoT) to describe the entire "
     "scene in given target image.\n"
     "### Input\n"
     "- **Initial Prompt**: \"{initial_prompt}\"\n"
     "### Note\n"
     "1. Clearly describe spatial relationships and interactions between objects (use terms like beside, behind, "
     "above, near, aligned with, etc.).\n"
     "2. Maintain a clear and logical flow, progressively describing the background, foreground, object positions, "
     "and their visual relationships.\n"
     "3. Include image IDs when needed to distinguish between multiple objects of the same category.\n"
     "4. Language: English. Provide at least 300 words."},
    {prompt_id::similar_classes,
     "From the category list below, name up to {max_related} categories that are semantically similar to "
     "\"{class_name}\" and could plausibly appear in the same scene. Reply with a comma-separated list using the "
     "exact category spellings.\n"
     "Categories: {categories}"},
};

}  // namespace

PromptLibrary::PromptLibrary() {
  for (const auto& b : kBuiltins) templates_.emplace(std::string(b.id), std::string(b.text));
}

const std::vector<std::string>& PromptLibrary::ids() {
  static const std::vector<std::string> all = [] {
    std::vector<std::string> v;
    for (const auto& b : kBuiltins) v.emplace_back(b.id);
    return v;
  }();
  return all;
}

std::string PromptLibrary::builtin(std::string_view id) {
  for (const auto& b : kBuiltins) {
    if (b.id == id) return std::string(b.text);
  }
  throw std::invalid_argument(fmt::format("no built-in prompt template '{}'", id));
}

void PromptLibrary::load_overrides(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::invalid_argument("prompt directory does not exist: " + dir.string());
  }
  for (const auto& id : ids()) {
    const auto path = dir / (id + ".txt");
    if (!std::filesystem::exists(path)) continue;
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    templates_[id] = std::move(text);
  }
}

const std::string& PromptLibrary::get(std::string_view id) const {
  const auto it = templates_.find(id);
  if (it == templates_.end()) throw std::invalid_argument(fmt::format("unknown prompt template '{}'", id));
  return it->second;
}

std::string PromptLibrary::render(std::string_view id, const std::map<std::string, std::string>& vars) const {
  return render_template(get(id), vars);
}

std::string render_template(std::string_view tpl, const std::map<std::string, std::string>& vars) {
  std::string out;
  out.reserve(tpl.size());
  std::size_t i = 0;
  while (i < tpl.size()) {
    const auto open = tpl.find('{', i);
    if (open == std::string_view::npos) {
      out.append(tpl.substr(i));
      break;
    }
    const auto close = tpl.find('}', open);
    if (close == std::string_view::npos) {
      out.append(tpl.substr(i));
      break;
    }
    const auto name = tpl.substr(open + 1, close - open - 1);
    const auto it = vars.find(std::string(name));
    if (it == vars.end()) throw std::invalid_argument(fmt::format("template placeholder '{{{}}}' has no value", name));
    out.append(tpl.substr(i, open - i));
    out.append(it->second);
    i = close + 1;
  }
  return out;
}

}  // namespace msforge
