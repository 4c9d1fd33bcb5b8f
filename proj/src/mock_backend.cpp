#include "msforge/mock_backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

#include "msforge/errors.hpp"
#include "msforge/prompts.hpp"
#include "msforge/rng.hpp"

namespace msforge {

namespace {

constexpr const char* kSettings[] = {
    "sunlit studio with tall windows", "quiet living room", "coastal road at sunset", "busy kitchen counter",
    "small garden courtyard",          "tidy office corner", "rustic cabin interior", "bright classroom"};
constexpr const char* kRelations[] = {"beside", "behind", "near", "in front of", "to the left of",
                                      "to the right of", "above", "aligned with"};
constexpr const char* kVerbs[] = {"sits", "rests", "stands", "waits", "leans"};
constexpr const char* kDetails[] = {
    "Soft shadows fall gently across the floor and give every object a sense of weight and presence.",
    "The color palette stays muted and warm so that no single element overwhelms the others.",
    "A shallow depth of field keeps attention on the main subjects while the distant details blur softly.",
    "Small reflections on nearby surfaces hint at the direction of the light and tie the objects together.",
    "The camera sits slightly above eye level, which lets the viewer read the arrangement at a glance.",
    "Negative space around each subject keeps the layout readable and prevents any visual crowding.",
    "Textures remain crisp on the nearest objects and fade gradually toward the back of the scene.",
    "The overall mood is calm and inviting, as if the moment were captured on an ordinary afternoon."};
constexpr const char* kPositions[] = {"near the left edge", "in the center", "toward the right side",
                                      "in the lower foreground", "in the upper background"};

template <std::size_t N>
const char* pick(Rng& rng, const char* const (&items)[N]) {
  return items[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(N) - 1))];
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::uint64_t request_key(const ModelRequest& r) {
  return derive_seed(r.seed, hash_string(r.prompt, hash_string(r.task)));
}

Rgb color_from(std::uint64_t h) {
  return {static_cast<std::uint8_t>(h), static_cast<std::uint8_t>(h >> 8), static_cast<std::uint8_t>(h >> 16)};
}

std::vector<int> ids_in(const std::string& text) {
  static const std::regex re(R"(\bimage\s(\d{1,9}))", std::regex::icase);
  std::vector<int> ids;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
    const int id = std::stoi((*it)[1].str());
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
  }
  return ids;
}

}  // namespace

MockBackend::MockBackend(MockOptions options) : options_(options) {
  if (options_.embedding_dim < 1) throw std::invalid_argument("MockBackend: embedding_dim must be >= 1");
}

bool MockBackend::fault(std::string_view stage, double rate, std::uint64_t seed) const {
  if (rate <= 0.0) return false;
  Rng rng(derive_seed(seed, stage));
  return rng.uniform01() < rate;
}

ModelResponse MockBackend::invoke(ModelRole role, const ModelRequest& request) {
  switch (role) {
    case ModelRole::text_gen: return text(request);
    case ModelRole::vision_language: return vision(request);
    case ModelRole::image_gen: return image(request);
    case ModelRole::image_transform: return transform(request);
    case ModelRole::detector: return detect(request);
    case ModelRole::segmenter: return segment(request);
    case ModelRole::embedder: return embed(request);
  }
  throw std::invalid_argument("MockBackend: unknown role");
}

ModelResponse MockBackend::text(const ModelRequest& r) const {
  Rng rng(request_key(r));
  ModelResponse out;
  if (r.task == prompt_id::caption) {
    const auto n = r.vocabulary.size();
    if (n == 0) {
      out.text = fmt::format("A {} with a few scattered objects.", pick(rng, kSettings));
      return out;
    }
    const auto half = static_cast<std::int64_t>((n + 1) / 2);
    const auto k = static_cast<std::size_t>(rng.uniform_int(half, static_cast<std::int64_t>(n)));
    auto idx = rng.sample_indices(n, k);
    std::sort(idx.begin(), idx.end());
    std::ostringstream s;
    s << "In a " << pick(rng, kSettings) << ", ";
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& cat = r.vocabulary[idx[i]];
      if (i == 0) {
        s << "a " << cat << " " << pick(rng, kVerbs) << " at the center";
      } else {
        s << (i + 1 == idx.size() ? ", and a " : ", a ") << cat << " " << pick(rng, kVerbs) << " "
          << pick(rng, kRelations) << " the " << r.vocabulary[idx[i - 1]];
      }
    }
    s << ".";
    out.text = s.str();
    return out;
  }
  if (r.task == prompt_id::similar_classes) {
    if (r.vocabulary.empty()) {
      out.text = "none";
      return out;
    }
    const auto k = std::min<std::size_t>(r.vocabulary.size(), static_cast<std::size_t>(rng.uniform_int(2, 4)));
    const auto idx = rng.sample_indices(r.vocabulary.size(), k);
    std::string joined;
    for (std::size_t i = 0; i < idx.size(); ++i) joined += (i ? ", " : "") + r.vocabulary[idx[i]];
    out.text = joined;
    return out;
  }
  out.text = fmt::format("Mock response {:016x} for task '{}'.", rng.next(), r.task.empty() ? "generic" : r.task);
  return out;
}

ModelResponse MockBackend::vision(const ModelRequest& r) const {
  Rng rng(request_key(r));
  ModelResponse out;
  const auto& cats = r.vocabulary;
  const auto s_count = static_cast<int>(cats.size());

  if (r.task == prompt_id::object_filter) {
    if (fault("t2i_mismatch", options_.faults.t2i_mismatch, r.seed)) {
      out.text = fmt::format("['Missing class: {}'] Please revise.", cats.empty() ? "object" : cats.front());
      return out;
    }
    const std::string prompt = lower(r.prompt);
    std::vector<std::string> missing;
    for (const auto& c : cats) {
      if (prompt.find(lower(c)) == std::string::npos) missing.push_back("'Missing class: " + c + "'");
    }
    if (missing.empty()) {
      out.text = "Meets all criteria.";
    } else {
      std::string joined;
      for (std::size_t i = 0; i < missing.size(); ++i) joined += (i ? ", " : "") + missing[i];
      out.text = "[" + joined + "] Please revise.";
    }
    return out;
  }

  if (r.task == prompt_id::verify_boxes) {
    const bool reject_all = fault("ovd_verify", options_.faults.ovd_verify, r.seed);
    std::string lines;
    for (int i = 0; i < s_count; ++i) lines += fmt::format("{}: {}\n", i, reject_all ? "no" : "yes");
    out.text = lines.empty() ? "no boxes" : lines;
    return out;
  }

  if (r.task == prompt_id::instruction_with_ids || r.task == prompt_id::instruction_without_ids) {
    if (fault("vlm_validation", options_.faults.vlm_validation, r.seed)) {
      out.text = fmt::format("A zorblax from image {} hovers over a quuxite from image {}.", s_count + 5, s_count + 9);
      return out;
    }
    std::ostringstream s;
    if (s_count == 0) {
      out.text = "An empty scene.";
      return out;
    }
    if (r.task == prompt_id::instruction_with_ids) {
      if (s_count == 1) {
        s << "The " << cats[0] << " from image 0 " << pick(rng, kVerbs) << " near a window.";
      } else {
        for (int i = 0; i < s_count; ++i) {
          const int j = (i + 1) % s_count;
          s << (i ? " " : "") << "The " << cats[static_cast<std::size_t>(i)] << " from image " << i << " "
            << pick(rng, kVerbs) << " " << pick(rng, kRelations) << " the " << cats[static_cast<std::size_t>(j)]
            << " from image " << j << ".";
        }
      }
      if (rng.bernoulli(options_.stray_id_rate)) {
        s << " A " << cats[0] << " from image " << s_count + rng.uniform_int(0, 3) << " waits nearby.";
      }
    } else {
      s << "A harmonious " << pick(rng, kSettings) << " where a " << cats[0] << " " << pick(rng, kVerbs)
        << " in the foreground";
      for (int i = 1; i < s_count; ++i) {
        s << ", a " << cats[static_cast<std::size_t>(i)] << " " << pick(rng, kRelations) << " the "
          << cats[static_cast<std::size_t>(i - 1)];
      }
      s << ".";
    }
    out.text = s.str();
    return out;
  }

  if (r.task == prompt_id::cot) {
    std::vector<int> ids;
    for (int id : ids_in(r.prompt)) {
      if (id >= 0 && id < s_count) ids.push_back(id);
    }
    std::ostringstream s;
    s << "### Detailed Composition and Spatial Relationships\n\n#### Background:\nThe scene opens in a "
      << pick(rng, kSettings)
      << " with soft natural light and a calm, uncluttered backdrop that frames every element of the composition.\n\n"
         "#### Foreground:\n";
    auto mention = [&](std::size_t k, int id) {
      s << "The " << cats[k];
      if (id >= 0) s << " from image " << id;
      s << " is placed " << pick(rng, kPositions) << ", " << pick(rng, kRelations) << " the "
        << cats[(k + 1) % cats.size()] << ". ";
    };
    if (!ids.empty()) {
      for (int id : ids) mention(static_cast<std::size_t>(id), id);
    } else {
      for (std::size_t k = 0; k < cats.size(); ++k) mention(k, -1);
    }
    s << "\n\n#### Lighting and Atmosphere:\n";
    // The prompt asks for at least 300 words.
    const auto so_far = s.str();
    const auto order = rng.sample_indices(std::size(kDetails), std::size(kDetails));
    std::size_t next = 0;
    for (auto words = std::count(so_far.begin(), so_far.end(), ' '); words < 300; words += 14) {
      s << kDetails[order[next++ % order.size()]] << " ";
    }
    s << "\n\n#### Overall Scene:\nEach element keeps its own place while the spatial relationships stay clear and "
         "balanced, giving the composition a coherent flow from the background to the foreground.";
    out.text = s.str();
    return out;
  }

  out.text = fmt::format("Mock analysis {:016x}.", rng.next());
  return out;
}

ModelResponse MockBackend::image(const ModelRequest& r) const {
  const int w = r.width > 0 ? r.width : 256;
  const int h = r.height > 0 ? r.height : 256;
  Rng rng(request_key(r));
  Image img(w, h, color_from(rng.next()));
  const auto shapes = rng.uniform_int(2, 6);
  for (std::int64_t i = 0; i < shapes; ++i) {
    const int bw = static_cast<int>(rng.uniform_int(1, std::max(1, w / 2)));
    const int bh = static_cast<int>(rng.uniform_int(1, std::max(1, h / 2)));
    const int x0 = static_cast<int>(rng.uniform_int(0, w - bw));
    const int y0 = static_cast<int>(rng.uniform_int(0, h - bh));
    img.fill_rect({x0, y0, x0 + bw, y0 + bh}, color_from(rng.next()));
  }
  ModelResponse out;
  out.image = std::move(img);
  return out;
}

ModelResponse MockBackend::transform(const ModelRequest& r) const {
  if (r.images.empty()) throw ProtocolError("mock image_transform: no source image");
  const Image& src = r.images.front();
  const Rgb tint = color_from(request_key(r));
  Image img(src.width(), src.height());
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < src.width(); ++x) {
      const Rgb c = src.at(src.width() - 1 - x, y);
      img.set(x, y,
              {static_cast<std::uint8_t>((c.r + tint.r) / 2), static_cast<std::uint8_t>((c.g + tint.g) / 2),
               static_cast<std::uint8_t>((c.b + tint.b) / 2)});
    }
  }
  ModelResponse out;
  out.image = std::move(img);
  return out;
}

ModelResponse MockBackend::detect(const ModelRequest& r) const {
  if (r.images.empty()) throw ProtocolError("mock detector: no image");
  const Image& img = r.images.front();
  const int w = img.width(), h = img.height();
  Rng rng(derive_seed(r.seed, img.content_hash()));
  std::vector<Detection> dets;
  auto category = [&] {
    return r.vocabulary[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(r.vocabulary.size()) - 1))];
  };
  auto score = [&] { return static_cast<double>(rng.uniform_int(35, 99)) / 100.0; };
  // Main boxes cover at least 15% of each side, i.e. >= 2.25% of the image.
  const auto main_count = rng.uniform_int(2, 14);
  for (std::int64_t i = 0; i < main_count; ++i) {
    const int bw = static_cast<int>(rng.uniform_int(std::max(1, (w * 15 + 99) / 100), std::max(1, w * 6 / 10)));
    const int bh = static_cast<int>(rng.uniform_int(std::max(1, (h * 15 + 99) / 100), std::max(1, h * 6 / 10)));
    const int x0 = static_cast<int>(rng.uniform_int(0, w - bw));
    const int y0 = static_cast<int>(rng.uniform_int(0, h - bh));
    auto cat = category();
    dets.push_back({std::move(cat), {x0, y0, x0 + bw, y0 + bh}, score()});
  }
  // A few specks that the area filter is expected to drop.
  const auto noise_count = rng.uniform_int(0, 2);
  for (std::int64_t i = 0; i < noise_count; ++i) {
    const int bw = static_cast<int>(rng.uniform_int(1, std::max(1, w / 20)));
    const int bh = static_cast<int>(rng.uniform_int(1, std::max(1, h / 20)));
    const int x0 = static_cast<int>(rng.uniform_int(0, w - bw));
    const int y0 = static_cast<int>(rng.uniform_int(0, h - bh));
    auto cat = category();
    dets.push_back({std::move(cat), {x0, y0, x0 + bw, y0 + bh}, score()});
  }
  ModelResponse out;
  out.detections = std::move(dets);
  return out;
}

ModelResponse MockBackend::segment(const ModelRequest& r) const {
  if (r.images.empty() || !r.box) throw ProtocolError("mock segmenter: needs an image and a box");
  const Image& img = r.images.front();
  ModelResponse out;
  if (fault("segmentation", options_.faults.segmentation, r.seed)) {
    out.mask = RasterMask(img.width() + 1, img.height());
    return out;
  }
  RasterMask m(img.width(), img.height());
  const BBox& b = *r.box;
  const BBox shrunk{b.x_min + 1, b.y_min + 1, b.x_max - 1, b.y_max - 1};
  if (shrunk.valid()) m.fill(shrunk, true);
  out.mask = std::move(m);
  return out;
}

ModelResponse MockBackend::embed(const ModelRequest& r) const {
  std::uint64_t key;
  if (!r.images.empty()) {
    key = derive_seed(r.images.front().content_hash(), 0x1);
  } else {
    key = derive_seed(hash_string(r.prompt), 0x2);
  }
  Rng rng(derive_seed(key, options_.embedding_salt));
  std::vector<double> v(static_cast<std::size_t>(options_.embedding_dim));
  double sq = 0.0;
  for (auto& x : v) {
    x = rng.uniform01() * 2.0 - 1.0;
    sq += x * x;
  }
  const double n = std::sqrt(sq);
  for (auto& x : v) x /= n;
  ModelResponse out;
  out.embedding = std::move(v);
  return out;
}

std::unique_ptr<ModelGateway> make_mock_gateway(MockOptions options, int max_in_flight) {
  auto backend = std::make_shared<MockBackend>(options);
  std::vector<ModelGateway::Binding> bindings;
  for (auto role : kAllRoles) {
    ModelEndpoint ep;
    ep.role = role;
    ep.base_url = "mock://";
    ep.max_in_flight = max_in_flight;
    ep.backoff_initial_s = 0.0;
    bindings.push_back({ep, backend});
  }
  return std::make_unique<ModelGateway>(std::move(bindings));
}

}  // namespace msforge
