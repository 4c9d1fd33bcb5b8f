#include "msforge/model_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "msforge/errors.hpp"
#include "msforge/rng.hpp"

namespace msforge {

using nlohmann::json;

std::string_view role_name(ModelRole role) noexcept {
  switch (role) {
    case ModelRole::text_gen: return "text_gen";
    case ModelRole::image_gen: return "image_gen";
    case ModelRole::vision_language: return "vision_language";
    case ModelRole::image_transform: return "image_transform";
    case ModelRole::detector: return "detector";
    case ModelRole::segmenter: return "segmenter";
    case ModelRole::embedder: return "embedder";
  }
  return "unknown";
}

ModelRole parse_role(std::string_view name) {
  for (ModelRole r : kAllRoles) {
    if (role_name(r) == name) return r;
  }
  throw std::invalid_argument(fmt::format("unknown model role '{}'", name));
}

void ModelEndpoint::validate() const {
  if (!(timeout_s > 0.0)) throw std::invalid_argument(fmt::format("endpoint {}: timeout must be > 0", role_name(role)));
  if (max_retries < 0) throw std::invalid_argument(fmt::format("endpoint {}: max_retries must be >= 0", role_name(role)));
  if (max_in_flight < 1) throw std::invalid_argument(fmt::format("endpoint {}: max_in_flight must be >= 1", role_name(role)));
  if (backoff_initial_s < 0.0) throw std::invalid_argument(fmt::format("endpoint {}: negative backoff", role_name(role)));
  if (embedding_dim < 0) throw std::invalid_argument(fmt::format("endpoint {}: negative embedding_dim", role_name(role)));
}

double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) throw std::invalid_argument(fmt::format("embedding dimension mismatch: {} vs {}", a.dim(), b.dim()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a.values[i] * b.values[i];
  return s;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  const double ab = dot(a, b);
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(ab / (na * nb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Wire codec

namespace {

json box_to_json(const BBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

BBox box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ProtocolError("box must be an array of 4 integers");
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw ProtocolError("box must be an array of 4 integers");
  }
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

std::string image_to_base64(const Image& img) { return base64_encode(encode_png(img)); }

Image image_from_base64(const std::string& text) {
  try {
    return decode_png(base64_decode(text));
  } catch (const FormatError& e) {
    throw ProtocolError(std::string("image payload: ") + e.what());
  }
}

}  // namespace

std::string make_request_id(ModelRole role, const ModelRequest& request) {
  std::uint64_t h = hash_string(role_name(role));
  h = hash_string(request.task, h);
  h = hash_string(request.context, h);
  h = hash_string(request.prompt, h);
  h = derive_seed(h, request.seed);
  for (const auto& img : request.images) h = derive_seed(h, img.content_hash());
  return fmt::format("{:016x}", h);
}

json request_to_json(ModelRole role, const ModelRequest& request) {
  json inputs = json::object();
  if (!request.prompt.empty()) inputs["prompt"] = request.prompt;
  if (!request.images.empty()) {
    json imgs = json::array();
    for (const auto& img : request.images) imgs.push_back(image_to_base64(img));
    inputs["images"] = std::move(imgs);
  }
  if (request.box) inputs["box"] = box_to_json(*request.box);
  if (!request.vocabulary.empty()) inputs["vocabulary"] = request.vocabulary;
  if (request.width > 0) inputs["width"] = request.width;
  if (request.height > 0) inputs["height"] = request.height;
  inputs["seed"] = request.seed;
  return json{{"role", role_name(role)},
              {"task", request.task},
              {"context", request.context},
              {"inputs", std::move(inputs)},
              {"request_id", make_request_id(role, request)}};
}

ModelRequest request_from_json(const json& doc, ModelRole* role_out) {
  if (!doc.is_object() || !doc.contains("inputs") || !doc.contains("role")) {
    throw ProtocolError("request must be an object with role and inputs");
  }
  if (role_out) *role_out = parse_role(doc.at("role").get<std::string>());
  ModelRequest r;
  r.task = doc.value("task", "");
  r.context = doc.value("context", "");
  const auto& in = doc.at("inputs");
  r.prompt = in.value("prompt", "");
  if (in.contains("images")) {
    for (const auto& s : in.at("images")) r.images.push_back(image_from_base64(s.get<std::string>()));
  }
  if (in.contains("box")) r.box = box_from_json(in.at("box"));
  if (in.contains("vocabulary")) r.vocabulary = in.at("vocabulary").get<std::vector<std::string>>();
  r.width = in.value("width", 0);
  r.height = in.value("height", 0);
  r.seed = in.value("seed", std::uint64_t{0});
  return r;
}

json response_to_json(const ModelResponse& response) {
  json out = json::object();
  if (response.text) out["text"] = *response.text;
  if (response.image) out["image_base64"] = image_to_base64(*response.image);
  if (response.detections) {
    json dets = json::array();
    for (const auto& d : *response.detections) {
      dets.push_back({{"category", d.category}, {"box", box_to_json(d.box)}, {"score", d.score}});
    }
    out["detections"] = std::move(dets);
  }
  if (response.mask) {
    out["mask_rle"] = {{"width", response.mask->width()},
                       {"height", response.mask->height()},
                       {"counts", response.mask->to_rle()}};
  }
  if (response.embedding) out["embedding"] = *response.embedding;
  return json{{"output", std::move(out)}};
}

ModelResponse response_from_json(const json& doc) {
  if (!doc.is_object() || !doc.contains("output") || !doc.at("output").is_object()) {
    throw ProtocolError("response must be an object with an 'output' object");
  }
  const auto& out = doc.at("output");
  ModelResponse r;
  try {
    if (out.contains("text")) {
      if (!out.at("text").is_string()) throw ProtocolError("output.text must be a string");
      r.text = out.at("text").get<std::string>();
    }
    if (out.contains("image_base64")) r.image = image_from_base64(out.at("image_base64").get<std::string>());
    if (out.contains("detections")) {
      std::vector<Detection> dets;
      for (const auto& d : out.at("detections")) {
        if (!d.is_object()) throw ProtocolError("detections[] entries must be objects");
        dets.push_back({d.at("category").get<std::string>(), box_from_json(d.at("box")), d.at("score").get<double>()});
      }
      r.detections = std::move(dets);
    }
    if (out.contains("mask_rle")) {
      const auto& m = out.at("mask_rle");
      const auto counts = m.at("counts").get<std::vector<std::int64_t>>();
      try {
        r.mask = RasterMask::from_rle(m.at("width").get<int>(), m.at("height").get<int>(), counts);
      } catch (const std::invalid_argument& e) {
        throw ProtocolError(std::string("mask_rle: ") + e.what());
      }
    }
    if (out.contains("embedding")) r.embedding = out.at("embedding").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed response body: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// Gateway

struct ModelGateway::Slot {
  explicit Slot(Binding b)
      : endpoint(std::move(b.endpoint)), backend(std::move(b.backend)), in_flight(endpoint.max_in_flight) {}

  ModelEndpoint endpoint;
  std::shared_ptr<ModelBackend> backend;
  std::counting_semaphore<1 << 16> in_flight;
};

ModelGateway::ModelGateway(std::vector<Binding> bindings) {
  for (auto& b : bindings) {
    b.endpoint.validate();
    if (!b.backend) throw std::invalid_argument(fmt::format("no backend bound for role {}", role_name(b.endpoint.role)));
    auto& s = slots_[static_cast<std::size_t>(b.endpoint.role)];
    if (s) throw std::invalid_argument(fmt::format("role {} bound twice", role_name(b.endpoint.role)));
    s = std::make_unique<Slot>(std::move(b));
  }
}

ModelGateway::~ModelGateway() = default;

ModelGateway::Slot& ModelGateway::slot(ModelRole role) const {
  const auto& s = slots_[static_cast<std::size_t>(role)];
  if (!s) throw std::invalid_argument(fmt::format("no endpoint configured for role {}", role_name(role)));
  return *s;
}

std::string ModelGateway::backend_id(ModelRole role) const { return slot(role).backend->backend_id(); }

const ModelEndpoint& ModelGateway::endpoint(ModelRole role) const { return slot(role).endpoint; }

ModelResponse ModelGateway::call(ModelRole role, const ModelRequest& request) {
  Slot& s = slot(role);
  for (int attempt = 0;; ++attempt) {
    try {
      s.in_flight.acquire();
      struct Release {
        Slot& s;
        ~Release() { s.in_flight.release(); }
      } release{s};
      return s.backend->invoke(role, request);
    } catch (const TransportError& e) {
      if (attempt >= s.endpoint.max_retries) {
        throw TransportError(std::string(role_name(role)), request.context,
                             fmt::format("{} [{}] transport failure after {} attempt(s): {}", role_name(role),
                                         request.context, attempt + 1, e.what()));
      }
      const double wait = s.endpoint.backoff_initial_s * std::pow(2.0, attempt);
      if (wait > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
  }
}

namespace {

[[noreturn]] void protocol_fail(ModelRole role, const CallContext& ctx, const std::string& msg) {
  throw ProtocolError(fmt::format("{} [{}] {}: {}", role_name(role), ctx.context, ctx.task, msg));
}

ModelRequest base_request(const CallContext& ctx) {
  ModelRequest r;
  r.task = ctx.task;
  r.context = ctx.context;
  r.seed = ctx.seed;
  return r;
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

const std::string& require_text(ModelRole role, const CallContext& ctx, const ModelResponse& r) {
  if (!r.text) protocol_fail(role, ctx, "response has no text");
  if (blank(*r.text)) protocol_fail(role, ctx, "empty text response");
  return *r.text;
}

}  // namespace

std::string ModelGateway::generate_text(const CallContext& ctx, const std::string& prompt,
                                        const std::vector<std::string>& vocabulary) {
  if (blank(prompt)) throw std::invalid_argument("generate_text: empty prompt");
  auto req = base_request(ctx);
  req.prompt = prompt;
  req.vocabulary = vocabulary;
  return require_text(ModelRole::text_gen, ctx, call(ModelRole::text_gen, req));
}

Image ModelGateway::generate_image(const CallContext& ctx, const std::string& prompt, int width, int height) {
  if (blank(prompt)) throw std::invalid_argument("generate_image: empty prompt");
  if (width < 1 || height < 1) throw std::invalid_argument("generate_image: size must be positive");
  auto req = base_request(ctx);
  req.prompt = prompt;
  req.width = width;
  req.height = height;
  auto r = call(ModelRole::image_gen, req);
  if (!r.image || r.image->empty()) protocol_fail(ModelRole::image_gen, ctx, "response has no image");
  if (r.image->width() != width || r.image->height() != height) {
    protocol_fail(ModelRole::image_gen, ctx,
                  fmt::format("image is {}x{}, requested {}x{}", r.image->width(), r.image->height(), width, height));
  }
  return std::move(*r.image);
}

std::string ModelGateway::analyze_image(const CallContext& ctx, const std::string& prompt, const Image& image,
                                        const Image* overlay, const std::vector<std::string>& vocabulary) {
  if (blank(prompt)) throw std::invalid_argument("analyze_image: empty prompt");
  if (image.empty()) throw std::invalid_argument("analyze_image: empty image");
  auto req = base_request(ctx);
  req.prompt = prompt;
  req.images.push_back(image);
  if (overlay) req.images.push_back(*overlay);
  req.vocabulary = vocabulary;
  return require_text(ModelRole::vision_language, ctx, call(ModelRole::vision_language, req));
}

Image ModelGateway::transform_image(const CallContext& ctx, const std::string& prompt, const Image& source) {
  if (blank(prompt)) throw std::invalid_argument("transform_image: empty prompt");
  if (source.empty()) throw std::invalid_argument("transform_image: empty source image");
  auto req = base_request(ctx);
  req.prompt = prompt;
  req.images.push_back(source);
  auto r = call(ModelRole::image_transform, req);
  if (!r.image || r.image->empty()) protocol_fail(ModelRole::image_transform, ctx, "response has no image");
  return std::move(*r.image);
}

std::vector<Detection> ModelGateway::detect(const CallContext& ctx, const Image& image,
                                            const std::vector<std::string>& vocabulary) {
  if (vocabulary.empty()) throw std::invalid_argument("detect: empty vocabulary");
  if (image.empty()) throw std::invalid_argument("detect: empty image");
  auto req = base_request(ctx);
  req.images.push_back(image);
  req.vocabulary = vocabulary;
  auto r = call(ModelRole::detector, req);
  if (!r.detections) protocol_fail(ModelRole::detector, ctx, "response has no detections field");
  for (const auto& d : *r.detections) {
    if (d.category.empty()) protocol_fail(ModelRole::detector, ctx, "detection with empty category");
    if (std::find(vocabulary.begin(), vocabulary.end(), d.category) == vocabulary.end()) {
      protocol_fail(ModelRole::detector, ctx, fmt::format("category '{}' is not in the vocabulary", d.category));
    }
    if (!(d.score >= 0.0 && d.score <= 1.0)) protocol_fail(ModelRole::detector, ctx, "score outside [0,1]");
    if (!d.box.within(image.width(), image.height())) protocol_fail(ModelRole::detector, ctx, "box outside image");
  }
  return std::move(*r.detections);
}

RasterMask ModelGateway::segment(const CallContext& ctx, const Image& image, const BBox& box) {
  require_box_within(box, image.width(), image.height());
  auto req = base_request(ctx);
  req.images.push_back(image);
  req.box = box;
  auto r = call(ModelRole::segmenter, req);
  if (!r.mask) protocol_fail(ModelRole::segmenter, ctx, "response has no mask");
  if (r.mask->width() != image.width() || r.mask->height() != image.height()) {
    protocol_fail(ModelRole::segmenter, ctx,
                  fmt::format("mask is {}x{}, image is {}x{}", r.mask->width(), r.mask->height(), image.width(),
                              image.height()));
  }
  return std::move(*r.mask);
}

namespace {

EmbeddingVector normalized(ModelRole role, const CallContext& ctx, const ModelEndpoint& ep, ModelResponse r) {
  if (!r.embedding || r.embedding->empty()) protocol_fail(role, ctx, "response has no embedding");
  if (ep.embedding_dim > 0 && r.embedding->size() != static_cast<std::size_t>(ep.embedding_dim)) {
    protocol_fail(role, ctx, fmt::format("embedding has dim {}, endpoint declares {}", r.embedding->size(), ep.embedding_dim));
  }
  double sq = 0.0;
  for (double v : *r.embedding) {
    if (!std::isfinite(v)) protocol_fail(role, ctx, "non-finite embedding value");
    sq += v * v;
  }
  if (sq == 0.0) protocol_fail(role, ctx, "zero embedding");
  const double n = std::sqrt(sq);
  EmbeddingVector e{std::move(*r.embedding)};
  for (double& v : e.values) v /= n;
  return e;
}

}  // namespace

EmbeddingVector ModelGateway::embed_text(const CallContext& ctx, const std::string& text) {
  if (text.empty()) throw std::invalid_argument("embed: empty text payload");
  auto req = base_request(ctx);
  req.prompt = text;
  return normalized(ModelRole::embedder, ctx, endpoint(ModelRole::embedder), call(ModelRole::embedder, req));
}

EmbeddingVector ModelGateway::embed_image(const CallContext& ctx, const Image& image) {
  if (image.empty()) throw std::invalid_argument("embed: empty image payload");
  auto req = base_request(ctx);
  req.images.push_back(image);
  return normalized(ModelRole::embedder, ctx, endpoint(ModelRole::embedder), call(ModelRole::embedder, req));
}

}  // namespace msforge
