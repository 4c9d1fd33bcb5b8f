#pragma once

// Uniform access to the external model roles the pipeline depends on. Every call goes
// through ModelGateway, which applies the retry policy and the per-endpoint in-flight
// cap, and schema-checks each response before handing it to the caller.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "msforge/geometry.hpp"
#include "msforge/image.hpp"

namespace msforge {

enum class ModelRole { text_gen, image_gen, vision_language, image_transform, detector, segmenter, embedder };

inline constexpr std::array<ModelRole, 7> kAllRoles = {
    ModelRole::text_gen,  ModelRole::image_gen, ModelRole::vision_language, ModelRole::image_transform,
    ModelRole::detector, ModelRole::segmenter, ModelRole::embedder};

std::string_view role_name(ModelRole role) noexcept;
/// Throws std::invalid_argument for unknown names.
ModelRole parse_role(std::string_view name);

struct ModelEndpoint {
  ModelRole role = ModelRole::text_gen;
  std::string base_url;
  std::string auth_token_env;
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_in_flight = 8;
  double backoff_initial_s = 0.5;
  int embedding_dim = 0;  // 0 accepts whatever dimension the embedder returns

  /// Throws std::invalid_argument when timeout <= 0, max_retries < 0 or max_in_flight < 1.
  void validate() const;
};

struct Detection {
  std::string category;
  BBox box;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct EmbeddingVector {
  std::vector<double> values;
  std::size_t dim() const noexcept { return values.size(); }
};

double dot(const EmbeddingVector& a, const EmbeddingVector& b);
/// Plain cosine; does not assume unit norm. Throws std::invalid_argument on dimension mismatch.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

enum class EmbedKind { text, image };

/// Inputs of one model call. Mirrors the "inputs" object of the wire protocol plus the
/// routing fields (task, context) that identify the call.
struct ModelRequest {
  std::string task;     // prompt template id or call kind, e.g. "caption", "verify_boxes"
  std::string context;  // scene or run identifier used in error reports
  std::string prompt;
  std::vector<Image> images;
  std::optional<BBox> box;
  std::vector<std::string> vocabulary;
  std::uint64_t seed = 0;
  int width = 0;  // requested output size for image generation
  int height = 0;
};

struct ModelResponse {
  std::optional<std::string> text;
  std::optional<Image> image;
  std::optional<std::vector<Detection>> detections;
  std::optional<RasterMask> mask;
  std::optional<std::vector<double>> embedding;
};

/// A model provider for one or more roles. Implementations throw TransportError for
/// retryable failures and ProtocolError for malformed replies.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual ModelResponse invoke(ModelRole role, const ModelRequest& request) = 0;
  virtual std::string backend_id() const = 0;
};

// Wire codec shared by the HTTP backend and test servers.
std::string make_request_id(ModelRole role, const ModelRequest& request);
nlohmann::json request_to_json(ModelRole role, const ModelRequest& request);
ModelRequest request_from_json(const nlohmann::json& doc, ModelRole* role_out = nullptr);
nlohmann::json response_to_json(const ModelResponse& response);
/// Throws ProtocolError when the document does not match the response schema.
ModelResponse response_from_json(const nlohmann::json& doc);

struct CallContext {
  std::string context;  // scene id
  std::string task;
  std::uint64_t seed = 0;
};

class ModelGateway {
 public:
  struct Binding {
    ModelEndpoint endpoint;
    std::shared_ptr<ModelBackend> backend;
  };

  explicit ModelGateway(std::vector<Binding> bindings);
  ~ModelGateway();
  ModelGateway(const ModelGateway&) = delete;
  ModelGateway& operator=(const ModelGateway&) = delete;

  std::string generate_text(const CallContext& ctx, const std::string& prompt,
                            const std::vector<std::string>& vocabulary = {});
  Image generate_image(const CallContext& ctx, const std::string& prompt, int width, int height);
  /// Vision-language query over `image`, optionally with an annotated overlay as a second input.
  std::string analyze_image(const CallContext& ctx, const std::string& prompt, const Image& image,
                            const Image* overlay = nullptr, const std::vector<std::string>& vocabulary = {});
  Image transform_image(const CallContext& ctx, const std::string& prompt, const Image& source);
  std::vector<Detection> detect(const CallContext& ctx, const Image& image, const std::vector<std::string>& vocabulary);
  RasterMask segment(const CallContext& ctx, const Image& image, const BBox& box);
  /// L2-normalized embedding.
  EmbeddingVector embed_text(const CallContext& ctx, const std::string& text);
  EmbeddingVector embed_image(const CallContext& ctx, const Image& image);

  /// Backend id per role for provenance records.
  std::string backend_id(ModelRole role) const;
  const ModelEndpoint& endpoint(ModelRole role) const;

 private:
  struct Slot;
  ModelResponse call(ModelRole role, const ModelRequest& request);
  Slot& slot(ModelRole role) const;

  std::array<std::unique_ptr<Slot>, kAllRoles.size()> slots_;
};

}  // namespace msforge
