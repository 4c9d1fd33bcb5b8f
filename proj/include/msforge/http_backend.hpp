#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "msforge/model_gateway.hpp"

namespace msforge {

/// POSTs the JSON wire document to an endpoint's base URL. Connection errors, timeouts,
/// HTTP 429 and 5xx raise TransportError (retried by the gateway); any other non-2xx
/// status or an unparsable body raises ProtocolError.
class HttpBackend final : public ModelBackend {
 public:
  explicit HttpBackend(ModelEndpoint endpoint);
  ~HttpBackend() override;

  ModelResponse invoke(ModelRole role, const ModelRequest& request) override;
  std::string backend_id() const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ParsedUrl {
  std::string scheme_host_port;  // "http://host:port"
  std::string path;              // "/v1/infer", at least "/"
};

/// Throws std::invalid_argument unless the URL is http:// or https://.
ParsedUrl split_url(const std::string& url);

/// Endpoint table: a JSON object keyed by role name (plus any extra names such as
/// "embedder_b"), each value {base_url, auth_token_env?, timeout_s?, max_retries?,
/// max_in_flight?, backoff_initial_s?, embedding_dim?}. The role of an extra name is
/// taken from its "role" field. Throws std::invalid_argument on schema errors.
std::map<std::string, ModelEndpoint> load_endpoints(const std::filesystem::path& path);

/// Binds each given role to its own HttpBackend. Every role in kAllRoles must be present.
std::unique_ptr<ModelGateway> make_http_gateway(const std::map<std::string, ModelEndpoint>& endpoints);

}  // namespace msforge
