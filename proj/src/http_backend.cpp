#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "msforge/http_backend.hpp"

#include <cstdlib>
#include <fstream>
#include <mutex>
#include <stdexcept>

#include <fmt/format.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "msforge/errors.hpp"

namespace msforge {

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("endpoint URL has no scheme: " + url);
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") throw std::invalid_argument("unsupported URL scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (scheme_end + 3 >= url.size() || path_start == scheme_end + 3) {
    throw std::invalid_argument("endpoint URL has no host: " + url);
  }
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

struct HttpBackend::Impl {
  ModelEndpoint endpoint;
  ParsedUrl url;
  std::string token;
};

HttpBackend::HttpBackend(ModelEndpoint endpoint) : impl_(std::make_unique<Impl>()) {
  endpoint.validate();
  impl_->url = split_url(endpoint.base_url);
  if (!endpoint.auth_token_env.empty()) {
    if (const char* tok = std::getenv(endpoint.auth_token_env.c_str())) impl_->token = tok;
  }
  impl_->endpoint = std::move(endpoint);
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::backend_id() const { return "http:" + impl_->endpoint.base_url; }

ModelResponse HttpBackend::invoke(ModelRole role, const ModelRequest& request) {
  const auto& ep = impl_->endpoint;
  // One client per call keeps the backend shareable across worker threads.
  httplib::Client client(impl_->url.scheme_host_port);
  const auto secs = static_cast<time_t>(ep.timeout_s);
  const auto usecs = static_cast<time_t>((ep.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  if (!impl_->token.empty()) client.set_bearer_token_auth(impl_->token);

  const auto body = request_to_json(role, request).dump();
  auto res = client.Post(impl_->url.path, body, "application/json");
  if (!res) {
    throw TransportError(std::string(role_name(role)), request.context,
                         fmt::format("POST {}{} failed: {}", impl_->url.scheme_host_port, impl_->url.path,
                                     httplib::to_string(res.error())));
  }
  if (res->status == 429 || res->status >= 500) {
    throw TransportError(std::string(role_name(role)), request.context, fmt::format("HTTP {}", res->status));
  }
  if (res->status < 200 || res->status >= 300) {
    throw ProtocolError(fmt::format("{} [{}]: HTTP {}: {}", role_name(role), request.context, res->status,
                                    res->body.substr(0, 200)));
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(fmt::format("{} [{}]: malformed response body: {}", role_name(role), request.context, e.what()));
  }
  return response_from_json(doc);
}

std::map<std::string, ModelEndpoint> load_endpoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read endpoint table " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(fmt::format("endpoint table {}: {}", path.string(), e.what()));
  }
  if (!doc.is_object()) throw std::invalid_argument("endpoint table must be a JSON object");
  std::map<std::string, ModelEndpoint> out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const auto& v = *it;
    try {
      ModelEndpoint ep;
      ep.role = parse_role(v.contains("role") ? v.at("role").get<std::string>() : it.key());
      ep.base_url = v.at("base_url").get<std::string>();
      split_url(ep.base_url);
      ep.auth_token_env = v.value("auth_token_env", "");
      ep.timeout_s = v.value("timeout_s", ep.timeout_s);
      ep.max_retries = v.value("max_retries", ep.max_retries);
      ep.max_in_flight = v.value("max_in_flight", ep.max_in_flight);
      ep.backoff_initial_s = v.value("backoff_initial_s", ep.backoff_initial_s);
      ep.embedding_dim = v.value("embedding_dim", ep.embedding_dim);
      ep.validate();
      out.emplace(it.key(), std::move(ep));
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(fmt::format("endpoint '{}': {}", it.key(), e.what()));
    }
  }
  return out;
}

std::unique_ptr<ModelGateway> make_http_gateway(const std::map<std::string, ModelEndpoint>& endpoints) {
  std::vector<ModelGateway::Binding> bindings;
  for (auto role : kAllRoles) {
    auto it = endpoints.find(std::string(role_name(role)));
    if (it == endpoints.end()) throw std::invalid_argument(fmt::format("endpoint table has no entry for {}", role_name(role)));
    bindings.push_back({it->second, std::make_shared<HttpBackend>(it->second)});
  }
  return std::make_unique<ModelGateway>(std::move(bindings));
}

}  // namespace msforge
