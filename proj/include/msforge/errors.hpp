#pragma once

#include <stdexcept>
#include <string>

namespace msforge {

/// Raised when text does not follow an expected grammar (layout blocks, RLE, manifests).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A model response that failed schema validation at the gateway.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport failure after the retry budget was exhausted.
class TransportError : public std::runtime_error {
 public:
  TransportError(std::string role, std::string context, const std::string& what)
      : std::runtime_error(what), role_(std::move(role)), context_(std::move(context)) {}

  const std::string& role() const noexcept { return role_; }
  const std::string& context() const noexcept { return context_; }

 private:
  std::string role_;
  std::string context_;
};

/// A pipeline stage gave up on a scene. `stage` is one of the accounting stage names.
class StageFailure : public std::runtime_error {
 public:
  StageFailure(std::string stage, std::string scene_id, const std::string& what)
      : std::runtime_error(what), stage_(std::move(stage)), scene_id_(std::move(scene_id)) {}

  const std::string& stage() const noexcept { return stage_; }
  const std::string& scene_id() const noexcept { return scene_id_; }

 private:
  std::string stage_;
  std::string scene_id_;
};

/// Record schema violation; `path` names the offending field, e.g. "subjects[2].box".
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace msforge
