#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <string>

#include "msforge/image.hpp"

namespace msforge {

/// Where pipeline images go. References are paths relative to the dataset root,
/// "{scene_id}/{name}.png".
class ImageStore {
 public:
  virtual ~ImageStore() = default;
  virtual std::string put(const std::string& scene_id, const std::string& name, const Image& image) = 0;
  virtual Image get(const std::string& ref) const = 0;

  static std::string make_ref(const std::string& scene_id, const std::string& name);
};

/// PNG files under a root directory.
class DirectoryImageStore final : public ImageStore {
 public:
  explicit DirectoryImageStore(std::filesystem::path root);
  std::string put(const std::string& scene_id, const std::string& name, const Image& image) override;
  Image get(const std::string& ref) const override;
  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
};

class MemoryImageStore final : public ImageStore {
 public:
  std::string put(const std::string& scene_id, const std::string& name, const Image& image) override;
  Image get(const std::string& ref) const override;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, Image> images_;
};

/// Hands out references without keeping pixels; for accounting-only runs.
class DiscardImageStore final : public ImageStore {
 public:
  std::string put(const std::string& scene_id, const std::string& name, const Image& image) override;
  Image get(const std::string& ref) const override;
};

}  // namespace msforge
