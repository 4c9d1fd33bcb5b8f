#include "msforge/image_store.hpp"

#include <stdexcept>

namespace msforge {

std::string ImageStore::make_ref(const std::string& scene_id, const std::string& name) {
  return scene_id + "/" + name + ".png";
}

DirectoryImageStore::DirectoryImageStore(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

std::string DirectoryImageStore::put(const std::string& scene_id, const std::string& name, const Image& image) {
  const auto ref = make_ref(scene_id, name);
  const auto path = root_ / ref;
  std::filesystem::create_directories(path.parent_path());
  // Write-then-rename so an interrupted run never leaves a truncated PNG behind.
  auto tmp = path;
  tmp += ".tmp";
  save_png(image, tmp);
  std::filesystem::rename(tmp, path);
  return ref;
}

Image DirectoryImageStore::get(const std::string& ref) const { return load_png(root_ / ref); }

std::string MemoryImageStore::put(const std::string& scene_id, const std::string& name, const Image& image) {
  auto ref = make_ref(scene_id, name);
  std::lock_guard lock(mu_);
  images_[ref] = image;
  return ref;
}

Image MemoryImageStore::get(const std::string& ref) const {
  std::lock_guard lock(mu_);
  const auto it = images_.find(ref);
  if (it == images_.end()) throw std::out_of_range("no image stored under " + ref);
  return it->second;
}

std::size_t MemoryImageStore::size() const {
  std::lock_guard lock(mu_);
  return images_.size();
}

std::string DiscardImageStore::put(const std::string& scene_id, const std::string& name, const Image&) {
  return make_ref(scene_id, name);
}

Image DiscardImageStore::get(const std::string& ref) const {
  throw std::out_of_range("images are not retained by this store: " + ref);
}

}  // namespace msforge
