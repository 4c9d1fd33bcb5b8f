#pragma once

// Portable seeded randomness. std distributions are implementation-defined, so every
// draw that feeds a mock or a sampling decision goes through these helpers instead.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace msforge {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// FNV-1a over raw bytes.
std::uint64_t hash_bytes(std::span<const std::uint8_t> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;
std::uint64_t hash_string(std::string_view s, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

/// Derive an independent child seed, e.g. branch j of a run or stage k of a scene.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) noexcept;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform in [lo, hi], inclusive. Requires lo <= hi.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Uniform in [0, 1).
  double uniform01();
  bool bernoulli(double p) { return uniform01() < p; }

  /// k distinct indices out of [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
};

}  // namespace msforge
