#pragma once

// Command-line front end: forge, augment, select, eval, stats, validate.
// Exit codes: 0 success, 1 domain failure, 2 usage or configuration error.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "msforge/mock_backend.hpp"
#include "msforge/pipeline.hpp"

namespace msforge::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

enum class BackendMode { mock, live };

struct RunConfig {
  std::filesystem::path vocabulary_path;
  std::filesystem::path output_root;
  std::filesystem::path endpoints_path;
  std::filesystem::path prompts_dir;
  BackendMode backend = BackendMode::mock;
  PipelineConfig pipeline;
  FaultRates faults;  // mock backend only
  bool log_json = false;

  /// Throws std::invalid_argument naming the offending setting.
  void validate() const;
};

/// One category per line; blank lines and '#' comments skipped, duplicates dropped.
/// Throws std::invalid_argument on an unreadable file or an unusable name.
std::vector<std::string> read_vocabulary(const std::filesystem::path& path);

/// Runs one command line (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace msforge::cli
