#include "msforge/dataset_store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "msforge/errors.hpp"

namespace msforge {

using nlohmann::json;

namespace {

std::runtime_error sys_error(const std::string& what) {
  return std::runtime_error(fmt::format("{}: {}", what, std::strerror(errno)));
}

int open_append(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw sys_error("cannot open " + path.string());
  return fd;
}

std::uint64_t file_size(int fd) {
  struct stat st {};
  if (::fstat(fd, &st) != 0) throw sys_error("fstat");
  return static_cast<std::uint64_t>(st.st_size);
}

// Drop bytes after the last newline (a line torn by a crash).
void repair_tail(const std::filesystem::path& path, int fd) {
  const auto size = file_size(fd);
  if (size == 0) return;
  std::ifstream in(path, std::ios::binary);
  std::uint64_t keep = 0;
  std::uint64_t pos = 0;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    const auto n = static_cast<std::uint64_t>(in.gcount());
    for (std::uint64_t i = 0; i < n; ++i) {
      if (buf[i] == '\n') keep = pos + i + 1;
    }
    pos += n;
  }
  if (keep != size && ::ftruncate(fd, static_cast<off_t>(keep)) != 0) throw sys_error("ftruncate " + path.string());
}

// One line, all or nothing. Returns the offset of the line start.
std::uint64_t append_line(int fd, const std::string& line) {
  const auto start = file_size(fd);
  std::size_t done = 0;
  while (done < line.size()) {
    const auto n = ::write(fd, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const int saved = errno;
      if (::ftruncate(fd, static_cast<off_t>(start)) != 0) {
        // nothing more we can do; the next open repairs the tail
      }
      errno = saved;
      throw sys_error("append failed");
    }
    done += static_cast<std::size_t>(n);
  }
  return start;
}

}  // namespace

std::size_t stage_index(std::string_view stage) {
  for (std::size_t i = 0; i < kStages.size(); ++i) {
    if (kStages[i] == stage) return i;
  }
  throw std::invalid_argument(fmt::format("unknown stage '{}'", stage));
}

json outcome_to_json(const SceneOutcome& o) {
  return {{"scene_id", o.scene_id},
          {"failed_stage", o.failed_stage ? json(*o.failed_stage) : json(nullptr)},
          {"message", o.message},
          {"run_level", o.run_level}};
}

SceneOutcome outcome_from_json(const json& doc) {
  SceneOutcome o;
  o.scene_id = doc.at("scene_id").get<std::string>();
  if (const auto& f = doc.at("failed_stage"); !f.is_null()) {
    o.failed_stage = f.get<std::string>();
    stage_index(*o.failed_stage);
  }
  o.message = doc.value("message", "");
  o.run_level = doc.value("run_level", false);
  return o;
}

void PipelineStats::record(std::string_view stage, bool passed) {
  auto& c = counters_[stage_index(stage)];
  ++c.attempted;
  ++(passed ? c.passed : c.failed);
}

void PipelineStats::record_scene(const SceneOutcome& outcome) {
  if (outcome.run_level) {
    record("simdict", !outcome.failed_stage);
    return;
  }
  const auto stop = outcome.failed_stage ? stage_index(*outcome.failed_stage) : kSceneStageCount;
  if (stop >= kSceneStageCount && outcome.failed_stage) {
    record(*outcome.failed_stage, false);
    return;
  }
  for (std::size_t i = 0; i < stop; ++i) record(kStages[i], true);
  if (outcome.failed_stage) record(kStages[stop], false);
}

void PipelineStats::merge(const PipelineStats& other) {
  for (std::size_t i = 0; i < counters_.size(); ++i) {
    counters_[i].attempted += other.counters_[i].attempted;
    counters_[i].passed += other.counters_[i].passed;
    counters_[i].failed += other.counters_[i].failed;
  }
}

double PipelineStats::retained_fraction() const {
  const auto first = at(kStages.front()).attempted;
  if (first == 0) return 0.0;
  return static_cast<double>(at("cot_short").passed) / static_cast<double>(first);
}

bool PipelineStats::consistent() const {
  return std::all_of(counters_.begin(), counters_.end(),
                     [](const StageCounter& c) { return c.attempted == c.passed + c.failed; });
}

json PipelineStats::to_json() const {
  json stages = json::object();
  for (std::size_t i = 0; i < kStages.size(); ++i) {
    const auto& c = counters_[i];
    stages[std::string(kStages[i])] = {{"attempted", c.attempted}, {"passed", c.passed}, {"failed", c.failed}};
  }
  return {{"stages", stages}, {"retained_fraction", retained_fraction()}};
}

PipelineStats PipelineStats::from_json(const json& doc) {
  PipelineStats s;
  const auto& stages = doc.at("stages");
  for (auto it = stages.begin(); it != stages.end(); ++it) {
    auto& c = s.counters_[stage_index(it.key())];
    c.attempted = it->at("attempted").get<std::int64_t>();
    c.passed = it->at("passed").get<std::int64_t>();
    c.failed = it->at("failed").get<std::int64_t>();
  }
  return s;
}

double independent_retention(std::span<const ReferenceRate> rates) {
  double keep = 1.0;
  for (const auto& r : rates) keep *= 1.0 - r.percent / 100.0;
  return keep;
}

std::string report_stats(const PipelineStats& stats) {
  std::ostringstream out;
  out << fmt::format("{:<18} {:>10} {:>10} {:>10} {:>10} {:>11}\n", "stage", "attempted", "passed", "failed",
                     "failure %", "reference %");
  for (auto stage : kStages) {
    const auto& c = stats.at(stage);
    const auto rate = c.attempted ? fmt::format("{:.1f}", 100.0 * static_cast<double>(c.failed) / static_cast<double>(c.attempted))
                                  : std::string("-");
    std::string ref = "-";
    for (const auto& r : kReferenceRates) {
      if (r.stage == stage) ref = fmt::format("{:.1f}", r.percent);
    }
    out << fmt::format("{:<18} {:>10} {:>10} {:>10} {:>10} {:>11}\n", stage, c.attempted, c.passed, c.failed, rate, ref);
  }
  out << fmt::format("\nretained samples (measured):             {:.1f}%\n", 100.0 * stats.retained_fraction());
  out << fmt::format("retained samples (reference):            {:.1f}%\n", kReferenceRetainedPercent);
  out << fmt::format("retained if reference rates independent: {:.1f}%\n", 100.0 * independent_retention());
  out << "reference stage labels:\n";
  for (const auto& r : kReferenceRates) out << fmt::format("  {:<18} {}\n", r.stage, r.label);
  return out.str();
}

ManifestWriter::ManifestWriter(std::filesystem::path path) : path_(std::move(path)), fd_(open_append(path_)) {
  try {
    repair_tail(path_, fd_);
  } catch (...) {
    ::close(fd_);
    throw;
  }
}

ManifestWriter::~ManifestWriter() {
  if (fd_ >= 0) ::close(fd_);
}

CommitReceipt ManifestWriter::append(const TrainingRecord& record) {
  validate_record(record);
  const auto line = record_to_json(record).dump() + "\n";
  std::lock_guard lock(mu_);
  const auto offset = append_line(fd_, line);
  return {record.scene_id, offset, line.size()};
}

JsonlAppender::JsonlAppender(std::filesystem::path path) : path_(std::move(path)), fd_(open_append(path_)) {
  try {
    repair_tail(path_, fd_);
  } catch (...) {
    ::close(fd_);
    throw;
  }
}

JsonlAppender::~JsonlAppender() {
  if (fd_ >= 0) ::close(fd_);
}

void JsonlAppender::append(const json& doc) {
  const auto line = doc.dump() + "\n";
  std::lock_guard lock(mu_);
  append_line(fd_, line);
}

namespace {

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) return;
    throw std::runtime_error("cannot read " + path.string());
  }
  std::string line;
  std::size_t number = 0;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    fn(number, start, line);
  }
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::vector<ManifestEntry> out;
  for_each_line(path, [&](std::size_t number, std::uint64_t offset, const std::string& line) {
    json doc;
    try {
      doc = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(fmt::format("{} line {}: malformed JSON ({})", path.string(), number, e.what()));
    }
    try {
      out.push_back({number, offset, record_from_json(doc)});
    } catch (const ValidationError& e) {
      throw FormatError(fmt::format("{} line {}: {}", path.string(), number, e.what()));
    }
  });
  return out;
}

std::vector<std::string> resume_plan(const std::filesystem::path& manifest, const std::vector<std::string>& requested) {
  std::set<std::string> done;
  for (const auto& e : read_manifest(manifest)) {
    if (!e.record.derived()) done.insert(e.record.scene_id);
  }
  std::vector<std::string> pending;
  for (const auto& id : requested) {
    if (!done.contains(id)) pending.push_back(id);
  }
  return pending;
}

std::vector<SceneOutcome> read_outcomes(const std::filesystem::path& path) {
  std::vector<SceneOutcome> out;
  std::map<std::string, std::size_t> where;
  for_each_line(path, [&](std::size_t number, std::uint64_t, const std::string& line) {
    SceneOutcome o;
    try {
      o = outcome_from_json(json::parse(line));
    } catch (const std::exception& e) {
      throw FormatError(fmt::format("{} line {}: {}", path.string(), number, e.what()));
    }
    if (auto it = where.find(o.scene_id); it != where.end()) {
      out[it->second] = std::move(o);
    } else {
      where.emplace(o.scene_id, out.size());
      out.push_back(std::move(o));
    }
  });
  return out;
}

PipelineStats stats_from_outcomes(const std::vector<SceneOutcome>& outcomes) {
  PipelineStats s;
  for (const auto& o : outcomes) s.record_scene(o);
  return s;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace msforge
