#include "msforge/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "msforge/errors.hpp"

namespace msforge {

using nlohmann::json;

SampleMetrics score_sample(const Image& generated, std::span<const Image> references, const std::string& instruction,
                           ModelGateway& embedder_a, ModelGateway& embedder_b, int subject_count, std::uint64_t seed) {
  if (references.empty()) throw std::invalid_argument("score_sample: at least one reference image is required");
  const CallContext ctx{"eval", "embed", seed};
  const auto gen_a = embedder_a.embed_image(ctx, generated);
  const auto gen_b = embedder_b.embed_image(ctx, generated);
  SampleMetrics m;
  m.subject_count = subject_count;
  double sum_a = 0.0;
  double sum_b = 0.0;
  for (const auto& ref : references) {
    sum_a += cosine(gen_a, embedder_a.embed_image(ctx, ref));
    sum_b += cosine(gen_b, embedder_b.embed_image(ctx, ref));
  }
  const auto n = static_cast<double>(references.size());
  m.image_image_a = sum_a / n;
  m.image_image_b = sum_b / n;
  m.image_text = cosine(gen_a, embedder_a.embed_text(ctx, instruction));
  return m;
}

namespace {

std::optional<double> sorted_mean(std::vector<double> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

json means_json(const MetricMeans& m) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"count", m.count},
          {"image_image_a", opt(m.image_image_a)},
          {"image_image_b", opt(m.image_image_b)},
          {"image_text", opt(m.image_text)}};
}

std::string cell(const std::optional<double>& v) { return v ? fmt::format("{:.3f}", *v) : std::string("-"); }

}  // namespace

MetricMeans aggregate(std::span<const SampleMetrics> samples) {
  std::vector<double> a, b, t;
  for (const auto& s : samples) {
    a.push_back(s.image_image_a);
    b.push_back(s.image_image_b);
    t.push_back(s.image_text);
  }
  return {samples.size(), sorted_mean(std::move(a)), sorted_mean(std::move(b)), sorted_mean(std::move(t))};
}

MetricReport sweep_by_subject_count(std::span<const SampleMetrics> samples) {
  std::map<int, std::vector<SampleMetrics>> by_count;
  for (int s = kMinBucket; s <= kMaxBucket; ++s) by_count[s];
  for (const auto& m : samples) {
    if (m.subject_count < kMinBucket || m.subject_count > kMaxBucket) {
      throw std::invalid_argument(fmt::format("subject count {} outside {}..{}", m.subject_count, kMinBucket, kMaxBucket));
    }
    by_count[m.subject_count].push_back(m);
  }
  MetricReport report;
  report.overall = aggregate(samples);
  for (const auto& [s, items] : by_count) report.buckets[s] = aggregate(items);
  return report;
}

json report_to_json(const MetricReport& report) {
  json buckets = json::array();
  for (const auto& [s, m] : report.buckets) {
    auto row = means_json(m);
    row["subject_count"] = s;
    buckets.push_back(row);
  }
  const ReferenceMetrics ref;
  return {{"overall", means_json(report.overall)},
          {"buckets", buckets},
          {"skipped", report.skipped},
          {"reference", {{"dino", ref.dino}, {"clip_i", ref.clip_i}, {"clip_t", ref.clip_t}}},
          {"columns", {{"image_image_a", "CLIP-I"}, {"image_image_b", "DINO"}, {"image_text", "CLIP-T"}}}};
}

std::string report_table(const MetricReport& report, const ReferenceMetrics& reference) {
  std::ostringstream out;
  out << fmt::format("{:<14} {:>7} {:>8} {:>8} {:>8}\n", "rows", "count", "DINO", "CLIP-I", "CLIP-T");
  const auto& o = report.overall;
  out << fmt::format("{:<14} {:>7} {:>8} {:>8} {:>8}\n", "measured", o.count, cell(o.image_image_b),
                     cell(o.image_image_a), cell(o.image_text));
  out << fmt::format("{:<14} {:>7} {:>8.3f} {:>8.3f} {:>8.3f}\n", "reference", "-", reference.dino, reference.clip_i,
                     reference.clip_t);
  for (const auto& [s, m] : report.buckets) {
    out << fmt::format("{:<14} {:>7} {:>8} {:>8} {:>8}\n", fmt::format("subjects={}", s), m.count,
                       cell(m.image_image_b), cell(m.image_image_a), cell(m.image_text));
  }
  if (report.skipped) out << fmt::format("skipped samples: {}\n", report.skipped);
  return out.str();
}

LayoutAgreement layout_agreement(const PatchGrid& predicted, const PatchGrid& reference) {
  if (predicted.side != reference.side || predicted.cells.size() != reference.cells.size()) {
    throw std::invalid_argument(
        fmt::format("layout_agreement: grid sides differ ({} vs {})", predicted.side, reference.side));
  }
  std::map<std::string, std::pair<std::set<std::size_t>, std::set<std::size_t>>> cells;
  for (std::size_t i = 0; i < predicted.cells.size(); ++i) {
    for (const auto& c : predicted.cells[i]) cells[c].first.insert(i);
    for (const auto& c : reference.cells[i]) cells[c].second.insert(i);
  }
  LayoutAgreement out;
  if (cells.empty()) {
    out.patch_iou = 1.0;
  } else {
    double sum = 0.0;
    for (const auto& [name, sets] : cells) {
      std::size_t inter = 0;
      for (auto i : sets.first) inter += sets.second.count(i);
      const auto uni = sets.first.size() + sets.second.size() - inter;
      sum += static_cast<double>(inter) / static_cast<double>(uni);
    }
    out.patch_iou = sum / static_cast<double>(cells.size());
  }
  std::size_t ref_classes = 0;
  std::size_t covered = 0;
  for (const auto& [name, sets] : cells) {
    if (sets.second.empty()) continue;
    ++ref_classes;
    if (!sets.first.empty()) ++covered;
  }
  out.category_coverage = ref_classes ? static_cast<double>(covered) / static_cast<double>(ref_classes) : 1.0;
  return out;
}

std::vector<EvalItem> read_eval_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<EvalItem> out;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto doc = json::parse(line);
      EvalItem item;
      item.generated = doc.at("generated").get<std::string>();
      item.references = doc.at("references").get<std::vector<std::string>>();
      item.instruction = doc.at("instruction").get<std::string>();
      item.subject_count = doc.at("subject_count").get<int>();
      out.push_back(std::move(item));
    } catch (const json::exception& e) {
      throw FormatError(fmt::format("{} line {}: {}", path.string(), number, e.what()));
    }
  }
  return out;
}

MetricReport evaluate(std::span<const EvalItem> items, const ImageStore& store, ModelGateway& embedder_a,
                      ModelGateway& embedder_b, std::uint64_t seed) {
  std::vector<SampleMetrics> samples;
  std::size_t skipped = 0;
  for (const auto& item : items) {
    try {
      const auto generated = store.get(item.generated);
      std::vector<Image> refs;
      for (const auto& r : item.references) refs.push_back(store.get(r));
      samples.push_back(score_sample(generated, refs, item.instruction, embedder_a, embedder_b, item.subject_count, seed));
    } catch (const TransportError&) {
      ++skipped;
    } catch (const ProtocolError&) {
      ++skipped;
    } catch (const std::runtime_error&) {
      ++skipped;  // unreadable image
    }
  }
  auto report = sweep_by_subject_count(samples);
  report.skipped = skipped;
  return report;
}

}  // namespace msforge
