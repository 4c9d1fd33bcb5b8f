#include "msforge/cli.hpp"

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "msforge/augmentor.hpp"
#include "msforge/dataset_store.hpp"
#include "msforge/errors.hpp"
#include "msforge/evalkit.hpp"
#include "msforge/http_backend.hpp"
#include "msforge/tts_selector.hpp"

namespace msforge::cli {

using nlohmann::json;

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_sigint(int) { g_stop.store(true); }

class Logger {
 public:
  Logger(std::ostream& err, bool as_json) : err_(err), json_(as_json) {}

  void event(const std::string& name, json fields = json::object()) {
    if (json_) {
      fields["event"] = name;
      err_ << fields.dump() << '\n';
      return;
    }
    std::string line = name;
    for (auto it = fields.begin(); it != fields.end(); ++it) {
      line += fmt::format(" {}={}", it.key(), it->is_string() ? it->get<std::string>() : it->dump());
    }
    err_ << line << '\n';
  }

 private:
  std::ostream& err_;
  bool json_;
};

struct Gateways {
  std::unique_ptr<ModelGateway> main;
  std::unique_ptr<ModelGateway> embedder_b;
};

Gateways make_gateways(const RunConfig& cfg) {
  Gateways g;
  if (cfg.backend == BackendMode::mock) {
    MockOptions opts;
    opts.faults = cfg.faults;
    g.main = make_mock_gateway(opts);
    opts.embedding_salt = 1;
    g.embedder_b = make_mock_gateway(opts);
    return g;
  }
  if (cfg.endpoints_path.empty()) throw std::invalid_argument("--backend live requires --endpoints");
  const auto table = load_endpoints(cfg.endpoints_path);
  g.main = make_http_gateway(table);
  auto it = table.find("embedder_b");
  const auto& ep = it != table.end() ? it->second : table.at("embedder");
  if (ep.role != ModelRole::embedder) throw std::invalid_argument("embedder_b must have role embedder");
  std::vector<ModelGateway::Binding> b;
  b.push_back({ep, std::make_shared<HttpBackend>(ep)});
  g.embedder_b = std::make_unique<ModelGateway>(std::move(b));
  return g;
}

PromptLibrary make_prompts(const RunConfig& cfg) {
  PromptLibrary prompts;
  if (!cfg.prompts_dir.empty()) {
    if (!std::filesystem::is_directory(cfg.prompts_dir)) {
      throw std::invalid_argument("prompt directory not found: " + cfg.prompts_dir.string());
    }
    prompts.load_overrides(cfg.prompts_dir);
  }
  return prompts;
}

// Usage errors map to exit 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int cmd_forge(RunConfig& cfg, std::size_t scenes, std::optional<std::size_t> stop_after, std::ostream& out,
              std::ostream& err) {
  std::vector<std::string> vocabulary;
  Gateways gw;
  PromptLibrary prompts;
  try {
    if (cfg.output_root.empty()) throw std::invalid_argument("--out is required");
    if (cfg.vocabulary_path.empty()) throw std::invalid_argument("--vocab is required");
    cfg.validate();
    vocabulary = read_vocabulary(cfg.vocabulary_path);
    if (vocabulary.size() < static_cast<std::size_t>(2 * cfg.pipeline.scene.n_max)) {
      throw std::invalid_argument(fmt::format("vocabulary has {} categories; n_max {} needs at least {}",
                                              vocabulary.size(), cfg.pipeline.scene.n_max, 2 * cfg.pipeline.scene.n_max));
    }
    gw = make_gateways(cfg);
    prompts = make_prompts(cfg);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }

  Logger log(err, cfg.log_json);
  ForgeOptions opts;
  opts.root = cfg.output_root;
  opts.scene_count = scenes;
  opts.stop_after = stop_after;
  g_stop = false;
  opts.stop = &g_stop;
  opts.on_commit = [&](const SceneResult& r) {
    json f{{"scene_id", r.outcome.scene_id}, {"status", r.record ? "committed" : "failed"}};
    if (r.outcome.failed_stage) {
      f["stage"] = *r.outcome.failed_stage;
      f["message"] = r.outcome.message;
    }
    if (r.record) f["subjects"] = r.record->subjects.size();
    log.event("scene", f);
  };
  auto previous = std::signal(SIGINT, on_sigint);
  ForgeSummary summary;
  try {
    summary = run_forge(*gw.main, prompts, vocabulary, cfg.pipeline, opts);
  } catch (...) {
    std::signal(SIGINT, previous);
    throw;
  }
  std::signal(SIGINT, previous);

  out << report_stats(summary.stats);
  log.event("forge_done", {{"requested", summary.requested},
                           {"already_done", summary.already_done},
                           {"processed", summary.processed},
                           {"committed", summary.committed_records},
                           {"retained_fraction", summary.stats.retained_fraction()},
                           {"interrupted", summary.interrupted}});
  if (summary.interrupted) {
    err << "run interrupted; rerun the same command to resume\n";
    return kExitFailure;
  }
  return summary.stats.at("cot_short").passed >= 1 ? kExitOk : kExitFailure;
}

int cmd_augment(const RunConfig& cfg, const std::filesystem::path& in_path, std::filesystem::path out_path,
                std::ostream& out, std::ostream& err) {
  if (!std::filesystem::exists(in_path)) throw UsageError("manifest not found: " + in_path.string());
  if (out_path.empty()) out_path = in_path.parent_path() / "augmented.jsonl";
  if (std::filesystem::exists(out_path) && std::filesystem::equivalent(in_path, out_path)) {
    throw UsageError("--out must differ from --manifest");
  }
  Logger log(err, cfg.log_json);
  const auto entries = read_manifest(in_path);
  std::set<std::string> present;
  for (const auto& e : read_manifest(out_path)) present.insert(e.record.scene_id);
  ManifestWriter writer(out_path);
  std::size_t base = 0;
  std::size_t derived = 0;
  std::size_t failed = 0;
  for (const auto& e : entries) {
    if (e.record.derived()) continue;
    ++base;
    std::vector<TrainingRecord> batch{e.record};
    try {
      for (auto& d : reduce_subjects(e.record)) batch.push_back(std::move(d));
      for (const auto& r : batch) validate_record(r);
    } catch (const std::exception& ex) {
      ++failed;
      log.event("augment_failed", {{"scene_id", e.record.scene_id}, {"message", ex.what()}});
      continue;
    }
    for (const auto& r : batch) {
      if (present.contains(r.scene_id)) continue;
      writer.append(r);
      present.insert(r.scene_id);
      if (r.derived()) ++derived;
    }
  }
  out << fmt::format("base records: {}\nderived records written: {}\nfailed: {}\noutput: {}\n", base, derived, failed,
                     out_path.string());
  return failed == 0 ? kExitOk : kExitFailure;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read " + p.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

int cmd_select(const RunConfig& cfg, int n, std::uint64_t seed, const std::filesystem::path& instruction_path,
               const std::filesystem::path& subjects_dir, std::vector<std::string> categories,
               std::filesystem::path out_dir, std::ostream& out, std::ostream& err) {
  const auto instruction = read_text(instruction_path);
  if (instruction.empty()) throw UsageError("instruction file is empty");
  if (!std::filesystem::is_directory(subjects_dir)) throw UsageError("subjects directory not found: " + subjects_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(subjects_dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw UsageError("no .png subject images in " + subjects_dir.string());
  std::vector<Image> subjects;
  for (const auto& f : files) subjects.push_back(load_png(f));
  if (categories.empty()) {
    for (std::size_t i = 0; i < files.size(); ++i) {
      auto stem = files[i].stem().string();
      categories.push_back(is_valid_layout_label(stem) ? stem : fmt::format("subject_{}", i));
    }
  }
  if (out_dir.empty()) out_dir = cfg.output_root.empty() ? std::filesystem::path("select_out") : cfg.output_root;

  Gateways gw;
  try {
    gw = make_gateways(cfg);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  Logger log(err, cfg.log_json);
  MockPlanner planner(categories, cfg.pipeline.layout.grid_side);
  GatewayGenerator generator(*gw.main, cfg.pipeline.scene.image_width, cfg.pipeline.scene.image_height);
  DirectoryImageStore store(out_dir);
  std::vector<PlanCandidate> candidates;
  try {
    candidates = generate_branches(planner, instruction, subjects, n, seed);
  } catch (const std::runtime_error& e) {
    log.event("select_failed", {{"message", e.what()}});
    return kExitFailure;
  }
  realize_and_score(candidates, generator, *gw.main, instruction, store, "select", seed);

  json scores = json::array();
  for (const auto& c : candidates) {
    scores.push_back({{"branch", c.branch_index},
                      {"score", c.score ? json(*c.score) : json(nullptr)},
                      {"image", c.image ? json(*c.image) : json(nullptr)},
                      {"failed", c.failed},
                      {"error", c.error}});
  }
  std::vector<int> sizes;
  for (int k = 2; k < n; k *= 2) sizes.push_back(k);
  sizes.push_back(n);
  json curve = json::array();
  for (const auto& [size, best] : best_score_curve(candidates, sizes)) {
    curve.push_back({{"n", size}, {"best_score", best ? json(*best) : json(nullptr)}});
  }
  json doc{{"n", n}, {"seed", seed}, {"scores", scores}, {"curve", curve}};
  int code = kExitOk;
  try {
    const auto [idx, best] = select_best(candidates);
    doc["chosen_index"] = idx;
    doc["chosen_branch"] = best.branch_index;
    doc["chosen_image"] = (out_dir / *best.image).string();
    doc["chosen_score"] = *best.score;
    doc["chosen_layout"] = serialize_layout(best.layout);
  } catch (const std::invalid_argument& e) {
    doc["error"] = e.what();
    code = kExitFailure;
  }
  write_file_atomic(out_dir / "select.json", doc.dump(2) + "\n");
  out << doc.dump(2) << '\n';
  return code;
}

int cmd_eval(const RunConfig& cfg, const std::filesystem::path& manifest, std::filesystem::path images,
             const std::filesystem::path& layouts, const std::filesystem::path& report_path, std::ostream& out,
             std::ostream& err) {
  if (manifest.empty() && layouts.empty()) throw UsageError("eval needs --manifest and/or --layouts");
  Logger log(err, cfg.log_json);
  json doc = json::object();
  int code = kExitOk;
  if (!manifest.empty()) {
    if (!std::filesystem::exists(manifest)) throw UsageError("eval manifest not found: " + manifest.string());
    if (images.empty()) images = manifest.parent_path();
    Gateways gw;
    try {
      gw = make_gateways(cfg);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    const auto items = read_eval_manifest(manifest);
    DirectoryImageStore store(images);
    const auto report = evaluate(items, store, *gw.main, *gw.embedder_b, cfg.pipeline.global_seed);
    out << report_table(report);
    doc["metrics"] = report_to_json(report);
    if (report.skipped) log.event("eval_skipped", {{"count", report.skipped}});
    if (!items.empty() && report.overall.count == 0) code = kExitFailure;
  }
  if (!layouts.empty()) {
    std::ifstream in(layouts);
    if (!in) throw UsageError("cannot read " + layouts.string());
    std::string line;
    std::vector<double> ious, coverage;
    for (std::size_t number = 1; std::getline(in, line); ++number) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto row = json::parse(line);
        const auto a = layout_agreement(parse_layout(row.at("predicted").get<std::string>()),
                                        parse_layout(row.at("reference").get<std::string>()));
        ious.push_back(a.patch_iou);
        coverage.push_back(a.category_coverage);
      } catch (const std::exception& e) {
        throw FormatError(fmt::format("{} line {}: {}", layouts.string(), number, e.what()));
      }
    }
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double x : v) s += x;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    out << fmt::format("{:<22} {:>10} {:>10}\n", "layout agreement", "Patch IoU", "Coverage");
    out << fmt::format("{:<22} {:>10.3f} {:>10.3f}\n", fmt::format("measured (n={})", ious.size()), mean(ious),
                       mean(coverage));
    out << fmt::format("{:<22} {:>10.2f} {:>10.2f}\n", "reference", kReferencePatchIou, kReferenceCoverage);
    doc["layout_agreement"] = {{"count", ious.size()},
                               {"patch_iou", mean(ious)},
                               {"category_coverage", mean(coverage)},
                               {"reference", {{"patch_iou", kReferencePatchIou}, {"category_coverage", kReferenceCoverage}}}};
  }
  if (!report_path.empty()) write_file_atomic(report_path, doc.dump(2) + "\n");
  return code;
}

int cmd_stats(const RunConfig& cfg, std::filesystem::path root, bool as_json, std::ostream& out) {
  if (root.empty()) root = cfg.output_root;
  if (root.empty()) throw UsageError("stats needs --root");
  const auto path = root / kOutcomesFile;
  if (!std::filesystem::exists(path)) throw UsageError("no outcome log at " + path.string());
  const auto stats = stats_from_outcomes(read_outcomes(path));
  if (!stats.consistent()) {
    out << "inconsistent counters\n";
    return kExitFailure;
  }
  write_file_atomic(root / "stats.json", stats.to_json().dump(2) + "\n");
  write_file_atomic(root / "stats.txt", report_stats(stats));
  out << (as_json ? stats.to_json().dump(2) + "\n" : report_stats(stats));
  return kExitOk;
}

int cmd_validate(const std::filesystem::path& manifest, bool check_images, std::ostream& out, std::ostream& err) {
  if (!std::filesystem::is_regular_file(manifest)) throw UsageError("manifest not readable: " + manifest.string());
  std::vector<ManifestEntry> entries;
  try {
    entries = read_manifest(manifest);
  } catch (const FormatError& e) {
    err << "invalid: " << e.what() << '\n';
    return kExitFailure;
  }
  if (entries.empty()) {
    err << "warning: manifest is empty\n";
    out << "0 records valid\n";
    return kExitOk;
  }
  std::set<std::string> seen;
  const auto root = manifest.parent_path();
  for (const auto& e : entries) {
    const auto& r = e.record;
    try {
      if (!seen.insert(r.scene_id).second) throw ValidationError("scene_id", "duplicate record");
      validate_record(r);
      if (check_images) {
        auto need = [&](const std::string& field, const std::string& ref) {
          if (!std::filesystem::exists(root / ref)) throw ValidationError(field, "missing image " + ref);
        };
        need("target_image", r.target_image);
        for (std::size_t i = 0; i < r.subject_images.size(); ++i) need(fmt::format("subject_images[{}]", i), r.subject_images[i]);
      }
    } catch (const ValidationError& ex) {
      err << fmt::format("invalid: line {} scene_id {}: {}\n", e.line, r.scene_id, ex.what());
      return kExitFailure;
    }
  }
  out << fmt::format("{} records valid\n", entries.size());
  return kExitOk;
}

}  // namespace

void RunConfig::validate() const {
  pipeline.validate();
  for (double r : {faults.t2i_mismatch, faults.ovd_verify, faults.vlm_validation, faults.segmentation}) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("fault rates must lie in [0, 1]");
  }
}

std::vector<std::string> read_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read vocabulary " + path.string());
  std::vector<std::string> out;
  std::set<std::string> seen;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t\r");
    auto name = line.substr(b, e - b + 1);
    if (!is_valid_layout_label(name)) {
      throw std::invalid_argument(fmt::format("{} line {}: '{}' cannot be used as a category", path.string(), number, name));
    }
    if (seen.insert(name).second) out.push_back(std::move(name));
  }
  if (out.empty()) throw std::invalid_argument("vocabulary is empty: " + path.string());
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  auto& pc = cfg.pipeline;
  CLI::App app{"Multi-subject training data forge"};
  app.name(args.empty() ? "msforge" : std::filesystem::path(args[0]).filename().string());
  app.set_config("--config", "", "Flat key = value file; keys are the long option names");
  app.fallthrough();
  app.require_subcommand(1);

  app.add_option("--vocab,--vocabulary_path", cfg.vocabulary_path, "Category list, one per line");
  app.add_option("--out,--output_root", cfg.output_root, "Dataset root directory");
  app.add_option("--endpoints,--endpoint_table", cfg.endpoints_path, "JSON endpoint table (live backend)");
  app.add_option("--prompts,--prompts_dir", cfg.prompts_dir, "Directory of <template-id>.txt overrides");
  app.add_option("--backend", cfg.backend, "mock or live")
      ->transform(CLI::CheckedTransformer(std::map<std::string, BackendMode>{{"mock", BackendMode::mock},
                                                                            {"live", BackendMode::live}}));
  app.add_option("--n-min,--n_min", pc.scene.n_min, "Minimum subjects per scene")->capture_default_str();
  app.add_option("--n-max,--n_max", pc.scene.n_max, "Maximum subjects per scene")->capture_default_str();
  app.add_option("--delta", pc.scene.delta, "Area filter fraction")->capture_default_str();
  app.add_option("--grid,--M", pc.layout.grid_side, "Layout grid side M")->capture_default_str();
  app.add_option("--lambda", pc.layout.lambda, "IoU threshold scale")->capture_default_str();
  app.add_option("--threshold-scope,--threshold_scope", pc.layout.scope, "per_subject or pooled")
      ->transform(CLI::CheckedTransformer(std::map<std::string, ThresholdScope>{
          {"per_subject", ThresholdScope::per_subject}, {"pooled", ThresholdScope::pooled}}));
  app.add_option("--complex-prob,--complex_prob", pc.scene.complex_prob, "Probability of a complex transform")
      ->capture_default_str();
  app.add_option("--with-ids-ratio,--with_ids_ratio", pc.with_ids_ratio, "Share of instructions with subject ids")
      ->capture_default_str();
  app.add_option("--caption-attempts,--caption_attempts", pc.scene.caption_attempts)->capture_default_str();
  app.add_option("--cot-min-words,--cot_min_words", pc.narrative.cot_min_words)->capture_default_str();
  app.add_option("--width,--image_width", pc.scene.image_width, "Target image width")->capture_default_str();
  app.add_option("--height,--image_height", pc.scene.image_height, "Target image height")->capture_default_str();
  app.add_option("--workers", pc.workers, "Worker threads")->capture_default_str();
  app.add_option("--seed,--global_seed", pc.global_seed, "Global seed")->capture_default_str();
  app.add_option("--fault-t2i,--fault_t2i", cfg.faults.t2i_mismatch, "Mock: injected object-filter failure rate");
  app.add_option("--fault-ovd,--fault_ovd", cfg.faults.ovd_verify, "Mock: injected box-verification failure rate");
  app.add_option("--fault-vlm,--fault_vlm", cfg.faults.vlm_validation, "Mock: injected instruction failure rate");
  app.add_option("--fault-seg,--fault_seg", cfg.faults.segmentation, "Mock: injected segmentation failure rate");
  app.add_flag("--log-json,--log_json", cfg.log_json, "One JSON object per log event on stderr");

  std::size_t scenes = 100;
  std::optional<std::size_t> stop_after;
  auto* forge = app.add_subcommand("forge", "Run the scene pipeline and write manifest + stats");
  forge->add_option("--scenes", scenes, "Number of scenes")->capture_default_str();
  forge->add_option("--stop-after", stop_after, "Stop after this many committed scenes")->group("");

  std::filesystem::path manifest, out_path;
  auto* augment = app.add_subcommand("augment", "Add subject-count reduced records");
  augment->add_option("--manifest", manifest, "Input manifest")->required();
  augment->add_option("--to", out_path, "Output manifest (default: augmented.jsonl next to the input)");

  int n = 4;
  std::filesystem::path instruction_file, subjects_dir, select_out;
  std::vector<std::string> categories;
  auto* select = app.add_subcommand("select", "Best-of-N plan selection");
  select->add_option("--n", n, "Number of branches")->check(CLI::Range(1, 64))->capture_default_str();
  select->add_option("--instruction", instruction_file, "Instruction text file")->required();
  select->add_option("--subjects", subjects_dir, "Directory of subject PNGs")->required();
  select->add_option("--categories", categories, "Category per subject image")->delimiter(',');
  select->add_option("--dir", select_out, "Output directory (default: --out)");

  std::filesystem::path eval_manifest, eval_images, eval_layouts, eval_report;
  auto* eval = app.add_subcommand("eval", "Embedding metrics and layout agreement");
  eval->add_option("--manifest", eval_manifest, "Evaluation JSONL {generated, references, instruction, subject_count}");
  eval->add_option("--images", eval_images, "Image root (default: manifest directory)");
  eval->add_option("--layouts", eval_layouts, "JSONL {predicted, reference} layout texts");
  eval->add_option("--report", eval_report, "Write the JSON report here");

  std::filesystem::path stats_root;
  bool stats_json = false;
  auto* stats = app.add_subcommand("stats", "Per-stage failure accounting");
  stats->add_option("--root", stats_root, "Dataset root (default: --out)");
  stats->add_flag("--json", stats_json, "Print JSON instead of the table");

  std::filesystem::path validate_manifest;
  bool check_images = false;
  auto* validate = app.add_subcommand("validate", "Re-check every record of a manifest");
  validate->add_option("--manifest", validate_manifest, "Manifest to check")->required();
  validate->add_flag("--check-images", check_images, "Also require referenced image files");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  if (argv.empty()) argv.push_back("msforge");
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (forge->parsed()) return cmd_forge(cfg, scenes, stop_after, out, err);
    if (augment->parsed()) return cmd_augment(cfg, manifest, out_path, out, err);
    if (select->parsed()) {
      return cmd_select(cfg, n, pc.global_seed, instruction_file, subjects_dir, categories, select_out, out, err);
    }
    if (eval->parsed()) return cmd_eval(cfg, eval_manifest, eval_images, eval_layouts, eval_report, out, err);
    if (stats->parsed()) return cmd_stats(cfg, stats_root, stats_json, out);
    if (validate->parsed()) return cmd_validate(validate_manifest, check_images, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace msforge::cli
