#include "msforge/pipeline.hpp"

#include <condition_variable>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "msforge/errors.hpp"
#include "msforge/rng.hpp"

namespace msforge {

namespace {

template <typename Fn>
auto in_stage(std::string_view stage, const std::string& scene_id, Fn&& fn) {
  try {
    return fn();
  } catch (const TransportError& e) {
    throw StageFailure(std::string(stage), scene_id, e.what());
  } catch (const ProtocolError& e) {
    throw StageFailure(std::string(stage), scene_id, e.what());
  }
}

}  // namespace

void PipelineConfig::validate() const {
  scene.validate();
  if (layout.grid_side < 1) throw std::invalid_argument("grid side M must be >= 1");
  if (!(layout.lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (scene.image_width < layout.grid_side || scene.image_height < layout.grid_side) {
    throw std::invalid_argument("image size must be at least the grid side");
  }
  if (!(with_ids_ratio >= 0.0 && with_ids_ratio <= 1.0)) throw std::invalid_argument("with_ids_ratio must lie in [0, 1]");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (max_related < 1) throw std::invalid_argument("max_related must be >= 1");
  if (narrative.cot_min_words < 0) throw std::invalid_argument("cot_min_words must be >= 0");
  if (narrative.cot_max_regenerations < 0) throw std::invalid_argument("cot_max_regenerations must be >= 0");
}

std::string scene_id_for(std::size_t index) { return fmt::format("scene_{:06d}", index); }

std::uint64_t scene_seed(std::uint64_t global_seed, const std::string& scene_id) {
  return derive_seed(global_seed, scene_id);
}

SceneResult forge_scene(ModelGateway& gateway, const PromptLibrary& prompts, const SimilarityDict& similar,
                        std::span<const std::string> vocabulary, const PipelineConfig& config,
                        const std::string& scene_id, ImageStore& store) {
  SceneResult result;
  result.outcome.scene_id = scene_id;
  const auto seed = scene_seed(config.global_seed, scene_id);
  Provenance prov;
  prov.scene_seed = seed;
  auto stage_seed = [&](const char* name) {
    const auto s = derive_seed(seed, name);
    prov.seeds[name] = s;
    return s;
  };

  try {
    SceneDraft draft;
    draft.scene_id = scene_id;
    draft.rng_seed = seed;
    draft.candidate_categories =
        sample_candidates(vocabulary, config.scene.n_min, config.scene.n_max, stage_seed("candidates"));
    draft = compose_scene(gateway, prompts, std::move(draft), config.scene);
    const Image& target = draft.target_image;
    const int w = target.width();
    const int h = target.height();

    const auto detections = in_stage("detection_sparse", scene_id, [&] {
      return gateway.detect({scene_id, "detect", stage_seed("detect")}, target, draft.chosen_categories);
    });
    const auto selected = select_subjects(detections, w, h, config.scene.delta, config.scene.n_max, scene_id);
    const auto verified = verify_subjects(gateway, prompts, target, selected, stage_seed("verify"), scene_id);

    std::vector<SubjectRecord> subjects;
    for (std::size_t i = 0; i < verified.size(); ++i) {
      SubjectRecord s;
      s.subject_id = static_cast<int>(i);
      s.category = verified[i].category;
      s.box = verified[i].box;
      s.score = verified[i].score;
      subjects.push_back(std::move(s));
    }
    const auto annotated = overlay_detections(target, verified);

    Rng choice(stage_seed("choices"));
    const bool with_ids = choice.bernoulli(config.with_ids_ratio);
    auto instruction = gen_instruction(gateway, prompts, annotated, subjects, with_ids, stage_seed("instruction"),
                                       scene_id, config.narrative);

    const auto seg_seed = stage_seed("segment");
    const auto embed_seed = stage_seed("embed");
    in_stage("segmentation", scene_id, [&] {
      for (auto& s : subjects) {
        auto mask = gateway.segment({scene_id, "segment", seg_seed}, target, s.box);
        if (mask.popcount() == 0) {
          s.region_mode = RegionMode::box;
        } else {
          const auto views = region_views(target, s.box, mask);
          const auto class_vec = gateway.embed_text({scene_id, "embed_class", embed_seed}, s.category);
          const auto mask_vec = gateway.embed_image({scene_id, "embed_mask", embed_seed}, views.first);
          const auto unmask_vec = gateway.embed_image({scene_id, "embed_unmask", embed_seed}, views.second);
          s.region_mode = choose_region_mode(class_vec, mask_vec, unmask_vec);
        }
        s.mask = std::move(mask);
      }
      return 0;
    });

    const auto transform_seed = stage_seed("transform");
    const auto target_ref = store.put(scene_id, "target", target);
    for (auto& s : subjects) {
      const auto crop = target.crop(s.box);
      s.crop = store.put(scene_id, fmt::format("crop_{}", s.subject_id), crop);
      const auto subject_seed = derive_seed(transform_seed, static_cast<std::uint64_t>(s.subject_id));
      const auto kind = Rng(subject_seed).bernoulli(config.scene.complex_prob) ? TransformKind::complex : TransformKind::simple;
      s = transform_subject(gateway, prompts, std::move(s), crop, kind, similar, subject_seed, scene_id, store);
    }

    auto cot = gen_cot(gateway, prompts, instruction, annotated, subjects, stage_seed("cot"), scene_id, config.narrative);

    TrainingRecord r;
    r.scene_id = scene_id;
    r.caption = draft.caption;
    r.image_width = w;
    r.image_height = h;
    r.target_image = target_ref;
    for (const auto& s : subjects) r.subject_images.push_back(s.transformed);
    r.layout_prompt = serialize_layout(assign_patches(subjects, w, h, config.layout));
    r.subjects = std::move(subjects);
    r.instruction = std::move(instruction);
    r.cot = std::move(cot);
    r.params = {config.scene.delta, config.layout.grid_side, config.layout.lambda, config.layout.scope, config.scene.n_max};
    prov.template_ids = {{"caption", std::string(prompt_id::caption)},
                         {"object_filter", std::string(prompt_id::object_filter)},
                         {"verify", std::string(prompt_id::verify_boxes)},
                         {"instruction", r.instruction.template_id},
                         {"cot", std::string(prompt_id::cot)}};
    for (auto role : kAllRoles) prov.backend_ids[std::string(role_name(role))] = gateway.backend_id(role);
    r.provenance = std::move(prov);
    result.record = std::move(r);
  } catch (const StageFailure& f) {
    result.outcome.failed_stage = f.stage();
    result.outcome.message = f.what();
  }
  return result;
}

namespace {

SimilarityDict load_or_build_dict(ModelGateway& gateway, const PromptLibrary& prompts,
                                  std::span<const std::string> vocabulary, const PipelineConfig& config,
                                  const std::filesystem::path& path, JsonlAppender& outcomes) {
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    auto dict = SimilarityDict::from_json(nlohmann::json::parse(in));
    dict.validate(vocabulary);
    return dict;
  }
  SceneOutcome o{"run:simdict", std::nullopt, "", true};
  SimilarityDict dict;
  try {
    dict = build_similarity_dict(gateway, prompts, vocabulary, derive_seed(config.global_seed, "simdict"),
                                 config.max_related);
    write_file_atomic(path, dict.to_json().dump(2) + "\n");
  } catch (const StageFailure& f) {
    // Complex transforms fall back to the simple prompt without a dictionary.
    o.failed_stage = "simdict";
    o.message = f.what();
  }
  outcomes.append(outcome_to_json(o));
  return dict;
}

}  // namespace

ForgeSummary run_forge(ModelGateway& gateway, const PromptLibrary& prompts, std::span<const std::string> vocabulary,
                       const PipelineConfig& config, const ForgeOptions& options) {
  config.validate();
  if (options.root.empty()) throw std::invalid_argument("run_forge: empty output root");
  std::filesystem::create_directories(options.root);
  const auto manifest_path = options.root / kManifestFile;
  const auto outcomes_path = options.root / kOutcomesFile;

  ManifestWriter manifest(manifest_path);
  JsonlAppender outcomes(outcomes_path);
  std::unique_ptr<ImageStore> own_store;
  ImageStore* store = options.store;
  if (!store) {
    own_store = std::make_unique<DirectoryImageStore>(options.root);
    store = own_store.get();
  }

  const auto similar = load_or_build_dict(gateway, prompts, vocabulary, config, options.root / kSimilarityFile, outcomes);

  ForgeSummary summary;
  summary.requested = options.scene_count;
  std::vector<std::string> requested;
  for (std::size_t i = 0; i < options.scene_count; ++i) requested.push_back(scene_id_for(i));
  std::set<std::string> failed_before;
  for (const auto& o : read_outcomes(outcomes_path)) {
    if (o.failed_stage && !o.run_level) failed_before.insert(o.scene_id);
  }
  std::vector<std::string> pending;
  for (auto& id : resume_plan(manifest_path, requested)) {
    if (!failed_before.contains(id)) pending.push_back(std::move(id));
  }
  summary.already_done = requested.size() - pending.size();

  struct Slot {
    std::optional<SceneResult> result;
    std::exception_ptr error;
    bool done = false;
  };
  std::vector<Slot> slots(pending.size());
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> halt{false};
  std::size_t running = 0;

  auto stop_requested = [&] { return halt.load() || (options.stop && options.stop->load()); };
  auto worker = [&] {
    while (!stop_requested()) {
      const auto i = next.fetch_add(1);
      if (i >= pending.size()) break;
      Slot slot;
      try {
        slot.result = forge_scene(gateway, prompts, similar, vocabulary, config, pending[i], *store);
      } catch (...) {
        slot.error = std::current_exception();
      }
      slot.done = true;
      std::lock_guard lock(mu);
      slots[i] = std::move(slot);
      cv.notify_all();
    }
    std::lock_guard lock(mu);
    --running;
    cv.notify_all();
  };

  const auto thread_count = std::min<std::size_t>(static_cast<std::size_t>(config.workers), std::max<std::size_t>(pending.size(), 1));
  std::vector<std::thread> threads;
  running = thread_count;
  for (std::size_t t = 0; t < thread_count; ++t) threads.emplace_back(worker);

  std::exception_ptr failure;
  for (std::size_t i = 0; i < pending.size(); ++i) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return slots[i].done || running == 0; });
    if (!slots[i].done) break;
    Slot slot = std::move(slots[i]);
    lock.unlock();
    if (slot.error) {
      failure = slot.error;
      halt = true;
      break;
    }
    // Outcome first: a crash between the two writes only re-runs the scene.
    outcomes.append(outcome_to_json(slot.result->outcome));
    if (slot.result->record) {
      manifest.append(*slot.result->record);
      ++summary.committed_records;
    }
    ++summary.processed;
    if (options.on_commit) options.on_commit(*slot.result);
    if (options.stop_after && summary.processed >= *options.stop_after) {
      halt = true;
      break;
    }
  }
  halt = true;
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);

  summary.interrupted = summary.processed < pending.size();
  summary.stats = stats_from_outcomes(read_outcomes(outcomes_path));
  write_file_atomic(options.root / "stats.json", summary.stats.to_json().dump(2) + "\n");
  write_file_atomic(options.root / "stats.txt", report_stats(summary.stats));
  return summary;
}

}  // namespace msforge
