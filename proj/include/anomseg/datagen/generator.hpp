#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomseg/core/rng.hpp"
#include "anomseg/core/tensor_io.hpp"
#include "anomseg/data/dataset.hpp"
#include "anomseg/dissimilarity/train.hpp"
#include "anomseg/pipeline/stages.hpp"

namespace anomseg {

/// Record of one instance-class swap, kept for provenance.
struct SwapRecord {
  std::string stem;
  std::vector<std::int32_t> instance_ids;
  std::vector<std::int32_t> original_class;
  std::vector<std::int32_t> replacement_class;
};

struct GeneratedSample {
  TrainingSample sample;
  std::optional<SwapRecord> swap; // present for swap provenance
};

struct DatagenConfig {
  double mix = 0.5;                  // fraction of swap-provenance samples
  std::size_t max_samples = 0;       // 0 = every eligible image
  std::size_t min_instance_area = 64; // swap eligibility, pixels at image resolution
  std::size_t min_void_area = 10;     // void region eligibility, pixels
  std::size_t min_swaps = 1, max_swaps = 3;
  bool recompute_uncertainty_from_altered = false; // segment the re-synthesized image instead
  bool use_gt_semantics_for_void = false; // ablation: feed GT instead of predicted maps

  void validate() const {
    if (mix < 0.0 || mix > 1.0) throw std::invalid_argument("mix must be in [0,1]");
    if (min_swaps == 0 || min_swaps > max_swaps) throw std::invalid_argument("bad swap count range");
  }
};

struct DatagenSummary {
  std::size_t swap_samples = 0;
  std::size_t void_samples = 0;
  std::size_t skipped_swap = 0; // no eligible instance
  std::size_t skipped_void = 0; // no qualifying void region
  std::vector<std::string> notes;
};

namespace datagen_detail {

/// 4-connected components of void pixels; returns per-pixel component area.
inline Tensor<std::int32_t> void_component_areas(const SemanticMap& sem) {
  const std::size_t h = sem.height(), w = sem.width();
  Tensor<std::int32_t> comp({h, w}, 0);
  Tensor<std::int32_t> area({h, w}, 0);
  std::int32_t next = 0;
  std::vector<std::size_t> stack;
  std::vector<std::size_t> members;
  for (std::size_t start = 0; start < h * w; ++start) {
    if (sem.t[start] != kVoidClass || comp[start] != 0) continue;
    ++next;
    stack.assign(1, start);
    members.clear();
    comp[start] = next;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      members.push_back(p);
      const std::size_t y = p / w, x = p % w;
      const auto try_push = [&](std::size_t q) {
        if (sem.t[q] == kVoidClass && comp[q] == 0) {
          comp[q] = next;
          stack.push_back(q);
        }
      };
      if (y > 0) try_push(p - w);
      if (y + 1 < h) try_push(p + w);
      if (x > 0) try_push(p - 1);
      if (x + 1 < w) try_push(p + 1);
    }
    for (std::size_t p : members) area[p] = static_cast<std::int32_t>(members.size());
  }
  return area;
}

inline AnomalyLabelMap downsample_label(const Tensor<std::uint8_t>& full, std::size_t h, std::size_t w) {
  return AnomalyLabelMap(resize(full, h, w, ResizeMode::kNearest));
}

} // namespace datagen_detail

/// Swap-source sample: random inlier instances get their ground-truth class
/// replaced, the altered map is re-synthesized and the alteration footprint
/// becomes the anomaly label. Dispersion maps still come from the original
/// image's softmax (swapped regions deliberately do not correlate with
/// uncertainty). Void pixels are ignored, not labeled.
inline std::optional<GeneratedSample> make_swap_sample(BackboneBundle& backbones,
                                                       const DatasetRecord& record,
                                                       const SemanticMap& gt_semantic,
                                                       const InstanceMap& gt_instance,
                                                       const RgbImage& image, Rng& rng,
                                                       const ResolutionLadder& ladder,
                                                       const PerceptualConfig& perceptual_cfg,
                                                       const DatagenConfig& cfg) {
  // Eligible: inlier object instances with enough visible area.
  std::vector<std::int32_t> eligible;
  for (const auto& [id, cls] : gt_instance.instance_class) {
    if (cls == kVoidClass || id == kBackgroundInstance) continue;
    if (gt_instance.instance_area(id) >= cfg.min_instance_area) eligible.push_back(id);
  }
  if (eligible.empty()) return std::nullopt;
  std::sort(eligible.begin(), eligible.end());
  rng.shuffle(eligible.begin(), eligible.end());

  const std::size_t n_swap = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(std::min(cfg.min_swaps, eligible.size())),
                      static_cast<std::int64_t>(std::min(cfg.max_swaps, eligible.size()))));

  const std::int32_t num_inlier_object_classes = gt_semantic.num_classes - 1; // excl. background
  if (num_inlier_object_classes < 2) return std::nullopt; // no alternative class exists

  SwapRecord swap;
  swap.stem = record.stem;
  SemanticMap altered = gt_semantic;
  Tensor<std::uint8_t> label_full({gt_semantic.height(), gt_semantic.width()}, 0);
  for (std::size_t p = 0; p < gt_semantic.t.size(); ++p)
    if (gt_semantic.t[p] == kVoidClass) label_full[p] = kIgnoreLabel;

  for (std::size_t s = 0; s < n_swap; ++s) {
    const std::int32_t id = eligible[s];
    const std::int32_t original = gt_instance.instance_class.at(id);
    // replacement drawn uniformly from the other inlier object classes
    std::int32_t replacement =
        1 + static_cast<std::int32_t>(rng.uniform_index(static_cast<std::uint64_t>(num_inlier_object_classes - 1)));
    if (replacement >= original) ++replacement;
    swap.instance_ids.push_back(id);
    swap.original_class.push_back(original);
    swap.replacement_class.push_back(replacement);
    for (std::size_t p = 0; p < altered.t.size(); ++p) {
      if (gt_instance.t[p] == id) {
        altered.t[p] = replacement;
        label_full[p] = 1;
      }
    }
  }

  const SoftmaxMap softmax = backbones.segmentation->segment({&image, record.stem});
  StageArtifacts art =
      compute_stage_artifacts(backbones, image, record.stem, softmax, altered, ladder, perceptual_cfg);
  if (cfg.recompute_uncertainty_from_altered) {
    // Alternative wiring: dispersion maps from segmenting the re-synthesized
    // image rather than the original one.
    const auto [ih, iw] = ladder.image();
    RgbImage resynth(resize(art.synthesized.t, ih, iw, ResizeMode::kBilinear));
    const SoftmaxMap sm = backbones.segmentation->segment({&resynth, record.stem});
    const auto [dh, dw] = ladder.dissimilarity();
    const auto as_channel = [&](const Tensor<float>& m) {
      Tensor<float> c({1, dh, dw});
      std::copy(m.data(), m.data() + m.size(), c.data());
      return c;
    };
    const Tensor<float> e = as_channel(resize(softmax_entropy(sm).t, dh, dw, ResizeMode::kBilinear));
    const Tensor<float> d = as_channel(resize(softmax_distance(sm).t, dh, dw, ResizeMode::kBilinear));
    const Tensor<float> v = as_channel(art.perceptual.t);
    art.inputs.uncertainty = concat_channels<float>({&e, &d, &v});
  }

  GeneratedSample out;
  const auto [dh, dw] = ladder.dissimilarity();
  out.sample.stem = record.stem;
  out.sample.source = SampleSource::kSwap;
  out.sample.inputs = std::move(art.inputs);
  out.sample.label = datagen_detail::downsample_label(label_full, dh, dw);
  out.swap = std::move(swap);
  return out;
}

/// Void-source sample: ground-truth void objects become anomaly labels while
/// every input (synthesized image, dispersion maps, semantic map) derives
/// from the backbone's own prediction, matching the inference distribution.
inline std::optional<GeneratedSample> make_void_sample(BackboneBundle& backbones,
                                                       const DatasetRecord& record,
                                                       const SemanticMap& gt_semantic,
                                                       const RgbImage& image,
                                                       const ResolutionLadder& ladder,
                                                       const PerceptualConfig& perceptual_cfg,
                                                       const DatagenConfig& cfg) {
  const Tensor<std::int32_t> areas = datagen_detail::void_component_areas(gt_semantic);
  bool any = false;
  Tensor<std::uint8_t> label_full({gt_semantic.height(), gt_semantic.width()}, 0);
  for (std::size_t p = 0; p < areas.size(); ++p) {
    if (gt_semantic.t[p] != kVoidClass) continue;
    if (areas[p] >= static_cast<std::int32_t>(cfg.min_void_area)) {
      label_full[p] = 1;
      any = true;
    } else {
      label_full[p] = kIgnoreLabel; // too small to supervise either way
    }
  }
  if (!any) return std::nullopt;

  // Predicted semantics drive synthesis and the semantic input; GT only
  // provides labels (the ablation flag swaps in GT semantics).
  const SoftmaxMap sm = backbones.segmentation->segment({&image, record.stem});
  StageArtifacts probe;
  if (cfg.use_gt_semantics_for_void) {
    probe = compute_stage_artifacts(backbones, image, record.stem, sm, gt_semantic, ladder, perceptual_cfg);
  } else {
    const SemanticMap predicted = argmax_semantic(sm);
    probe = compute_stage_artifacts(backbones, image, record.stem, sm, predicted, ladder, perceptual_cfg);
  }

  GeneratedSample out;
  const auto [dh, dw] = ladder.dissimilarity();
  out.sample.stem = record.stem;
  out.sample.source = SampleSource::kVoid;
  out.sample.inputs = std::move(probe.inputs);
  out.sample.label = datagen_detail::downsample_label(label_full, dh, dw);
  return out;
}

/// Builds the dissimilarity training set from the training split only.
/// Deterministic per seed; output ordered by (source, stem).
inline std::vector<GeneratedSample> build_training_set(BackboneBundle& backbones,
                                                       const DatasetIndex& index,
                                                       const ResolutionLadder& ladder,
                                                       const PerceptualConfig& perceptual_cfg,
                                                       const DatagenConfig& cfg, std::uint64_t seed,
                                                       DatagenSummary* summary_out = nullptr) {
  cfg.validate();
  const auto train = index.split("train");
  if (train.empty()) throw std::runtime_error("dataset has no training split");

  // Leak check: the generator must never see the anomaly splits.
  std::set<std::string> train_stems, other_stems;
  for (const auto& r : index.records)
    (r.split == "train" ? train_stems : other_stems).insert(r.stem);
  for (const auto& s : train_stems)
    if (other_stems.count(s))
      throw std::runtime_error("split leak: stem '" + s + "' appears outside the training split");

  DatagenSummary summary;

  // Eligibility scan (cheap: reads GT only).
  std::vector<const DatasetRecord*> swap_eligible, void_eligible;
  for (const auto* r : train) {
    const SemanticMap sem = load_record_semantic(*r, index.num_classes);
    const InstanceMap inst = load_record_instance(*r, sem);
    bool swap_ok = false;
    for (const auto& [id, cls] : inst.instance_class)
      if (cls != kVoidClass && inst.instance_area(id) >= cfg.min_instance_area) {
        swap_ok = true;
        break;
      }
    if (swap_ok) swap_eligible.push_back(r);
    else ++summary.skipped_swap;
    const Tensor<std::int32_t> areas = datagen_detail::void_component_areas(sem);
    bool void_ok = false;
    for (std::size_t p = 0; p < areas.size(); ++p)
      if (sem.t[p] == kVoidClass && areas[p] >= static_cast<std::int32_t>(cfg.min_void_area)) {
        void_ok = true;
        break;
      }
    if (void_ok) void_eligible.push_back(r);
    else ++summary.skipped_void;
  }

  Rng rng(Rng::mix(seed, 0xda7a));
  rng.shuffle(swap_eligible.begin(), swap_eligible.end());
  rng.shuffle(void_eligible.begin(), void_eligible.end());

  // mix is a hard ratio over the requested total; a source short on eligible
  // images shrinks the output rather than backfilling from the other source
  const std::size_t avail = swap_eligible.size() + void_eligible.size();
  const std::size_t target = cfg.max_samples ? std::min(cfg.max_samples, avail) : avail;
  const std::size_t swap_target = static_cast<std::size_t>(std::llround(cfg.mix * double(target)));
  const std::size_t n_swap = std::min(swap_target, swap_eligible.size());
  const std::size_t n_void = std::min(target - swap_target, void_eligible.size());

  std::vector<GeneratedSample> samples;
  for (std::size_t i = 0; i < n_swap; ++i) {
    const auto* r = swap_eligible[i];
    Rng sample_rng = rng.fork(Rng::mix(0x5a, i));
    const RgbImage image = load_record_image(*r);
    const SemanticMap sem = load_record_semantic(*r, index.num_classes);
    const InstanceMap inst = load_record_instance(*r, sem);
    auto s = make_swap_sample(backbones, *r, sem, inst, image, sample_rng, ladder, perceptual_cfg, cfg);
    if (s) {
      samples.push_back(std::move(*s));
      ++summary.swap_samples;
    } else {
      summary.notes.push_back("swap sample skipped for " + r->stem + " (no eligible instance)");
    }
  }
  for (std::size_t i = 0; i < n_void; ++i) {
    const auto* r = void_eligible[i];
    const RgbImage image = load_record_image(*r);
    const SemanticMap sem = load_record_semantic(*r, index.num_classes);
    auto s = make_void_sample(backbones, *r, sem, image, ladder, perceptual_cfg, cfg);
    if (s) {
      samples.push_back(std::move(*s));
      ++summary.void_samples;
    } else {
      summary.notes.push_back("void sample skipped for " + r->stem + " (no qualifying region)");
    }
  }

  if (samples.empty())
    throw std::runtime_error("training data generator produced no samples "
                             "(check eligibility thresholds and the mix ratio)");

  std::sort(samples.begin(), samples.end(), [](const GeneratedSample& a, const GeneratedSample& b) {
    if (a.sample.source != b.sample.source)
      return static_cast<int>(a.sample.source) < static_cast<int>(b.sample.source);
    return a.sample.stem < b.sample.stem;
  });

  if (summary_out) *summary_out = std::move(summary);
  return samples;
}

// ---------------------------------------------------------------------------
// Persistence: grouped tensor files per sample plus a manifest with
// provenance, so`train-dissimilarity` can run from disk.
// ---------------------------------------------------------------------------

inline void save_samples(const std::filesystem::path& dir, const std::vector<GeneratedSample>& samples,
                         const DatagenSummary& summary) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");
  nlohmann::json manifest;
  manifest["count"] = samples.size();
  manifest["swap_samples"] = summary.swap_samples;
  manifest["void_samples"] = summary.void_samples;
  nlohmann::json records = nlohmann::json::array();
  for (const auto& gs : samples) {
    const std::string base = gs.sample.stem + "__" + to_string(gs.sample.source);
    save_tensor(dir / "samples" / (base + ".image.tsr"), gs.sample.inputs.image);
    save_tensor(dir / "samples" / (base + ".synth.tsr"), gs.sample.inputs.synthesized);
    save_tensor(dir / "samples" / (base + ".semantic.tsr"), gs.sample.inputs.semantic_onehot);
    save_tensor(dir / "samples" / (base + ".uncertainty.tsr"), gs.sample.inputs.uncertainty);
    save_tensor(dir / "samples" / (base + ".label.tsr"), gs.sample.label.t);
    nlohmann::json rec;
    rec["stem"] = gs.sample.stem;
    rec["source"] = to_string(gs.sample.source);
    rec["base"] = base;
    if (gs.swap) {
      rec["swap"] = {{"instance_ids", gs.swap->instance_ids},
                     {"original_class", gs.swap->original_class},
                     {"replacement_class", gs.swap->replacement_class}};
    }
    records.push_back(std::move(rec));
  }
  manifest["records"] = std::move(records);
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

inline std::vector<TrainingSample> load_samples(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw std::runtime_error("sample manifest not found: " + manifest_path.string());
  nlohmann::json manifest;
  std::ifstream(manifest_path) >> manifest;
  std::vector<TrainingSample> out;
  for (const auto& rec : manifest.at("records")) {
    TrainingSample s;
    s.stem = rec.at("stem").get<std::string>();
    s.source = rec.at("source").get<std::string>() == "swap" ? SampleSource::kSwap : SampleSource::kVoid;
    const std::string base = rec.at("base").get<std::string>();
    s.inputs.image = load_tensor<float>(dir / "samples" / (base + ".image.tsr"));
    s.inputs.synthesized = load_tensor<float>(dir / "samples" / (base + ".synth.tsr"));
    s.inputs.semantic_onehot = load_tensor<float>(dir / "samples" / (base + ".semantic.tsr"));
    s.inputs.uncertainty = load_tensor<float>(dir / "samples" / (base + ".uncertainty.tsr"));
    s.label = AnomalyLabelMap(load_tensor<std::uint8_t>(dir / "samples" / (base + ".label.tsr")));
    out.push_back(std::move(s));
  }
  return out;
}

} // namespace anomseg
