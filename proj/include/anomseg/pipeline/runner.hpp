#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomseg/backbones/training.hpp"
#include "anomseg/core/tensor_io.hpp"
#include "anomseg/data/dataset.hpp"
#include "anomseg/datagen/generator.hpp"
#include "anomseg/dissimilarity/net.hpp"
#include "anomseg/dissimilarity/train.hpp"
#include "anomseg/ensemble/ensemble.hpp"
#include "anomseg/metrics/eval.hpp"
#include "anomseg/pipeline/stages.hpp"

namespace anomseg {

constexpr const char* kCodeVersion = "anomseg 0.1.0";

/// Anomaly ground truth for an evaluation split: void pixels are the planted
/// anomaly objects there.
inline AnomalyLabelMap anomaly_labels_from_gt(const SemanticMap& sem) {
  Tensor<std::uint8_t> t({sem.height(), sem.width()}, 0);
  for (std::size_t p = 0; p < sem.t.size(); ++p)
    if (sem.t[p] == kVoidClass) t[p] = 1;
  return AnomalyLabelMap(std::move(t));
}

/// Per-image result of the full six-stage pipeline.
struct PipelineOutput {
  std::string stem;
  StageArtifacts artifacts;
  Tensor<float> dissim_score;    // dissimilarity resolution
  ScoreMapSet maps;              // the four ensemble constituents
  AnomalyScoreMap final_score;   // ensembled, upsampled to image resolution
};

/// Checkpoint wrapper for the dissimilarity net.
inline void save_dissimilarity_checkpoint(const std::filesystem::path& dir, DissimilarityNet& net,
                                          std::uint64_t seed, const TrainLog& log) {
  nlohmann::json meta;
  const auto& spec = net.spec();
  meta["arch"] = spec.arch_string();
  meta["arch_hash"] = hex64(fnv1a(spec.arch_string()));
  meta["num_classes"] = spec.num_classes;
  meta["base_width"] = spec.base_width;
  meta["levels"] = spec.levels;
  meta["use_uncertainty"] = spec.use_uncertainty;
  meta["norm_mean"] = spec.norm_mean;
  meta["norm_std"] = spec.norm_std;
  meta["seed"] = seed;
  meta["best_epoch"] = log.best_epoch;
  meta["best_val_loss"] = log.best_val_loss;
  save_checkpoint(dir, net.params(), meta);
}

inline DissimilarityNet load_dissimilarity_checkpoint(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "manifest.json"))
    throw std::runtime_error("dissimilarity checkpoint not found: " + dir.string());
  nlohmann::json manifest;
  std::ifstream(dir / "manifest.json") >> manifest;
  const nlohmann::json meta = manifest.at("metadata");
  DissimilarityNetSpec spec;
  spec.num_classes = meta.at("num_classes").get<std::size_t>();
  spec.base_width = meta.at("base_width").get<std::size_t>();
  spec.levels = meta.at("levels").get<std::size_t>();
  spec.use_uncertainty = meta.at("use_uncertainty").get<bool>();
  const auto nm = meta.at("norm_mean").get<std::vector<float>>();
  const auto ns = meta.at("norm_std").get<std::vector<float>>();
  for (std::size_t i = 0; i < 3; ++i) {
    spec.norm_mean[i] = nm[i];
    spec.norm_std[i] = ns[i];
  }
  if (meta.at("arch_hash").get<std::string>() != hex64(fnv1a(spec.arch_string())))
    throw std::runtime_error("dissimilarity checkpoint architecture hash mismatch in " + dir.string());
  DissimilarityNet net(spec);
  load_checkpoint(dir, net.params());
  return net;
}

/// Runs all six stages for one image. `zero_uncertainty` feeds a zeroed
/// dispersion stack (the w/o-uncertainty configuration).
inline PipelineOutput run_pipeline_single(BackboneBundle& backbones, DissimilarityNet& net,
                                          const RgbImage& image, const std::string& stem,
                                          const ResolutionLadder& ladder,
                                          const PerceptualConfig& perceptual_cfg,
                                          const EnsembleWeights& weights, StageTimer* timer = nullptr,
                                          bool zero_uncertainty = false) {
  StageTimer local;
  StageTimer& t = timer ? *timer : local;

  PipelineOutput out;
  out.stem = stem;

  const SoftmaxMap softmax =
      t.time("segment", [&] { return backbones.segmentation->segment({&image, stem}); });
  const SemanticMap predicted = argmax_semantic(softmax);
  out.artifacts =
      compute_stage_artifacts(backbones, image, stem, softmax, predicted, ladder, perceptual_cfg, &t);

  if (zero_uncertainty) out.artifacts.inputs.uncertainty.fill(0.0f);

  out.dissim_score = t.time("dissimilarity", [&] { return net.score(out.artifacts.inputs); });
  out.maps = make_score_set(out.dissim_score, out.artifacts.inputs, stem);

  const auto [ih, iw] = ladder.image();
  out.final_score = t.time("ensemble", [&] {
    AnomalyScoreMap blended = combine(out.maps, weights);
    return AnomalyScoreMap(resize(blended.t, ih, iw, ResizeMode::kBilinear));
  });
  return out;
}

struct RunManifest {
  nlohmann::json j;

  static RunManifest create(const std::string& config_hash) {
    RunManifest m;
    m.j["code_version"] = kCodeVersion;
    m.j["config_hash"] = config_hash;
    m.j["stages"] = nlohmann::json::array();
    m.j["images"] = nlohmann::json::array();
    return m;
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream(path) << j.dump(2) << "\n";
  }
};

/// Inference over a dataset split: persists per-image final scores, the four
/// ensemble constituent maps, optional intermediates, and a manifest with
/// per-stage timing.
struct SplitInferenceResult {
  std::vector<PipelineOutput> outputs; // ordered by stem
  RunManifest manifest;
};

inline SplitInferenceResult run_pipeline_split(BackboneBundle& backbones, DissimilarityNet& net,
                                               const DatasetIndex& index, const std::string& split,
                                               const ResolutionLadder& ladder,
                                               const PerceptualConfig& perceptual_cfg,
                                               const EnsembleWeights& weights,
                                               const std::filesystem::path& out_dir,
                                               const std::string& config_hash,
                                               bool keep_intermediates = false,
                                               bool zero_uncertainty = false,
                                               bool persist = true) {
  namespace fs = std::filesystem;
  const auto records = index.split(split);
  if (records.empty()) throw std::runtime_error("split '" + split + "' is empty");

  SplitInferenceResult result;
  result.manifest = RunManifest::create(config_hash);
  StageTimer timer;

  if (persist) {
    fs::create_directories(out_dir / "scores");
    fs::create_directories(out_dir / "maps");
  }

  for (const auto* rec : records) { // directory scan is sorted, ordering stable by stem
    const RgbImage image = load_record_image(*rec);
    PipelineOutput out = run_pipeline_single(backbones, net, image, rec->stem, ladder, perceptual_cfg,
                                             weights, &timer, zero_uncertainty);
    nlohmann::json img_entry;
    img_entry["stem"] = rec->stem;
    if (persist) {
      nlohmann::json artifacts; // one entry per pipeline stage
      const fs::path score_path = out_dir / "scores" / (rec->stem + ".tsr");
      save_tensor(score_path, out.final_score.t);
      artifacts["ensemble"] = score_path.string();
      for (std::size_t m = 0; m < kEnsembleMaps; ++m) {
        const fs::path mp =
            out_dir / "maps" / (rec->stem + std::string(".") + ensemble_channel_name(m) + ".tsr");
        save_tensor(mp, out.maps.maps[m]);
        if (m == kMapDissimilarity) artifacts["dissimilarity"] = mp.string();
      }
      if (keep_intermediates) {
        const fs::path inter = out_dir / "intermediates" / rec->stem;
        fs::create_directories(inter);
        save_tensor(inter / "softmax.tsr", out.artifacts.softmax.t);
        save_tensor(inter / "entropy.tsr", out.artifacts.entropy.t);
        save_tensor(inter / "distance.tsr", out.artifacts.distance.t);
        save_tensor(inter / "perceptual.tsr", out.artifacts.perceptual.t);
        save_image(inter / "synthesized.png", out.artifacts.synthesized);
        save_gray_png(inter / "predicted.png", out.artifacts.predicted.t.cast<std::uint8_t>());
        artifacts["segment"] = (inter / "softmax.tsr").string();
        artifacts["uncertainty"] = {(inter / "entropy.tsr").string(), (inter / "distance.tsr").string()};
        artifacts["synthesis"] = (inter / "synthesized.png").string();
        artifacts["perceptual"] = (inter / "perceptual.tsr").string();
      }
      img_entry["artifacts"] = std::move(artifacts);
    }
    result.manifest.j["images"].push_back(std::move(img_entry));
    result.outputs.push_back(std::move(out));
  }

  static constexpr const char* kStageNames[7] = {"segment",    "uncertainty",   "synthesis",
                                                 "perceptual", "dissimilarity", "ensemble",
                                                 "total"};
  double total = 0.0;
  for (const auto& [k, v] : timer.ms) total += v;
  timer.ms["total"] = total;
  for (const char* s : kStageNames) {
    nlohmann::json e;
    e["stage"] = s;
    e["ms"] = timer.ms.count(s) ? timer.ms[s] : 0.0;
    result.manifest.j["stages"].push_back(std::move(e));
  }
  result.manifest.j["split"] = split;
  result.manifest.j["ensemble_weights"] = weights.w;
  if (persist) result.manifest.save(out_dir / "run_manifest.json");
  return result;
}

/// Evaluates persisted or in-memory outputs against GT at image resolution.
inline EvalResult evaluate_outputs(const std::vector<PipelineOutput>& outputs,
                                   const DatasetIndex& index) {
  std::vector<AnomalyScoreMap> scores;
  std::vector<AnomalyLabelMap> labels;
  for (const auto& out : outputs) {
    const auto& rec = index.find(out.stem);
    const SemanticMap sem = load_record_semantic(rec, index.num_classes);
    labels.push_back(anomaly_labels_from_gt(sem));
    scores.push_back(out.final_score);
  }
  return evaluate(scores, labels);
}

/// Dissimilarity-only evaluation (the "w/o ensemble" configuration): the raw
/// network map upsampled to image resolution.
inline EvalResult evaluate_outputs_dissim_only(const std::vector<PipelineOutput>& outputs,
                                               const DatasetIndex& index) {
  std::vector<AnomalyScoreMap> scores;
  std::vector<AnomalyLabelMap> labels;
  for (const auto& out : outputs) {
    const auto& rec = index.find(out.stem);
    const SemanticMap sem = load_record_semantic(rec, index.num_classes);
    labels.push_back(anomaly_labels_from_gt(sem));
    const auto [h, w] = std::pair{sem.height(), sem.width()};
    scores.push_back(AnomalyScoreMap(resize(out.maps.maps[kMapDissimilarity], h, w, ResizeMode::kBilinear)));
  }
  return evaluate(scores, labels);
}

/// Labels for grid search at dissimilarity resolution (nearest-sampled GT).
inline std::vector<AnomalyLabelMap> labels_at_dissim_resolution(const std::vector<PipelineOutput>& outputs,
                                                                const DatasetIndex& index,
                                                                const ResolutionLadder& ladder) {
  const auto [dh, dw] = ladder.dissimilarity();
  std::vector<AnomalyLabelMap> labels;
  for (const auto& out : outputs) {
    const auto& rec = index.find(out.stem);
    const SemanticMap sem = load_record_semantic(rec, index.num_classes);
    const AnomalyLabelMap full = anomaly_labels_from_gt(sem);
    labels.push_back(AnomalyLabelMap(resize(full.t, dh, dw, ResizeMode::kNearest)));
  }
  return labels;
}

} // namespace anomseg
