#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <iostream>

#include "anomseg/pipeline/runner.hpp"

namespace anomseg {

/// The four framework configurations of the ablation: the full pipeline, the
/// raw dissimilarity output (no ensemble), the network without uncertainty
/// inputs (zero stack, no gate, no ensemble), and the swap-only/no-uncertainty
/// configuration that structurally matches the plain re-synthesis baseline.
inline const std::vector<std::string>& ablation_config_names() {
  static const std::vector<std::string> names = {"full", "no_ensemble", "no_uncertainty",
                                                 "no_datagen_no_uncertainty"};
  return names;
}

struct AblationSettings {
  std::filesystem::path dataset_root;
  std::filesystem::path work_dir;
  std::vector<std::string> configs = ablation_config_names();
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::uint64_t backbone_seed = 7;
  bool reuse_backbones = true; // reuse a cached checkpoint in work_dir if present

  BackboneTrainConfig backbone_cfg;
  DatagenConfig datagen_cfg;
  DissimTrainConfig train_cfg;
  DissimilarityNetSpec net_spec; // num_classes filled from the dataset
  PerceptualConfig perceptual_cfg;
  double grid_step = 0.1;
  GridObjective grid_objective = GridObjective::kAveragePrecision;
  bool verbose = false; // progress lines on stderr
};

struct AblationCell {
  double ap = 0.0;
  double fpr95 = 0.0;
};

struct AblationSeedRun {
  std::uint64_t seed = 0;
  std::map<std::string, AblationCell> test_metrics; // per configuration, test split
  AblationCell val_ensemble;                        // full ensemble on the validation split
  AblationCell val_dissim_only;                     // standalone dissimilarity on validation
  EnsembleWeights weights;
  double positive_rate_test = 0.0;
  // grid-search bookkeeping (validation split, dissimilarity resolution)
  double val_grid_ap = 0.0;                           // AP of the chosen weights
  std::array<double, kEnsembleMaps> val_corner_ap{};  // AP of each single-map corner
};

struct AblationReport {
  std::vector<AblationSeedRun> runs;
  std::map<std::string, AblationCell> mean;
  std::map<std::string, AblationCell> stddev;
  std::vector<std::string> configs;
  std::vector<std::string> warnings;

  std::string table() const {
    std::ostringstream os;
    os << "configuration                     AP              FPR95\n";
    for (const auto& c : configs) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%-32s %5.1f +/- %-5.1f %5.1f +/- %-5.1f\n", c.c_str(),
                    100.0 * mean.at(c).ap, 100.0 * stddev.at(c).ap, 100.0 * mean.at(c).fpr95,
                    100.0 * stddev.at(c).fpr95);
      os << buf;
    }
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["configs"] = configs;
    for (const auto& c : configs) {
      j["mean"][c] = {{"ap", mean.at(c).ap}, {"fpr95", mean.at(c).fpr95}};
      j["std"][c] = {{"ap", stddev.at(c).ap}, {"fpr95", stddev.at(c).fpr95}};
    }
    for (const auto& run : runs) {
      nlohmann::json r;
      r["seed"] = run.seed;
      for (const auto& [c, cell] : run.test_metrics)
        r["test"][c] = {{"ap", cell.ap}, {"fpr95", cell.fpr95}};
      r["val_ensemble"] = {{"ap", run.val_ensemble.ap}, {"fpr95", run.val_ensemble.fpr95}};
      r["val_dissim_only"] = {{"ap", run.val_dissim_only.ap}, {"fpr95", run.val_dissim_only.fpr95}};
      r["weights"] = run.weights.w;
      r["positive_rate_test"] = run.positive_rate_test;
      j["runs"].push_back(std::move(r));
    }
    j["warnings"] = warnings;
    return j;
  }
};

namespace ablation_detail {

inline AblationCell cell_from(const EvalResult& e) { return {e.ap, e.fpr95}; }

inline std::vector<TrainingSample> strip_to_training(const std::vector<GeneratedSample>& gen) {
  std::vector<TrainingSample> out;
  out.reserve(gen.size());
  for (const auto& g : gen) out.push_back(g.sample);
  return out;
}

inline void zero_uncertainty_channels(std::vector<TrainingSample>& samples) {
  for (auto& s : samples) s.inputs.uncertainty.fill(0.0f);
}

} // namespace ablation_detail

/// Trains (or loads) backbones once, then per seed: generates training data,
/// trains the required dissimilarity variants, grid-searches ensemble weights
/// on the validation split and evaluates every requested configuration on the
/// test split. Seeds drive datagen, net init and training order; backbones
/// stay fixed, mirroring the frozen-backbone protocol.
inline AblationReport run_ablation(const AblationSettings& settings) {
  namespace fs = std::filesystem;
  for (const auto& c : settings.configs) {
    const auto& valid = ablation_config_names();
    if (std::find(valid.begin(), valid.end(), c) == valid.end()) {
      std::string msg = "unknown ablation configuration '" + c + "'; valid names:";
      for (const auto& v : valid) msg += " " + v;
      throw std::invalid_argument(msg);
    }
  }
  if (settings.seeds.empty()) throw std::invalid_argument("need at least one seed");

  const DatasetIndex index = load_dataset_index(settings.dataset_root);
  ResolutionLadder ladder;
  {
    // image size from the dataset manifest
    nlohmann::json manifest;
    std::ifstream(settings.dataset_root / "dataset.json") >> manifest;
    const auto size = manifest.at("image_size").get<std::vector<std::size_t>>();
    ladder.image_w = size[0];
    ladder.image_h = size[1];
  }
  ladder.validate();

  // Backbones: cached across seeds.
  const auto note = [&](const std::string& msg) {
    if (settings.verbose) std::cerr << "[ablate] " << msg << "\n";
  };

  const fs::path backbone_dir = settings.work_dir / "backbones";
  BackboneBundle backbones;
  if (settings.reuse_backbones && fs::exists(backbone_dir / "backbones.json")) {
    note("loading cached backbones");
    backbones = load_backbones(backbone_dir, index);
  } else {
    note("training backbones");
    BackboneTrainConfig bb_cfg = settings.backbone_cfg;
    bb_cfg.seed = settings.backbone_seed;
    backbones = make_toy_bundle(index, ladder.image_h, ladder.image_w, bb_cfg);
    const BackboneTrainResult r = train_toy_backbones(index, backbones, bb_cfg);
    save_backbones(backbone_dir, backbones, bb_cfg, r);
  }

  const bool need_plain = std::find(settings.configs.begin(), settings.configs.end(), "full") !=
                              settings.configs.end() ||
                          std::find(settings.configs.begin(), settings.configs.end(),
                                    "no_ensemble") != settings.configs.end();
  const bool need_nounc = std::find(settings.configs.begin(), settings.configs.end(),
                                    "no_uncertainty") != settings.configs.end();
  const bool need_nodatagen = std::find(settings.configs.begin(), settings.configs.end(),
                                        "no_datagen_no_uncertainty") != settings.configs.end();

  AblationReport report;
  report.configs = settings.configs;

  for (const std::uint64_t seed : settings.seeds) {
    AblationSeedRun run;
    run.seed = seed;
    note("seed " + std::to_string(seed) + ": generating training data");

    std::vector<TrainingSample> samples;
    if (need_plain || need_nounc) {
      DatagenSummary summary;
      samples = ablation_detail::strip_to_training(build_training_set(
          backbones, index, ladder, settings.perceptual_cfg, settings.datagen_cfg, seed, &summary));
    }

    DissimilarityNetSpec spec = settings.net_spec;
    spec.num_classes = static_cast<std::size_t>(index.num_classes);

    // full-architecture net, shared by "full" and "no_ensemble"
    if (need_plain) {
      spec.use_uncertainty = true;
      note("seed " + std::to_string(seed) + ": training full dissimilarity net on " +
           std::to_string(samples.size()) + " samples");
      DissimilarityNet net = init_dissimilarity_net(spec, seed);
      train_dissimilarity(net, samples, settings.train_cfg, seed);
      note("seed " + std::to_string(seed) + ": inference + grid search");

      const EnsembleWeights unit; // (1,0,0,0): raw dissimilarity
      SplitInferenceResult val = run_pipeline_split(backbones, net, index, "val", ladder,
                                                    settings.perceptual_cfg, unit, {}, "", false,
                                                    false, /*persist=*/false);
      std::vector<ScoreMapSet> val_sets;
      for (const auto& o : val.outputs) val_sets.push_back(o.maps);
      const std::vector<AnomalyLabelMap> val_labels =
          labels_at_dissim_resolution(val.outputs, index, ladder);
      const GridSearchResult grid =
          grid_search(val_sets, val_labels, settings.grid_step, settings.grid_objective);
      run.weights = grid.best;
      run.val_grid_ap = grid.best_ap;
      for (const auto& point : grid.log) {
        for (std::size_t m = 0; m < kEnsembleMaps; ++m) {
          if (point.w[m] == 1.0) run.val_corner_ap[m] = point.ap;
        }
      }

      // validation-split comparison: ensemble vs standalone dissimilarity
      {
        std::vector<AnomalyScoreMap> ens_scores, dis_scores;
        std::vector<AnomalyLabelMap> labels;
        const auto [ih, iw] = ladder.image();
        for (const auto& o : val.outputs) {
          const auto& rec = index.find(o.stem);
          labels.push_back(anomaly_labels_from_gt(load_record_semantic(rec, index.num_classes)));
          AnomalyScoreMap blended = combine(o.maps, grid.best);
          ens_scores.push_back(AnomalyScoreMap(resize(blended.t, ih, iw, ResizeMode::kBilinear)));
          dis_scores.push_back(AnomalyScoreMap(
              resize(o.maps.maps[kMapDissimilarity], ih, iw, ResizeMode::kBilinear)));
        }
        run.val_ensemble = ablation_detail::cell_from(evaluate(ens_scores, labels));
        run.val_dissim_only = ablation_detail::cell_from(evaluate(dis_scores, labels));
      }

      SplitInferenceResult test = run_pipeline_split(backbones, net, index, "test", ladder,
                                                     settings.perceptual_cfg, grid.best, {}, "",
                                                     false, false, /*persist=*/false);
      run.test_metrics["full"] = ablation_detail::cell_from(evaluate_outputs(test.outputs, index));
      run.test_metrics["no_ensemble"] =
          ablation_detail::cell_from(evaluate_outputs_dissim_only(test.outputs, index));

      double pos = 0.0, tot = 0.0;
      for (const auto& o : test.outputs) {
        const auto& rec = index.find(o.stem);
        const AnomalyLabelMap l = anomaly_labels_from_gt(load_record_semantic(rec, index.num_classes));
        for (std::uint8_t v : l.t.raw()) {
          if (v == kIgnoreLabel) continue;
          tot += 1.0;
          if (v == 1) pos += 1.0;
        }
      }
      run.positive_rate_test = tot > 0 ? pos / tot : 0.0;
    }

    if (need_nounc) {
      spec.use_uncertainty = false;
      note("seed " + std::to_string(seed) + ": training no-uncertainty net");
      DissimilarityNet net = init_dissimilarity_net(spec, seed);
      std::vector<TrainingSample> zeroed = samples;
      ablation_detail::zero_uncertainty_channels(zeroed);
      train_dissimilarity(net, zeroed, settings.train_cfg, seed);
      SplitInferenceResult test = run_pipeline_split(backbones, net, index, "test", ladder,
                                                     settings.perceptual_cfg, EnsembleWeights{}, {},
                                                     "", false, /*zero_uncertainty=*/true,
                                                     /*persist=*/false);
      run.test_metrics["no_uncertainty"] =
          ablation_detail::cell_from(evaluate_outputs_dissim_only(test.outputs, index));
    }

    if (need_nodatagen) {
      // the prior generator: instance swaps on ground-truth maps only
      DatagenConfig swap_only = settings.datagen_cfg;
      swap_only.mix = 1.0;
      std::vector<TrainingSample> swap_samples = ablation_detail::strip_to_training(
          build_training_set(backbones, index, ladder, settings.perceptual_cfg, swap_only, seed));
      ablation_detail::zero_uncertainty_channels(swap_samples);
      spec.use_uncertainty = false;
      DissimilarityNet net = init_dissimilarity_net(spec, seed);
      train_dissimilarity(net, swap_samples, settings.train_cfg, seed);
      SplitInferenceResult test = run_pipeline_split(backbones, net, index, "test", ladder,
                                                     settings.perceptual_cfg, EnsembleWeights{}, {},
                                                     "", false, /*zero_uncertainty=*/true,
                                                     /*persist=*/false);
      run.test_metrics["no_datagen_no_uncertainty"] =
          ablation_detail::cell_from(evaluate_outputs_dissim_only(test.outputs, index));
    }

    report.runs.push_back(std::move(run));
  }

  // mean +/- std per configuration
  if (settings.seeds.size() == 1)
    report.warnings.push_back("single-seed run: standard deviations are 0 by definition");
  for (const auto& c : settings.configs) {
    double m_ap = 0, m_fpr = 0;
    for (const auto& run : report.runs) {
      m_ap += run.test_metrics.at(c).ap;
      m_fpr += run.test_metrics.at(c).fpr95;
    }
    const double n = double(report.runs.size());
    m_ap /= n;
    m_fpr /= n;
    double v_ap = 0, v_fpr = 0;
    for (const auto& run : report.runs) {
      v_ap += std::pow(run.test_metrics.at(c).ap - m_ap, 2);
      v_fpr += std::pow(run.test_metrics.at(c).fpr95 - m_fpr, 2);
    }
    report.mean[c] = {m_ap, m_fpr};
    report.stddev[c] = {std::sqrt(v_ap / n), std::sqrt(v_fpr / n)};
  }
  return report;
}

} // namespace anomseg
