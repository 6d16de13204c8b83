// anomseg command-line driver: dataset generation, backbone training, data
// generation, dissimilarity training, inference, ensemble search, evaluation,
// ablations and reports.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "anomseg/data/shapes.hpp"
#include "anomseg/datagen/generator.hpp"
#include "anomseg/pipeline/ablation.hpp"
#include "anomseg/pipeline/config.hpp"
#include "anomseg/pipeline/report.hpp"
#include "anomseg/pipeline/runner.hpp"

namespace fs = std::filesystem;
using namespace anomseg;

namespace {

fs::path output_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("ANOMSEG_OUT")) return env;
  return "out";
}

KvConfig load_config(const std::string& path) {
  KvConfig cfg;
  if (!path.empty()) cfg = KvConfig::from_file(path);
  return cfg;
}

ShapesConfig shapes_from_config(const KvConfig& kv) {
  ShapesConfig cfg;
  cfg.width = static_cast<std::size_t>(kv.get_int("shapes.width", cfg.width));
  cfg.height = static_cast<std::size_t>(kv.get_int("shapes.height", cfg.height));
  cfg.num_train = static_cast<std::size_t>(kv.get_int("shapes.num_train", cfg.num_train));
  cfg.num_val = static_cast<std::size_t>(kv.get_int("shapes.num_val", cfg.num_val));
  cfg.num_test = static_cast<std::size_t>(kv.get_int("shapes.num_test", cfg.num_test));
  cfg.min_shapes = static_cast<std::size_t>(kv.get_int("shapes.min_shapes", cfg.min_shapes));
  cfg.max_shapes = static_cast<std::size_t>(kv.get_int("shapes.max_shapes", cfg.max_shapes));
  cfg.void_prob = kv.get_double("shapes.void_prob", cfg.void_prob);
  cfg.anomalies_per_image =
      static_cast<std::size_t>(kv.get_int("shapes.anomalies_per_image", cfg.anomalies_per_image));
  cfg.color_jitter = kv.get_double("shapes.color_jitter", cfg.color_jitter);
  cfg.noise_std = kv.get_double("shapes.noise_std", cfg.noise_std);
  cfg.min_radius_frac = kv.get_double("shapes.min_radius_frac", cfg.min_radius_frac);
  cfg.max_radius_frac = kv.get_double("shapes.max_radius_frac", cfg.max_radius_frac);
  return cfg;
}

BackboneTrainConfig backbones_from_config(const KvConfig& kv, std::uint64_t seed) {
  BackboneTrainConfig cfg;
  cfg.seg_epochs = static_cast<std::size_t>(kv.get_int("backbones.seg_epochs", cfg.seg_epochs));
  cfg.synth_epochs = static_cast<std::size_t>(kv.get_int("backbones.synth_epochs", cfg.synth_epochs));
  cfg.seg_lr = kv.get_double("backbones.seg_lr", cfg.seg_lr);
  cfg.synth_lr = kv.get_double("backbones.synth_lr", cfg.synth_lr);
  cfg.seg_width = static_cast<std::size_t>(kv.get_int("backbones.seg_width", cfg.seg_width));
  cfg.synth_hidden = static_cast<std::size_t>(kv.get_int("backbones.synth_hidden", cfg.synth_hidden));
  cfg.feature_width = static_cast<std::size_t>(kv.get_int("backbones.feature_width", cfg.feature_width));
  cfg.feature_mode = kv.get_string("backbones.feature_mode", cfg.feature_mode);
  cfg.feature_epochs = static_cast<std::size_t>(kv.get_int("backbones.feature_epochs", cfg.feature_epochs));
  cfg.max_steps_per_epoch =
      static_cast<std::size_t>(kv.get_int("backbones.max_steps_per_epoch", cfg.max_steps_per_epoch));
  cfg.seed = seed;
  return cfg;
}

DatagenConfig datagen_from_config(const KvConfig& kv) {
  DatagenConfig cfg;
  cfg.mix = kv.get_double("datagen.mix", cfg.mix);
  cfg.max_samples = static_cast<std::size_t>(kv.get_int("datagen.max_samples", cfg.max_samples));
  cfg.min_instance_area =
      static_cast<std::size_t>(kv.get_int("datagen.min_instance_area", cfg.min_instance_area));
  cfg.min_void_area = static_cast<std::size_t>(kv.get_int("datagen.min_void_area", cfg.min_void_area));
  cfg.min_swaps = static_cast<std::size_t>(kv.get_int("datagen.min_swaps", cfg.min_swaps));
  cfg.max_swaps = static_cast<std::size_t>(kv.get_int("datagen.max_swaps", cfg.max_swaps));
  cfg.recompute_uncertainty_from_altered =
      kv.get_bool("datagen.recompute_uncertainty_from_altered", cfg.recompute_uncertainty_from_altered);
  return cfg;
}

DissimTrainConfig train_from_config(const KvConfig& kv) {
  DissimTrainConfig cfg;
  cfg.epochs = static_cast<std::size_t>(kv.get_int("dissim.epochs", cfg.epochs));
  cfg.lr = kv.get_double("dissim.lr", cfg.lr);
  cfg.plateau_patience =
      static_cast<std::size_t>(kv.get_int("dissim.plateau_patience", cfg.plateau_patience));
  cfg.plateau_factor = kv.get_double("dissim.plateau_factor", cfg.plateau_factor);
  cfg.hflip_augment = kv.get_bool("dissim.hflip_augment", cfg.hflip_augment);
  cfg.class_balanced_loss = kv.get_bool("dissim.class_balanced_loss", cfg.class_balanced_loss);
  cfg.freeze_image_encoder = kv.get_bool("dissim.freeze_encoder", cfg.freeze_image_encoder);
  cfg.val_fraction = kv.get_double("dissim.val_fraction", cfg.val_fraction);
  cfg.max_steps_per_epoch =
      static_cast<std::size_t>(kv.get_int("dissim.max_steps_per_epoch", cfg.max_steps_per_epoch));
  return cfg;
}

DissimilarityNetSpec spec_from_config(const KvConfig& kv, std::size_t num_classes) {
  DissimilarityNetSpec spec;
  spec.num_classes = num_classes;
  spec.base_width = static_cast<std::size_t>(kv.get_int("dissim.width", spec.base_width));
  spec.levels = static_cast<std::size_t>(kv.get_int("dissim.levels", spec.levels));
  spec.use_uncertainty = kv.get_bool("dissim.use_uncertainty", spec.use_uncertainty);
  const double mean = kv.get_double("dissim.norm_mean", 0.5);
  const double stdv = kv.get_double("dissim.norm_std", 0.5);
  for (std::size_t i = 0; i < 3; ++i) {
    spec.norm_mean[i] = static_cast<float>(mean);
    spec.norm_std[i] = static_cast<float>(stdv);
  }
  return spec;
}

ResolutionLadder ladder_for_dataset(const fs::path& root) {
  nlohmann::json manifest;
  std::ifstream(root / "dataset.json") >> manifest;
  const auto size = manifest.at("image_size").get<std::vector<std::size_t>>();
  ResolutionLadder ladder;
  ladder.image_w = size[0];
  ladder.image_h = size[1];
  ladder.validate();
  return ladder;
}

EnsembleWeights parse_weights(const std::string& csv) {
  if (csv.empty()) return EnsembleWeights{};
  std::array<double, kEnsembleMaps> w{};
  std::stringstream ss(csv);
  std::string tok;
  std::size_t i = 0;
  while (std::getline(ss, tok, ',') && i < kEnsembleMaps) w[i++] = std::stod(tok);
  if (i != kEnsembleMaps) throw std::runtime_error("expected 4 comma-separated weights");
  return EnsembleWeights(w);
}

EnsembleWeights weights_from_file(const fs::path& path) {
  nlohmann::json j;
  std::ifstream(path) >> j;
  const auto v = j.at("weights").get<std::vector<double>>();
  return EnsembleWeights({v[0], v[1], v[2], v[3]});
}

int cmd_make_dataset(const std::string& config_path, const std::string& out, std::uint64_t seed) {
  const KvConfig kv = load_config(config_path);
  const ShapesConfig cfg = shapes_from_config(kv);
  const fs::path root = output_root(out) / "dataset";
  const DatasetIndex index = generate_shapes_dataset(root, cfg, seed);
  std::cout << "dataset at " << root << ": " << index.split("train").size() << " train / "
            << index.split("val").size() << " val / " << index.split("test").size() << " test\n";
  return 0;
}

int cmd_train_backbones(const std::string& config_path, const std::string& dataset,
                        const std::string& out, std::uint64_t seed) {
  const KvConfig kv = load_config(config_path);
  const DatasetIndex index = load_dataset_index(dataset);
  const ResolutionLadder ladder = ladder_for_dataset(dataset);
  BackboneTrainConfig cfg = backbones_from_config(kv, seed);
  BackboneBundle bundle = make_toy_bundle(index, ladder.image_h, ladder.image_w, cfg);
  const BackboneTrainResult result = train_toy_backbones(index, bundle, cfg);
  const fs::path dir = output_root(out) / "backbones";
  save_backbones(dir, bundle, cfg, result);
  std::cout << "backbones at " << dir << ": seg pixel accuracy "
            << result.seg_pixel_accuracy << ", synth MAE " << result.synth_mae
            << (result.trained ? "" : " (untrained)") << "\n";
  return 0;
}

int cmd_generate_training_data(const std::string& config_path, const std::string& dataset,
                               const std::string& backbones_dir, const std::string& out,
                               std::uint64_t seed) {
  const KvConfig kv = load_config(config_path);
  const DatasetIndex index = load_dataset_index(dataset);
  const ResolutionLadder ladder = ladder_for_dataset(dataset);
  BackboneBundle backbones = load_backbones(backbones_dir, index);
  const DatagenConfig cfg = datagen_from_config(kv);
  DatagenSummary summary;
  PerceptualConfig perceptual;
  const auto samples =
      build_training_set(backbones, index, ladder, perceptual, cfg, seed, &summary);
  const fs::path dir = output_root(out) / "training_data";
  save_samples(dir, samples, summary);
  std::cout << "generated " << samples.size() << " samples (" << summary.swap_samples << " swap / "
            << summary.void_samples << " void) at " << dir << "\n";
  for (const auto& note : summary.notes) std::cout << "  note: " << note << "\n";
  return 0;
}

int cmd_train_dissimilarity(const std::string& config_path, const std::string& samples_dir,
                            const std::string& dataset, const std::string& out, std::uint64_t seed,
                            std::size_t joint_epochs) {
  const KvConfig kv = load_config(config_path);
  const DatasetIndex index = load_dataset_index(dataset);
  const std::vector<TrainingSample> samples = load_samples(samples_dir);
  DissimilarityNetSpec spec = spec_from_config(kv, static_cast<std::size_t>(index.num_classes));
  DissimilarityNet net = init_dissimilarity_net(spec, seed);
  const DissimTrainConfig cfg = train_from_config(kv);
  const TrainLog log = train_dissimilarity(net, samples, cfg, seed);
  const fs::path dir = output_root(out) / "dissimilarity";
  save_dissimilarity_checkpoint(dir, net, seed, log);
  std::cout << "dissimilarity checkpoint at " << dir << " (best epoch " << log.best_epoch
            << ", best val loss " << log.best_val_loss << ")\n";
  if (joint_epochs > 0) {
    const auto joint = train_with_ensemble_head(net, samples, joint_epochs, cfg.lr, 0.05, seed);
    nlohmann::json j;
    j["weights"] = joint.weights.w;
    j["loss_curve"] = joint.loss_curve;
    std::ofstream(dir / "joint_ensemble.json") << j.dump(2) << "\n";
    std::cout << "joint ensemble weights:";
    for (double w : joint.weights.w) std::cout << " " << w;
    std::cout << "\n";
  }
  return 0;
}

int cmd_uncertainty(const std::string& softmax_path, const std::string& image_path,
                    const std::string& synth_path, const std::string& backbones_dir,
                    const std::string& out, bool emit_png) {
  const SoftmaxMap softmax(load_tensor<float>(softmax_path));
  softmax.validate();
  const fs::path dir = output_root(out) / "uncertainty";
  fs::create_directories(dir);
  const DispersionMap entropy = softmax_entropy(softmax);
  const DispersionMap distance = softmax_distance(softmax);
  save_tensor(dir / "entropy.tsr", entropy.t);
  save_tensor(dir / "distance.tsr", distance.t);
  std::cout << "wrote " << (dir / "entropy.tsr") << " and " << (dir / "distance.tsr") << "\n";

  const auto to_png = [&](const Tensor<float>& m, const fs::path& p) {
    Tensor<std::uint8_t> gray({m.dim(0), m.dim(1)});
    for (std::size_t i = 0; i < m.size(); ++i)
      gray[i] = static_cast<std::uint8_t>(std::lround(std::clamp(m[i], 0.0f, 1.0f) * 255.0f));
    save_gray_png(p, gray);
  };
  if (emit_png) {
    to_png(entropy.t, dir / "entropy.png");
    to_png(distance.t, dir / "distance.png");
  }

  if (!image_path.empty() && !synth_path.empty() && !backbones_dir.empty()) {
    // perceptual difference needs the feature extractor and the two images
    nlohmann::json meta;
    std::ifstream(fs::path(backbones_dir) / "backbones.json") >> meta;
    FeatureExtractor extractor(meta.at("feature_width").get<std::size_t>());
    load_checkpoint(fs::path(backbones_dir) / "features", extractor.params());
    const RgbImage image = load_image(image_path);
    const RgbImage synth = load_image(synth_path);
    PerceptualConfig cfg;
    const DispersionMap v =
        perceptual_difference(extractor.extract(image), extractor.extract(synth), cfg);
    save_tensor(dir / "perceptual.tsr", v.t);
    if (emit_png) to_png(v.t, dir / "perceptual.png");
    std::cout << "wrote " << (dir / "perceptual.tsr") << "\n";
  } else {
    std::cout << "perceptual map skipped (needs --image, --synth and --backbones)\n";
  }
  return 0;
}

int cmd_infer(const std::string& config_path, const std::string& dataset, const std::string& split,
              const std::string& image_path, const std::string& backbones_dir,
              const std::string& checkpoint, const std::string& weights_csv,
              const std::string& weights_json, const std::string& out, bool keep_intermediates) {
  const KvConfig kv = load_config(config_path);
  const DatasetIndex index = load_dataset_index(dataset);
  const ResolutionLadder ladder = ladder_for_dataset(dataset);
  BackboneBundle backbones = load_backbones(backbones_dir, index);
  DissimilarityNet net = load_dissimilarity_checkpoint(checkpoint);
  EnsembleWeights weights =
      !weights_json.empty() ? weights_from_file(weights_json) : parse_weights(weights_csv);
  PerceptualConfig perceptual;
  const fs::path dir = output_root(out) / ("infer_" + (image_path.empty() ? split : "single"));

  if (!image_path.empty()) {
    const RgbImage image = load_image(image_path);
    StageTimer timer;
    PipelineOutput o = run_pipeline_single(backbones, net, image, fs::path(image_path).stem().string(),
                                           ladder, perceptual, weights, &timer);
    fs::create_directories(dir);
    save_tensor(dir / (o.stem + ".score.tsr"), o.final_score.t);
    RunManifest manifest = RunManifest::create(kv.hash());
    for (const auto& [stage, ms] : timer.ms)
      manifest.j["stages"].push_back({{"stage", stage}, {"ms", ms}});
    manifest.j["images"].push_back({{"stem", o.stem}});
    manifest.save(dir / "run_manifest.json");
    std::cout << "score written to " << (dir / (o.stem + ".score.tsr")) << "\n";
    return 0;
  }

  SplitInferenceResult result = run_pipeline_split(backbones, net, index, split, ladder, perceptual,
                                                   weights, dir, kv.hash(), keep_intermediates);
  std::cout << "inference over " << result.outputs.size() << " images written to " << dir << "\n";
  return 0;
}

int cmd_ensemble_search(const std::string& dataset, const std::string& maps_dir, double step,
                        const std::string& objective, bool learned, const std::string& out) {
  const DatasetIndex index = load_dataset_index(dataset);
  // maps_dir holds <stem>.<channel>.tsr quadruples from `infer`
  std::vector<ScoreMapSet> sets;
  std::vector<AnomalyLabelMap> labels;
  std::vector<std::string> stems;
  for (const auto& e : fs::directory_iterator(maps_dir)) {
    const std::string name = e.path().filename().string();
    const std::string suffix = ".dissimilarity.tsr";
    if (name.size() > suffix.size() && name.substr(name.size() - suffix.size()) == suffix)
      stems.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(stems.begin(), stems.end());
  if (stems.empty()) throw std::runtime_error("no map quadruples found in " + maps_dir);
  for (const auto& stem : stems) {
    ScoreMapSet set;
    set.stem = stem;
    for (std::size_t m = 0; m < kEnsembleMaps; ++m)
      set.maps[m] = load_tensor<float>(fs::path(maps_dir) /
                                       (stem + std::string(".") + ensemble_channel_name(m) + ".tsr"));
    const auto& rec = index.find(stem);
    const SemanticMap sem = load_record_semantic(rec, index.num_classes);
    AnomalyLabelMap full = anomaly_labels_from_gt(sem);
    labels.push_back(AnomalyLabelMap(
        resize(full.t, set.maps[0].dim(0), set.maps[0].dim(1), ResizeMode::kNearest)));
    sets.push_back(std::move(set));
  }

  const GridObjective obj =
      objective == "fpr95" ? GridObjective::kFpr95 : GridObjective::kAveragePrecision;
  const GridSearchResult result = grid_search(sets, labels, step, obj);

  nlohmann::json j;
  j["weights"] = result.best.w;
  j["best_ap"] = result.best_ap;
  j["best_fpr95"] = result.best_fpr95;
  j["step"] = result.step;
  j["objective"] = objective;
  j["convention"] = "weights normalized to the 4-simplex; channels "
                    "(dissimilarity, entropy, distance, perceptual)";
  for (const auto& p : result.log)
    j["grid"].push_back({{"w", p.w}, {"ap", p.ap}, {"fpr95", p.fpr95}});
  if (learned) {
    const LearnWeightsResult lw = learn_weights(sets, labels);
    j["learned_weights"] = lw.weights.w;
    j["learned_loss_curve"] = lw.loss_curve;
  }
  const fs::path path = output_root(out) / "ensemble_weights.json";
  fs::create_directories(path.parent_path());
  std::ofstream(path) << j.dump(2) << "\n";
  std::cout << "best weights";
  for (double w : result.best.w) std::cout << " " << w;
  std::cout << " (AP " << result.best_ap << ", FPR95 " << result.best_fpr95 << ") -> " << path << "\n";
  return 0;
}

int cmd_evaluate(const std::string& dataset, const std::string& split, const std::string& scores_dir,
                 const std::string& out, bool curves) {
  const DatasetIndex index = load_dataset_index(dataset);
  std::vector<AnomalyScoreMap> scores;
  std::vector<AnomalyLabelMap> labels;
  std::vector<double> pooled_scores;
  std::vector<std::uint8_t> pooled_labels;
  for (const auto* rec : index.split(split)) {
    const fs::path p = fs::path(scores_dir) / (rec->stem + ".tsr");
    if (!fs::exists(p)) throw std::runtime_error("missing score map: " + p.string());
    AnomalyScoreMap score(load_tensor<float>(p));
    const SemanticMap sem = load_record_semantic(*rec, index.num_classes);
    AnomalyLabelMap label = anomaly_labels_from_gt(sem);
    if (score.height() != label.height())
      score = AnomalyScoreMap(resize(score.t, label.height(), label.width(), ResizeMode::kBilinear));
    if (curves)
      for (std::size_t i = 0; i < label.t.size(); ++i)
        if (label.t[i] != kIgnoreLabel) {
          pooled_scores.push_back(score.t[i]);
          pooled_labels.push_back(label.t[i]);
        }
    scores.push_back(std::move(score));
    labels.push_back(std::move(label));
  }
  const EvalResult result = evaluate(scores, labels);
  const fs::path dir = output_root(out) / ("eval_" + split);
  const auto files = emit_report(dir, {{split, result}},
                                 curves ? pr_curve(pooled_scores, pooled_labels)
                                        : std::vector<CurvePoint>{},
                                 curves ? roc_curve(pooled_scores, pooled_labels)
                                        : std::vector<CurvePoint>{});
  std::cout << split << ": AP " << result.ap << ", FPR95 " << result.fpr95 << ", AUROC "
            << result.auroc << "  (report at " << files.summary_json << ")\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& dataset, const std::string& out,
               const std::string& seeds_csv, const std::string& configs_csv) {
  const KvConfig kv = load_config(config_path);
  AblationSettings settings;
  settings.dataset_root = dataset;
  settings.work_dir = output_root(out) / "ablation";
  if (!seeds_csv.empty()) {
    settings.seeds.clear();
    std::stringstream ss(seeds_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) settings.seeds.push_back(std::stoull(tok));
  }
  if (!configs_csv.empty()) {
    settings.configs.clear();
    std::stringstream ss(configs_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) settings.configs.push_back(tok);
  }
  settings.backbone_cfg = backbones_from_config(kv, settings.backbone_seed);
  settings.datagen_cfg = datagen_from_config(kv);
  settings.train_cfg = train_from_config(kv);
  settings.net_spec = spec_from_config(kv, 4);
  settings.grid_step = kv.get_double("ensemble.step", settings.grid_step);

  const AblationReport report = run_ablation(settings);
  fs::create_directories(settings.work_dir);
  std::ofstream(settings.work_dir / "ablation.json") << report.to_json().dump(2) << "\n";
  std::cout << report.table();
  for (const auto& w : report.warnings) std::cout << "warning: " << w << "\n";
  std::cout << "details at " << (settings.work_dir / "ablation.json") << "\n";
  return 0;
}

int cmd_report(const std::string& dataset, const std::string& split, const std::string& scores_dir,
               const std::string& out, bool overlays) {
  const DatasetIndex index = load_dataset_index(dataset);
  const fs::path dir = output_root(out) / ("report_" + split);
  fs::create_directories(dir);
  std::vector<AnomalyScoreMap> scores;
  std::vector<AnomalyLabelMap> labels;
  for (const auto* rec : index.split(split)) {
    const fs::path p = fs::path(scores_dir) / (rec->stem + ".tsr");
    if (!fs::exists(p)) throw std::runtime_error("missing score map: " + p.string());
    AnomalyScoreMap score(load_tensor<float>(p));
    const SemanticMap sem = load_record_semantic(*rec, index.num_classes);
    AnomalyLabelMap label = anomaly_labels_from_gt(sem);
    if (score.height() != label.height())
      score = AnomalyScoreMap(resize(score.t, label.height(), label.width(), ResizeMode::kBilinear));
    if (overlays) {
      const RgbImage image = load_record_image(*rec);
      save_image(dir / (rec->stem + ".overlay.png"), render_overlay(image, score));
    }
    scores.push_back(std::move(score));
    labels.push_back(std::move(label));
  }
  const EvalResult result = evaluate(scores, labels);
  emit_report(dir, {{split, result}});
  std::cout << "report for " << split << " at " << dir << "\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"pixel-wise anomaly segmentation framework"};
  app.require_subcommand(1);

  std::string config_path, dataset, out, split = "test";
  std::uint64_t seed = 1;
  bool keep_intermediates = false;
  app.add_option("--config", config_path, "key=value config file (supports 'include <path>')");
  app.add_option("--seed", seed, "random seed");
  app.add_option("--out", out, "output root (default: $ANOMSEG_OUT or ./out)");
  app.add_flag("--keep-intermediates", keep_intermediates, "persist per-stage tensors");

  auto* mk = app.add_subcommand("make-dataset", "generate the synthetic shapes dataset");

  auto* tb = app.add_subcommand("train-backbones", "train the toy segmentation/synthesis backbones");
  tb->add_option("--dataset", dataset, "dataset root")->required();

  std::string backbones_dir;
  auto* gtd = app.add_subcommand("generate-training-data", "build dissimilarity training samples");
  gtd->add_option("--dataset", dataset, "dataset root")->required();
  gtd->add_option("--backbones", backbones_dir, "backbone checkpoint dir")->required();

  std::string samples_dir;
  std::size_t joint_epochs = 0;
  auto* td = app.add_subcommand("train-dissimilarity", "train the dissimilarity network");
  td->add_option("--dataset", dataset, "dataset root")->required();
  td->add_option("--samples", samples_dir, "generated training data dir")->required();
  td->add_option("--joint-ensemble-epochs", joint_epochs,
                 "after training, learn ensemble scalars end-to-end for N epochs");

  std::string softmax_path, image_path, synth_path;
  bool emit_png = false;
  auto* unc = app.add_subcommand("uncertainty", "dispersion maps from a stored softmax tensor");
  unc->add_option("--softmax", softmax_path, "softmax .tsr (C,H,W)")->required();
  unc->add_option("--image", image_path, "input image (for the perceptual map)");
  unc->add_option("--synth", synth_path, "synthesized image (for the perceptual map)");
  unc->add_option("--backbones", backbones_dir, "backbone dir (for the feature extractor)");
  unc->add_flag("--png", emit_png, "also write grayscale PNG visualizations");

  std::string checkpoint, weights_csv, weights_json;
  auto* inf = app.add_subcommand("infer", "run the full pipeline");
  inf->add_option("--dataset", dataset, "dataset root")->required();
  inf->add_option("--split", split, "dataset split (default test)");
  inf->add_option("--image", image_path, "single image instead of a split");
  inf->add_option("--backbones", backbones_dir, "backbone checkpoint dir")->required();
  inf->add_option("--checkpoint", checkpoint, "dissimilarity checkpoint dir")->required();
  inf->add_option("--weights", weights_csv, "ensemble weights w0,w1,w2,w3 (default 1,0,0,0)");
  inf->add_option("--weights-json", weights_json, "ensemble weights JSON from ensemble-search");

  std::string maps_dir, objective = "ap";
  double grid_step = 0.1;
  bool learned = false;
  auto* es = app.add_subcommand("ensemble-search", "grid-search ensemble weights on a split");
  es->add_option("--dataset", dataset, "dataset root")->required();
  es->add_option("--maps", maps_dir, "maps dir produced by `infer` on the validation split")->required();
  es->add_option("--step", grid_step, "simplex grid spacing (default 0.1)");
  es->add_option("--objective", objective, "ap (default) or fpr95");
  es->add_flag("--learned", learned, "also fit the scalars by gradient descent for comparison");

  std::string scores_dir;
  bool curves = false;
  auto* ev = app.add_subcommand("evaluate", "pixel-level AP / FPR95 / AUROC for stored scores");
  ev->add_option("--dataset", dataset, "dataset root")->required();
  ev->add_option("--split", split, "dataset split (default test)");
  ev->add_option("--scores", scores_dir, "scores dir produced by `infer`")->required();
  ev->add_flag("--curves", curves, "emit PR/ROC curve data");

  std::string seeds_csv, configs_csv;
  auto* ab = app.add_subcommand("ablate", "train+evaluate the framework configurations over seeds");
  ab->add_option("--dataset", dataset, "dataset root")->required();
  ab->add_option("--seeds", seeds_csv, "comma-separated seeds (default 1,2,3)");
  ab->add_option("--configs", configs_csv, "comma-separated configuration names (default all)");

  bool overlays = false;
  auto* rp = app.add_subcommand("report", "evaluation report + optional score overlays");
  rp->add_option("--dataset", dataset, "dataset root")->required();
  rp->add_option("--split", split, "dataset split (default test)");
  rp->add_option("--scores", scores_dir, "scores dir produced by `infer`")->required();
  rp->add_flag("--overlays", overlays, "render score overlays as PNG");

  CLI11_PARSE(app, argc, argv);

  try {
    if (mk->parsed()) return cmd_make_dataset(config_path, out, seed);
    if (tb->parsed()) return cmd_train_backbones(config_path, dataset, out, seed);
    if (gtd->parsed())
      return cmd_generate_training_data(config_path, dataset, backbones_dir, out, seed);
    if (td->parsed())
      return cmd_train_dissimilarity(config_path, samples_dir, dataset, out, seed, joint_epochs);
    if (unc->parsed())
      return cmd_uncertainty(softmax_path, image_path, synth_path, backbones_dir, out, emit_png);
    if (inf->parsed())
      return cmd_infer(config_path, dataset, split, image_path, backbones_dir, checkpoint,
                       weights_csv, weights_json, out, keep_intermediates);
    if (es->parsed())
      return cmd_ensemble_search(dataset, maps_dir, grid_step, objective, learned, out);
    if (ev->parsed()) return cmd_evaluate(dataset, split, scores_dir, out, curves);
    if (ab->parsed()) return cmd_ablate(config_path, dataset, out, seeds_csv, configs_csv);
    if (rp->parsed()) return cmd_report(dataset, split, scores_dir, out, overlays);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
