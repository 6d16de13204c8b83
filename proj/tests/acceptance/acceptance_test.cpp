// Acceptance suite: one pass/fail line per criterion, every tolerance pinned
// in code. Criterion 6 trains the whole framework end-to-end on the shapes
// dataset and is the long pole (tens of minutes on CPU).

#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "anomseg/data/shapes.hpp"
#include "anomseg/datagen/generator.hpp"
#include "anomseg/pipeline/ablation.hpp"
#include "anomseg/pipeline/runner.hpp"
#include "../support/brute_force_metrics.hpp"
#include "../support/test_util.hpp"

using namespace anomseg;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define ACHECK(cond, msg)                                                                          \
  do {                                                                                             \
    if (!(cond)) {                                                                                 \
      std::ostringstream os_;                                                                      \
      os_ << msg;                                                                                  \
      throw CheckFailure(os_.str());                                                               \
    }                                                                                              \
  } while (0)

// ---------------------------------------------------------------------------
// Criterion 1: dispersion-map analytics (exact corners + 1e-9 two-class case)
// ---------------------------------------------------------------------------
void criterion_dispersion_analytics() {
  {
    const Tensor<double> uniform({19, 3, 4}, 1.0 / 19.0);
    for (double v : softmax_entropy(uniform).t.raw())
      ACHECK(v == 1.0, "uniform entropy must be exactly 1, got " << v);
    for (double v : softmax_distance(uniform).t.raw())
      ACHECK(v == 1.0, "uniform distance must be exactly 1, got " << v);
    const Tensor<float> uniform_f({19, 2, 2}, 1.0f / 19.0f);
    for (float v : softmax_entropy(uniform_f).t.raw())
      ACHECK(v == 1.0f, "uniform entropy (float path) must be exactly 1, got " << v);
  }
  {
    Tensor<double> onehot({19, 1, 1}, 0.0);
    onehot[7] = 1.0;
    ACHECK(softmax_entropy(onehot).t[0] == 0.0, "one-hot entropy must be exactly 0");
    ACHECK(softmax_distance(onehot).t[0] == 0.0, "one-hot distance must be exactly 0");
  }
  {
    Tensor<double> two({19, 1, 1}, 0.0);
    two[0] = 0.5;
    two[1] = 0.5;
    const double expected = 1.0 / std::log2(19.0);
    const double got = softmax_entropy(two).t[0];
    ACHECK(std::fabs(got - expected) < 1e-9,
           "two-class entropy " << got << " vs " << expected << " exceeds 1e-9");
  }
}

// ---------------------------------------------------------------------------
// Criterion 2: evaluate() vs brute-force oracles, 1000 cases, |delta| < 1e-9
// ---------------------------------------------------------------------------
void criterion_metric_oracle() {
  Rng rng(20240801);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = 2 + rng.uniform_index(99);
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = rng.uniform();
      if (i % 2 == 0 && rng.bernoulli(0.5)) s = std::round(s * 4.0) / 4.0;
      scores[j] = s;
      labels[j] = rng.bernoulli(0.4) ? 1 : 0;
    }
    labels[0] = 1;
    labels[n - 1] = 0;
    const EvalResult r = evaluate_pooled(scores, labels);
    const double ap = anomseg_test::brute_force_ap(scores, labels);
    const double auroc = anomseg_test::brute_force_auroc(scores, labels);
    const double fpr95 = anomseg_test::brute_force_fpr_at_tpr(scores, labels, 0.95);
    ACHECK(std::fabs(r.ap - ap) < 1e-9, "AP mismatch " << r.ap << " vs " << ap << " in case " << i);
    ACHECK(std::fabs(r.auroc - auroc) < 1e-9,
           "AUROC mismatch " << r.auroc << " vs " << auroc << " in case " << i);
    ACHECK(std::fabs(r.fpr95 - fpr95) < 1e-9,
           "FPR95 mismatch " << r.fpr95 << " vs " << fpr95 << " in case " << i);
  }
}

// ---------------------------------------------------------------------------
// Criterion 3: metrics invariant under x -> x^3, |delta| <= 1e-12, 100 cases
// ---------------------------------------------------------------------------
void criterion_monotone_invariance() {
  Rng rng(555);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 5 + rng.uniform_index(300);
    std::vector<double> scores(n), cubed(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t j = 0; j < n; ++j) {
      double s = rng.uniform();
      if (i % 3 == 0 && rng.bernoulli(0.4)) s = std::round(s * 8.0) / 8.0;
      scores[j] = s;
      cubed[j] = s * s * s;
      labels[j] = rng.bernoulli(0.3) ? 1 : 0;
    }
    labels[0] = 1;
    labels[n - 1] = 0;
    const EvalResult a = evaluate_pooled(scores, labels);
    const EvalResult b = evaluate_pooled(cubed, labels);
    ACHECK(std::fabs(a.ap - b.ap) <= 1e-12, "AP moved by " << std::fabs(a.ap - b.ap));
    ACHECK(std::fabs(a.auroc - b.auroc) <= 1e-12, "AUROC moved");
    ACHECK(std::fabs(a.fpr95 - b.fpr95) <= 1e-12, "FPR95 moved");
  }
}

// ---------------------------------------------------------------------------
// Criterion 4: analytic vs central-difference gradients on the 8x4 micro net,
// double precision, relative error < 1e-3. Step 1e-6 keeps the central
// difference inside its validity regime at this geometry (the 8-pixel
// instance-norm statistics induce curvature that invalidates larger probes;
// see the unit suite for the step-1e-4 variant at a conditioned point).
// ---------------------------------------------------------------------------
void criterion_gradient_check() {
  DissimilarityNetSpec spec;
  spec.num_classes = 3;
  spec.base_width = 4;
  spec.levels = 2;
  spec.use_uncertainty = true;
  auto net = init_dissimilarity_net<double>(spec, 7);

  Rng rng(3);
  DissimilarityInputsT<double> in;
  in.image = anomseg_test::random_tensor<double>({3, 4, 8}, rng, true);
  in.synthesized = anomseg_test::random_tensor<double>({3, 4, 8}, rng, true);
  in.semantic_onehot = Tensor<double>({3, 4, 8}, 0.0);
  for (std::size_t p = 0; p < 32; ++p) in.semantic_onehot[(p % 3) * 32 + p] = 1.0;
  in.uncertainty = anomseg_test::random_tensor<double>({3, 4, 8}, rng, true);
  AnomalyLabelMap y(4, 8);
  Rng lr(9);
  for (auto& v : y.t.raw()) v = lr.uniform() < 0.3 ? 1 : 0;
  y.t[5] = kIgnoreLabel;

  auto params = net.params();
  auto loss_fn = [&]() {
    Tensor<double> logits = net.forward(in);
    auto l = anomaly_cross_entropy(logits, y, true);
    net.clear_cache();
    return l.loss;
  };
  for (auto& p : params) p.param->zero_grad();
  {
    Tensor<double> logits = net.forward(in);
    auto l = anomaly_cross_entropy(logits, y, true);
    net.backward(l.grad_logits);
  }
  double gmax = 0;
  for (auto& p : params)
    for (double g : p.param->grad.raw()) gmax = std::max(gmax, std::fabs(g));
  ACHECK(gmax > 0.0, "degenerate gradient");

  const double eps = 1e-6;
  Rng pick(11);
  for (auto& p : params) {
    const std::size_t n = p.param->value.size();
    for (std::size_t t = 0; t < std::min<std::size_t>(n, 6); ++t) {
      const std::size_t j = n <= 6 ? t : pick.uniform_index(n);
      const double orig = p.param->value[j];
      p.param->value[j] = orig + eps;
      const double lp = loss_fn();
      p.param->value[j] = orig - eps;
      const double lm = loss_fn();
      p.param->value[j] = orig;
      const double fd = (lp - lm) / (2 * eps);
      const double an = p.param->grad[j];
      const double rel =
          std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-3 * gmax});
      ACHECK(rel < 1e-3, "gradient mismatch " << rel << " at " << p.name << "[" << j << "]");
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 5: wiring tests, all exact
// ---------------------------------------------------------------------------
void criterion_wiring() {
  DissimilarityNetSpec spec;
  spec.num_classes = 3;
  spec.base_width = 4;
  spec.levels = 2;
  auto net = init_dissimilarity_net<float>(spec, 11);
  Rng rng(4);

  // (a) zero uncertainty stack zeroes every fusion output, for any weights
  for (auto& p : net.params())
    for (auto& v : p.param->value.raw()) v += 0.1f * float(rng.normal());
  DissimilarityInputsT<float> in;
  in.image = anomseg_test::random_tensor<float>({3, 4, 8}, rng, true);
  in.synthesized = anomseg_test::random_tensor<float>({3, 4, 8}, rng, true);
  in.semantic_onehot = Tensor<float>({3, 4, 8}, 0.0f);
  for (std::size_t p = 0; p < 32; ++p) in.semantic_onehot[(p % 3) * 32 + p] = 1.0f;
  in.uncertainty = Tensor<float>({3, 4, 8}, 0.0f);
  net.forward(in);
  for (const auto& fused : net.last_fused())
    for (float v : fused.raw()) ACHECK(v == 0.0f, "fusion output not zeroed by zero stack");
  net.clear_cache();

  // (b) the image and synthesized branches run through one shared parameter
  // set (single storage: bit-identical before and after any update), and a
  // training step keeps the network finite and functional
  std::size_t encoder_params = 0;
  for (const auto& p : net.params()) {
    ACHECK(p.name.find("synth") == std::string::npos, "separate synthesized-branch weights exist");
    if (p.name.rfind("image_encoder.", 0) == 0) ++encoder_params;
  }
  ACHECK(encoder_params > 0, "shared encoder exposes no parameters");
  {
    std::vector<TrainingSample> samples(1);
    samples[0].inputs.image = in.image;
    samples[0].inputs.synthesized = in.synthesized;
    samples[0].inputs.semantic_onehot = in.semantic_onehot;
    samples[0].inputs.uncertainty = anomseg_test::random_tensor<float>({3, 4, 8}, rng, true);
    samples[0].label = AnomalyLabelMap(4, 8);
    for (std::size_t i = 0; i < 16; ++i) samples[0].label.t[i] = 1;
    DissimTrainConfig cfg;
    cfg.epochs = 1;
    cfg.val_fraction = 0.0;
    train_dissimilarity(net, samples, cfg, 1);
    for (const auto& p : net.params())
      ACHECK(p.param->value.all_finite(), "weights not finite after a training step");
  }

  // (c) SPADE wiring: perturbing the semantic input changes the output
  auto net2 = init_dissimilarity_net<float>(spec, 6);
  for (auto& p : net2.params())
    for (auto& v : p.param->value.raw()) v += 0.05f * float(rng.normal());
  DissimilarityInputsT<float> base = in;
  base.uncertainty = anomseg_test::random_tensor<float>({3, 4, 8}, rng, true);
  const Tensor<float> s1 = net2.score(base);
  DissimilarityInputsT<float> perturbed = base;
  for (std::size_t p = 0; p < 32; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      perturbed.semantic_onehot[c * 32 + p] = base.semantic_onehot[((c + 1) % 3) * 32 + p];
  const Tensor<float> s2 = net2.score(perturbed);
  bool changed = false;
  for (std::size_t i = 0; i < s1.size(); ++i) changed = changed || s1[i] != s2[i];
  ACHECK(changed, "semantic perturbation did not change the output (SPADE wiring broken)");
}

// ---------------------------------------------------------------------------
// Criteria 6 and 7: end-to-end directional reproduction of the ablation
// structure on the shapes dataset, plus grid-search corner dominance.
// ---------------------------------------------------------------------------
struct EndToEndResult {
  AblationReport report;
  double positive_rate = 0.0;
};

EndToEndResult run_end_to_end(const std::filesystem::path& work) {
  ShapesConfig shapes;
  shapes.width = 192;
  shapes.height = 96;
  shapes.num_train = 500;
  shapes.num_val = 50;
  shapes.num_test = 100;
  const DatasetIndex index = generate_shapes_dataset(work / "data", shapes, 2024);
  std::cerr << "[acceptance] dataset ready: " << index.split("train").size() << " train / "
            << index.split("val").size() << " val / " << index.split("test").size() << " test\n";

  AblationSettings settings;
  settings.dataset_root = work / "data";
  settings.work_dir = work / "ablation";
  settings.configs = {"full", "no_ensemble", "no_uncertainty"};
  settings.seeds = {1, 2, 3};
  settings.verbose = true;

  settings.backbone_cfg.seg_epochs = 2;
  settings.backbone_cfg.synth_epochs = 2;
  settings.backbone_cfg.seg_width = 12;
  settings.backbone_cfg.synth_hidden = 24;

  settings.datagen_cfg.max_samples = 260;
  settings.datagen_cfg.min_instance_area = 64;

  settings.train_cfg.epochs = 8;
  settings.train_cfg.lr = 3e-4;
  settings.train_cfg.plateau_patience = 4;
  settings.train_cfg.val_fraction = 0.1;

  settings.net_spec.base_width = 16;
  settings.net_spec.levels = 4;

  EndToEndResult out;
  out.report = run_ablation(settings);
  out.positive_rate = out.report.runs.front().positive_rate_test;
  std::cerr << out.report.table();
  return out;
}

void criterion_end_to_end(const EndToEndResult& r) {
  const double full_ap = r.report.mean.at("full").ap;
  const double nounc_ap = r.report.mean.at("no_uncertainty").ap;
  const double pos_rate = r.positive_rate;
  ACHECK(full_ap >= 1.5 * nounc_ap, "full mean AP " << full_ap << " < 1.5 x w/o-uncertainty AP "
                                                    << nounc_ap);
  ACHECK(full_ap >= 3.0 * pos_rate,
         "full mean AP " << full_ap << " < 3 x positive rate " << pos_rate);
  ACHECK(nounc_ap >= 3.0 * pos_rate,
         "w/o-uncertainty mean AP " << nounc_ap << " < 3 x positive rate " << pos_rate);
  std::size_t fpr_improved = 0;
  for (const auto& run : r.report.runs)
    if (run.val_ensemble.fpr95 <= run.val_dissim_only.fpr95) ++fpr_improved;
  ACHECK(fpr_improved >= 2, "ensemble FPR95 beat the standalone dissimilarity on only "
                                << fpr_improved << "/3 seeds");
}

void criterion_ensemble_dominance(const EndToEndResult& r) {
  for (const auto& run : r.report.runs) {
    for (std::size_t m = 0; m < kEnsembleMaps; ++m) {
      ACHECK(run.val_grid_ap >= run.val_corner_ap[m],
             "seed " << run.seed << ": grid AP " << run.val_grid_ap << " < corner "
                     << ensemble_channel_name(m) << " AP " << run.val_corner_ap[m]);
    }
  }
}

// ---------------------------------------------------------------------------
// Criterion 8: identical config + seed => bit-identical metrics
// ---------------------------------------------------------------------------
void criterion_determinism(const std::filesystem::path& work) {
  ShapesConfig shapes;
  shapes.width = 96;
  shapes.height = 64;
  shapes.num_train = 16;
  shapes.num_val = 3;
  shapes.num_test = 4;
  generate_shapes_dataset(work / "det_data", shapes, 99);

  const auto run_once = [&](const std::filesystem::path& dir) {
    AblationSettings settings;
    settings.dataset_root = work / "det_data";
    settings.work_dir = dir;
    settings.configs = {"full", "no_ensemble"};
    settings.seeds = {5};
    settings.backbone_cfg.seg_epochs = 1;
    settings.backbone_cfg.synth_epochs = 1;
    settings.backbone_cfg.seg_width = 8;
    settings.backbone_cfg.synth_hidden = 8;
    settings.backbone_cfg.feature_width = 8;
    settings.datagen_cfg.min_instance_area = 16;
    settings.datagen_cfg.max_samples = 8;
    settings.train_cfg.epochs = 2;
    settings.train_cfg.val_fraction = 0.0;
    settings.net_spec.base_width = 4;
    settings.net_spec.levels = 3;
    settings.grid_step = 0.5;
    return run_ablation(settings);
  };
  const AblationReport a = run_once(work / "det_a");
  const AblationReport b = run_once(work / "det_b");
  for (const std::string cfg : {"full", "no_ensemble"}) {
    ACHECK(a.mean.at(cfg).ap == b.mean.at(cfg).ap,
           cfg << " AP differs between identical runs: " << a.mean.at(cfg).ap << " vs "
               << b.mean.at(cfg).ap);
    ACHECK(a.mean.at(cfg).fpr95 == b.mean.at(cfg).fpr95, cfg << " FPR95 differs between runs");
  }
  ACHECK(a.runs[0].val_grid_ap == b.runs[0].val_grid_ap, "grid search AP differs between runs");
  for (std::size_t m = 0; m < kEnsembleMaps; ++m)
    ACHECK(a.runs[0].weights[m] == b.runs[0].weights[m], "chosen weights differ between runs");
}

// ---------------------------------------------------------------------------
// Criterion 9: datagen correctness on the acceptance dataset
// ---------------------------------------------------------------------------
void criterion_datagen(const std::filesystem::path& work) {
  const DatasetIndex index = load_dataset_index(work / "data");
  BackboneBundle backbones = load_backbones(work / "ablation" / "backbones", index);
  ResolutionLadder ladder;
  ladder.image_w = 192;
  ladder.image_h = 96;
  DatagenConfig cfg;
  cfg.min_instance_area = 64;
  cfg.max_samples = 60;

  // leak check: stems disjoint between train and the anomaly splits
  std::set<std::string> train_stems, other_stems;
  for (const auto& rec : index.records)
    (rec.split == "train" ? train_stems : other_stems).insert(rec.stem);
  for (const auto& s : train_stems)
    ACHECK(!other_stems.count(s), "stem " << s << " leaks across splits");

  PerceptualConfig perceptual;
  const auto samples = build_training_set(backbones, index, ladder, perceptual, cfg, 13);
  ACHECK(!samples.empty(), "generator produced nothing");
  std::size_t swap_checked = 0, void_checked = 0;
  const auto [dh, dw] = ladder.dissimilarity();
  for (const auto& gs : samples) {
    ACHECK(train_stems.count(gs.sample.stem), "sample from outside the training split");
    const auto& rec = index.find(gs.sample.stem);
    const SemanticMap sem = load_record_semantic(rec, index.num_classes);
    if (gs.sample.source == SampleSource::kSwap) {
      ++swap_checked;
      const InstanceMap inst = load_record_instance(rec, sem);
      const Tensor<std::int32_t> inst_d = resize(inst.t, dh, dw, ResizeMode::kNearest);
      for (std::size_t p = 0; p < gs.sample.label.t.size(); ++p) {
        if (gs.sample.label.t[p] != 1) continue;
        bool inside = false;
        for (std::int32_t id : gs.swap->instance_ids) inside = inside || inst_d[p] == id;
        ACHECK(inside, "swap anomaly pixel outside the swapped instances in " << gs.sample.stem);
      }
    } else {
      ++void_checked;
      const Tensor<std::int32_t> sem_d = resize(sem.t, dh, dw, ResizeMode::kNearest);
      for (std::size_t p = 0; p < gs.sample.label.t.size(); ++p)
        if (gs.sample.label.t[p] == 1)
          ACHECK(sem_d[p] == kVoidClass, "void anomaly pixel not void in GT in " << gs.sample.stem);
    }
  }
  ACHECK(swap_checked > 0 && void_checked > 0, "both sources must be exercised");
}

} // namespace

int main() {
  anomseg_test::TempDir work("acceptance");

  struct Criterion {
    int id;
    std::string name;
    std::function<void()> body;
  };

  EndToEndResult e2e; // filled by criterion 6, reused by 7

  const std::vector<Criterion> criteria = {
      {1, "dispersion-map analytics", criterion_dispersion_analytics},
      {2, "metric oracle equivalence (1000 cases, 1e-9)", criterion_metric_oracle},
      {3, "monotone-transform invariance (x^3, 1e-12)", criterion_monotone_invariance},
      {4, "gradient check (micro net, rel < 1e-3)", criterion_gradient_check},
      {5, "wiring tests (fusion gate, shared encoder, SPADE)", criterion_wiring},
      {6, "toy end-to-end ablation structure",
       [&] {
         e2e = run_end_to_end(work.path());
         criterion_end_to_end(e2e);
       }},
      {7, "ensemble corner dominance", [&] { criterion_ensemble_dominance(e2e); }},
      {8, "determinism (bit-identical metrics)", [&] { criterion_determinism(work.path()); }},
      {9, "datagen correctness + split-leak check", [&] { criterion_datagen(work.path()); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    try {
      c.body();
      std::printf("ACCEPTANCE %d [%s]: PASS\n", c.id, c.name.c_str());
    } catch (const std::exception& e) {
      ++failures;
      std::printf("ACCEPTANCE %d [%s]: FAIL - %s\n", c.id, c.name.c_str(), e.what());
    }
    std::fflush(stdout);
  }
  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
}
