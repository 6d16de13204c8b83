#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomseg/core/image_io.hpp"
#include "anomseg/core/resize.hpp"
#include "anomseg/metrics/eval.hpp"

namespace anomseg {

struct NamedEvalResult {
  std::string name;
  EvalResult result;
};

struct ReportFiles {
  std::filesystem::path summary_json;
  std::filesystem::path summary_csv;
  std::filesystem::path curves_csv;
};

/// Writes the evaluation report triple: JSON summary, CSV table and PR/ROC
/// curve samples (when curve data was supplied).
inline ReportFiles emit_report(const std::filesystem::path& dir,
                               const std::vector<NamedEvalResult>& results,
                               const std::vector<CurvePoint>& pr = {},
                               const std::vector<CurvePoint>& roc = {}) {
  namespace fs = std::filesystem;
  if (results.empty()) throw std::invalid_argument("nothing to report");
  fs::create_directories(dir);

  ReportFiles files;
  files.summary_json = dir / "report.json";
  files.summary_csv = dir / "report.csv";
  files.curves_csv = dir / "curves.csv";

  nlohmann::json j;
  j["conventions"] = {{"ap_integration", EvalResult::kApIntegration},
                      {"tie_handling", EvalResult::kTieHandling},
                      {"pooling", EvalResult::kPooling}};
  for (const auto& r : results) {
    j["results"][r.name] = {{"ap", r.result.ap},
                            {"fpr95", r.result.fpr95},
                            {"auroc", r.result.auroc},
                            {"positives", r.result.positives},
                            {"negatives", r.result.negatives},
                            {"ignored", r.result.ignored}};
  }
  std::ofstream(files.summary_json) << j.dump(2) << "\n";

  {
    std::ofstream csv(files.summary_csv);
    csv << "name,ap,fpr95,auroc,positives,negatives,ignored\n";
    for (const auto& r : results)
      csv << r.name << "," << r.result.ap << "," << r.result.fpr95 << "," << r.result.auroc << ","
          << r.result.positives << "," << r.result.negatives << "," << r.result.ignored << "\n";
  }

  {
    std::ofstream csv(files.curves_csv);
    csv << "curve,threshold,x,y\n";
    for (const auto& p : pr) csv << "pr," << p.threshold << "," << p.x << "," << p.y << "\n";
    for (const auto& p : roc) csv << "roc," << p.threshold << "," << p.x << "," << p.y << "\n";
  }
  return files;
}

/// Heat overlay of a score map on its source image: score drives both the
/// red tint and the blend alpha, so an all-zero map reproduces the input
/// bytes exactly. Ignore-labeled pixels are excluded (alpha 0).
inline RgbImage render_overlay(const RgbImage& image, const AnomalyScoreMap& score,
                               const AnomalyLabelMap* ignore_mask = nullptr) {
  const std::size_t h = image.height(), w = image.width();
  Tensor<float> score_full =
      (score.height() == h && score.width() == w)
          ? score.t
          : resize(score.t, h, w, ResizeMode::kBilinear);
  RgbImage out = image;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (ignore_mask && ignore_mask->t.at2(y, x) == kIgnoreLabel) continue;
      const float a = std::clamp(score_full.at2(y, x), 0.0f, 1.0f) * 0.7f;
      if (a <= 0.0f) continue;
      out.t.at3(0, y, x) = (1.0f - a) * out.t.at3(0, y, x) + a * 1.0f;
      out.t.at3(1, y, x) = (1.0f - a) * out.t.at3(1, y, x) + a * 0.1f;
      out.t.at3(2, y, x) = (1.0f - a) * out.t.at3(2, y, x) + a * 0.1f;
    }
  return out;
}

} // namespace anomseg
