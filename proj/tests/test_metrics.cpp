#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "anomseg/metrics/eval.hpp"
#include "support/brute_force_metrics.hpp"
#include "support/test_util.hpp"

using namespace anomseg;
using anomseg_test::brute_force_ap;
using anomseg_test::brute_force_auroc;
using anomseg_test::brute_force_fpr_at_tpr;

namespace {

struct Case {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
};

Case random_case(Rng& rng, std::size_t max_pixels, bool with_ties) {
  Case c;
  const std::size_t n = 2 + rng.uniform_index(max_pixels - 1);
  bool has_pos = false, has_neg = false;
  for (std::size_t i = 0; i < n; ++i) {
    const bool pos = rng.bernoulli(0.4);
    c.labels.push_back(pos ? 1 : 0);
    has_pos |= pos;
    has_neg |= !pos;
    double s = rng.uniform();
    if (with_ties && rng.bernoulli(0.5)) s = std::round(s * 4.0) / 4.0; // heavy ties
    c.scores.push_back(s);
  }
  if (!has_pos) c.labels[0] = 1;
  if (!has_neg) c.labels[c.labels.size() - 1] = 0;
  return c;
}

} // namespace

TEST(Metrics, PerfectRanking) {
  const EvalResult r = evaluate_pooled<double>({0.9, 0.1}, {1, 0});
  EXPECT_EQ(r.ap, 1.0);
  EXPECT_EQ(r.auroc, 1.0);
  EXPECT_EQ(r.fpr95, 0.0);
}

TEST(Metrics, InvertedRanking) {
  // oracle derivation: threshold 0.9 -> P=0, R=0; threshold 0.1 -> P=0.5, R=1
  // AP = 1 * 0.5 = 0.5; ROC passes through (1,0) so AUROC = 0
  const EvalResult r = evaluate_pooled<double>({0.9, 0.1}, {0, 1});
  EXPECT_EQ(r.ap, 0.5);
  EXPECT_EQ(r.auroc, 0.0);
}

TEST(Metrics, ConstantScores) {
  std::vector<double> scores(1000, 0.42);
  std::vector<std::uint8_t> labels(1000, 0);
  for (std::size_t i = 0; i < 130; ++i) labels[i * 7] = 1;
  std::size_t pos = 0;
  for (auto l : labels) pos += l;
  const EvalResult r = evaluate_pooled(scores, labels);
  EXPECT_DOUBLE_EQ(r.ap, double(pos) / 1000.0);
  EXPECT_DOUBLE_EQ(r.auroc, 0.5);
  EXPECT_EQ(r.fpr95, 1.0);
}

TEST(Metrics, AlternatingHandEnumeration) {
  // labels (1,0,1,0) with strictly decreasing scores:
  // PR points: (1, 1/1), (1/2... ) -> AP = (1 + 2/3)/2 = 5/6
  const double expected = (1.0 + 2.0 / 3.0) / 2.0;
  EXPECT_NEAR(brute_force_ap({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0}), expected, 1e-15);
  const EvalResult r = evaluate_pooled<double>({0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0});
  EXPECT_NEAR(r.ap, expected, 1e-15);
}

TEST(Metrics, AllPositiveOracle) {
  EXPECT_EQ(brute_force_ap({0.3, 0.9, 0.5}, {1, 1, 1}), 1.0);
}

TEST(Metrics, SingleClassPoolRejectedWithClassName) {
  try {
    evaluate_pooled<double>({0.2, 0.4}, {1, 1});
    FAIL() << "expected failure";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("negative"), std::string::npos);
  }
  try {
    evaluate_pooled<double>({0.2, 0.4}, {0, 0});
    FAIL() << "expected failure";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("positive"), std::string::npos);
  }
}

TEST(Metrics, DifferentialAgainstBruteForceOracles) {
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const Case c = random_case(rng, 100, i % 2 == 0);
    const EvalResult r = evaluate_pooled(c.scores, c.labels);
    EXPECT_NEAR(r.ap, brute_force_ap(c.scores, c.labels), 1e-9) << "case " << i;
    EXPECT_NEAR(r.auroc, brute_force_auroc(c.scores, c.labels), 1e-9) << "case " << i;
    EXPECT_NEAR(r.fpr95, brute_force_fpr_at_tpr(c.scores, c.labels, 0.95), 1e-9) << "case " << i;
  }
}

TEST(Metrics, MonotoneTransformInvariance) {
  Rng rng(512);
  for (int i = 0; i < 100; ++i) {
    const Case c = random_case(rng, 200, i % 3 == 0);
    std::vector<double> cubed(c.scores.size());
    for (std::size_t j = 0; j < cubed.size(); ++j)
      cubed[j] = c.scores[j] * c.scores[j] * c.scores[j];
    const EvalResult a = evaluate_pooled(c.scores, c.labels);
    const EvalResult b = evaluate_pooled(cubed, c.labels);
    EXPECT_NEAR(a.ap, b.ap, 1e-12);
    EXPECT_NEAR(a.auroc, b.auroc, 1e-12);
    EXPECT_NEAR(a.fpr95, b.fpr95, 1e-12);
  }
}

TEST(Metrics, ShuffleInvariance) {
  Rng rng(88);
  Case c = random_case(rng, 300, true);
  const EvalResult before = evaluate_pooled(c.scores, c.labels);
  std::vector<std::size_t> perm(c.scores.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm.begin(), perm.end());
  Case shuffled;
  for (std::size_t i : perm) {
    shuffled.scores.push_back(c.scores[i]);
    shuffled.labels.push_back(c.labels[i]);
  }
  const EvalResult after = evaluate_pooled(shuffled.scores, shuffled.labels);
  EXPECT_EQ(before.ap, after.ap);
  EXPECT_EQ(before.auroc, after.auroc);
  EXPECT_EQ(before.fpr95, after.fpr95);
}

TEST(Metrics, IgnoredPixelsDoNotMoveMetrics) {
  Rng rng(99);
  Case c = random_case(rng, 200, false);
  const EvalResult before = evaluate_pooled(c.scores, c.labels);
  Case padded = c;
  for (int i = 0; i < 50; ++i) {
    padded.scores.push_back(rng.uniform() * 10.0 - 5.0);
    padded.labels.push_back(kIgnoreLabel);
  }
  const EvalResult after = evaluate_pooled(padded.scores, padded.labels);
  EXPECT_EQ(before.ap, after.ap);
  EXPECT_EQ(before.auroc, after.auroc);
  EXPECT_EQ(before.fpr95, after.fpr95);
  EXPECT_EQ(after.ignored, 50u);
}

TEST(Metrics, MapLevelEvaluatePoolsAcrossImages) {
  Tensor<float> s1({1, 2});
  s1.raw() = {0.9f, 0.2f};
  Tensor<float> s2({1, 2});
  s2.raw() = {0.8f, 0.1f};
  AnomalyLabelMap l1(1, 2), l2(1, 2);
  l1.t.raw() = {1, 0};
  l2.t.raw() = {1, kIgnoreLabel};
  const EvalResult r = evaluate({AnomalyScoreMap(s1), AnomalyScoreMap(s2)}, {l1, l2});
  EXPECT_EQ(r.positives, 2u);
  EXPECT_EQ(r.negatives, 1u);
  EXPECT_EQ(r.ignored, 1u);
  EXPECT_EQ(r.ap, 1.0);

  EXPECT_THROW(evaluate({AnomalyScoreMap(s1)}, {l1, l2}), std::invalid_argument);
}

TEST(Metrics, NonFiniteScoresRejected) {
  EXPECT_THROW(evaluate_pooled<double>({0.5, std::nan("")}, {1, 0}), std::invalid_argument);
}

TEST(Metrics, CurvesMatchSweep) {
  const std::vector<double> scores{0.9, 0.8, 0.7, 0.6};
  const std::vector<std::uint8_t> labels{1, 0, 1, 0};
  const auto pr = pr_curve(scores, labels);
  ASSERT_EQ(pr.size(), 4u);
  EXPECT_DOUBLE_EQ(pr[0].x, 0.5);
  EXPECT_DOUBLE_EQ(pr[0].y, 1.0);
  const auto roc = roc_curve(scores, labels);
  EXPECT_DOUBLE_EQ(roc[3].x, 1.0);
  EXPECT_DOUBLE_EQ(roc[3].y, 1.0);
}
