#include <gtest/gtest.h>

#include <cmath>

#include "anomseg/uncertainty/dispersion.hpp"
#include "support/test_util.hpp"

using namespace anomseg;

namespace {

/// (C,1,1) single-pixel probability tensor.
template <typename T>
Tensor<T> pixel(std::vector<T> probs) {
  Tensor<T> t({probs.size(), 1, 1});
  t.raw() = std::move(probs);
  return t;
}

Tensor<double> uniform_probs(std::size_t c, std::size_t h, std::size_t w) {
  return Tensor<double>({c, h, w}, 1.0 / static_cast<double>(c));
}

} // namespace

TEST(SoftmaxEntropy, UniformIsExactlyOne) {
  const auto m = softmax_entropy(uniform_probs(19, 3, 4));
  for (double v : m.t.raw()) EXPECT_EQ(v, 1.0);
  // float path rounds to exactly 1 as well
  const auto mf = softmax_entropy(Tensor<float>({19, 2, 2}, 1.0f / 19.0f));
  for (float v : mf.t.raw()) EXPECT_EQ(v, 1.0f);
}

TEST(SoftmaxEntropy, OneHotIsExactlyZero) {
  std::vector<double> p(19, 0.0);
  p[4] = 1.0;
  const auto m = softmax_entropy(pixel(p));
  EXPECT_EQ(m.t[0], 0.0);
}

TEST(SoftmaxEntropy, TwoClassSymmetricValue) {
  std::vector<double> p(19, 0.0);
  p[0] = 0.5;
  p[1] = 0.5;
  const auto m = softmax_entropy(pixel(p));
  EXPECT_NEAR(m.t[0], 1.0 / std::log2(19.0), 1e-9);
}

TEST(SoftmaxEntropy, PermutationInvariantOverClasses) {
  Rng rng(77);
  Tensor<double> probs({6, 4, 4});
  const std::size_t hw = 16;
  for (std::size_t px = 0; px < hw; ++px) {
    double sum = 0;
    for (std::size_t c = 0; c < 6; ++c) {
      probs[c * hw + px] = rng.uniform() + 1e-3;
      sum += probs[c * hw + px];
    }
    for (std::size_t c = 0; c < 6; ++c) probs[c * hw + px] /= sum;
  }
  const auto base = softmax_entropy(probs);
  Tensor<double> shuffled(probs.shape());
  const std::size_t perm[6] = {3, 0, 5, 1, 4, 2};
  for (std::size_t c = 0; c < 6; ++c)
    for (std::size_t px = 0; px < hw; ++px) shuffled[perm[c] * hw + px] = probs[c * hw + px];
  const auto permuted = softmax_entropy(shuffled);
  for (std::size_t px = 0; px < hw; ++px) EXPECT_DOUBLE_EQ(base.t[px], permuted.t[px]);
}

TEST(SoftmaxEntropy, RejectsBadInput) {
  EXPECT_THROW(softmax_entropy(pixel<double>({1.0})), std::invalid_argument); // C < 2
  EXPECT_THROW(softmax_entropy(pixel<double>({0.5, 0.2})), std::invalid_argument);
}

TEST(SoftmaxDistance, CornerCases) {
  std::vector<double> onehot(19, 0.0);
  onehot[2] = 1.0;
  EXPECT_EQ(softmax_distance(pixel(onehot)).t[0], 0.0);
  const auto uniform = softmax_distance(uniform_probs(19, 1, 1));
  EXPECT_EQ(uniform.t[0], 1.0);
  EXPECT_NEAR(softmax_distance(pixel<double>({0.6, 0.3, 0.1})).t[0], 0.7, 1e-12);
}

TEST(SoftmaxDistance, TopTwoTieGivesOne) {
  EXPECT_NEAR(softmax_distance(pixel<double>({0.4, 0.4, 0.2})).t[0], 1.0, 1e-12);
}

TEST(Dispersion, BothZeroIffOneHotBothOneIffUniform) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(7, 0.0);
    double sum = 0;
    for (auto& v : p) {
      v = rng.uniform();
      sum += v;
    }
    for (auto& v : p) v /= sum;
    const double h = softmax_entropy(pixel(p)).t[0];
    const double d = softmax_distance(pixel(p)).t[0];
    bool onehot = false;
    for (double v : p) onehot = onehot || v == 1.0;
    if (onehot) {
      EXPECT_EQ(h, 0.0);
      EXPECT_EQ(d, 0.0);
    } else {
      EXPECT_GT(h, 0.0);
      EXPECT_GT(d, 0.0);
    }
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
  }
}

TEST(SoftmaxHelper, LogitShiftInvariance) {
  Rng rng(5);
  Tensor<double> logits = anomseg_test::random_tensor<double>({5, 3, 3}, rng);
  Tensor<double> shifted = logits;
  for (std::size_t px = 0; px < 9; ++px)
    for (std::size_t c = 0; c < 5; ++c) shifted[c * 9 + px] += 13.75;
  const auto a = softmax_from_logits(logits);
  const auto b = softmax_from_logits(shifted);
  // fl(x + 13.75) perturbs the low bits of the logits, so compare tightly
  // rather than bitwise
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-13);
  const auto ha = softmax_entropy(a), hb = softmax_entropy(b);
  const auto da = softmax_distance(a), db = softmax_distance(b);
  for (std::size_t i = 0; i < ha.t.size(); ++i) {
    EXPECT_NEAR(ha.t[i], hb.t[i], 1e-12);
    EXPECT_NEAR(da.t[i], db.t[i], 1e-12);
  }
}

namespace {

FeaturePyramidT<double> single_level(const Tensor<double>& f) {
  FeaturePyramidT<double> pyr;
  pyr.levels.push_back({1, f});
  return pyr;
}

} // namespace

TEST(PerceptualDifference, IdentityAndSymmetry) {
  Rng rng(9);
  FeaturePyramidT<double> a, b;
  a.levels.push_back({1, anomseg_test::random_tensor<double>({3, 4, 4}, rng)});
  a.levels.push_back({2, anomseg_test::random_tensor<double>({6, 2, 2}, rng)});
  b.levels.push_back({1, anomseg_test::random_tensor<double>({3, 4, 4}, rng)});
  b.levels.push_back({2, anomseg_test::random_tensor<double>({6, 2, 2}, rng)});
  PerceptualConfig cfg;
  cfg.taps = {0, 1};

  const auto self = perceptual_difference(a, a, cfg);
  for (double v : self.t.raw()) EXPECT_EQ(v, 0.0);

  const auto ab = perceptual_difference(a, b, cfg);
  const auto ba = perceptual_difference(b, a, cfg);
  for (std::size_t i = 0; i < ab.t.size(); ++i) EXPECT_EQ(ab.t[i], ba.t[i]);
  for (double v : ab.t.raw()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

// Brute-force oracle for a single-level pyramid: per-pixel mean |a-b| over
// channels, then divide by the map max. Expected values computed by the
// oracle and frozen by the assertions below.
TEST(PerceptualDifference, HandComputedSingleLevel) {
  Tensor<double> fa({2, 4, 4});
  Tensor<double> fb({2, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) {
    fa[i] = static_cast<double>(i);          // channel 0
    fa[16 + i] = 0.5 * static_cast<double>(i);
    fb[i] = static_cast<double>(i) + (i % 3);     // |diff| = i % 3
    fb[16 + i] = 0.5 * static_cast<double>(i) - 2.0 * (i % 2); // |diff| = 2*(i%2)
  }
  // oracle
  double expected[16];
  double mx = 0.0;
  for (std::size_t i = 0; i < 16; ++i) {
    expected[i] = (static_cast<double>(i % 3) + 2.0 * (i % 2)) / 2.0;
    mx = std::max(mx, expected[i]);
  }
  ASSERT_EQ(mx, 2.0); // i % 3 == 2 and i % 2 == 1 (i = 5, 11) -> (2+2)/2
  PerceptualConfig cfg;
  cfg.taps = {0};
  cfg.element_counts = {2};
  const auto v = perceptual_difference(single_level(fa), single_level(fb), cfg);
  ASSERT_EQ(v.t.shape(), (std::vector<std::size_t>{4, 4}));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(v.t[i], expected[i] / mx, 1e-12) << i;
}

TEST(PerceptualDifference, MismatchedShapesRejected) {
  Rng rng(2);
  FeaturePyramidT<double> a = single_level(anomseg_test::random_tensor<double>({2, 4, 4}, rng));
  FeaturePyramidT<double> b = single_level(anomseg_test::random_tensor<double>({2, 4, 2}, rng));
  PerceptualConfig cfg;
  cfg.taps = {0};
  EXPECT_THROW(perceptual_difference(a, b, cfg), std::invalid_argument);
}

TEST(PerceptualDifference, UpsamplesCoarserLevels) {
  Rng rng(6);
  FeaturePyramidT<double> a, b;
  a.levels.push_back({1, Tensor<double>({1, 4, 4}, 0.0)});
  a.levels.push_back({2, Tensor<double>({1, 2, 2}, 0.0)});
  b = a;
  b.levels[1].features.fill(3.0); // only the coarse level differs
  PerceptualConfig cfg;
  cfg.taps = {0, 1};
  const auto v = perceptual_difference(a, b, cfg);
  for (double x : v.t.raw()) EXPECT_EQ(x, 1.0); // constant difference, max-normalized
}
