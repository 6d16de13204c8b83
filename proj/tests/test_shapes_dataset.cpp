#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "anomseg/data/shapes.hpp"
#include "support/test_util.hpp"

using namespace anomseg;
using anomseg_test::TempDir;

namespace {

ShapesConfig small_config() {
  ShapesConfig cfg;
  cfg.width = 96;
  cfg.height = 64;
  cfg.num_train = 6;
  cfg.num_val = 2;
  cfg.num_test = 3;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

} // namespace

TEST(ShapesDataset, RejectsAnomalyAmongInliers) {
  ShapesConfig cfg = small_config();
  cfg.anomaly_shapes = {"circle"};
  try {
    cfg.validate();
    FAIL() << "expected failure";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("anomaly shape listed among inlier classes"),
              std::string::npos);
  }
  ShapesConfig too_small = small_config();
  too_small.height = 32;
  EXPECT_THROW(too_small.validate(), std::invalid_argument);
}

TEST(ShapesDataset, SplitsSizesAndEmptyAnomalySplit) {
  TempDir dir("shapes_sizes");
  ShapesConfig cfg = small_config();
  cfg.num_test = 0; // zero anomaly images -> empty anomaly-test split
  const DatasetIndex index = generate_shapes_dataset(dir.path(), cfg, 11);
  EXPECT_EQ(index.split("train").size(), 6u);
  EXPECT_EQ(index.split("val").size(), 2u);
  EXPECT_TRUE(index.split("test").empty());
}

TEST(ShapesDataset, DeterministicBytesPerSeed) {
  TempDir a("shapes_det_a"), b("shapes_det_b"), c("shapes_det_c");
  ShapesConfig cfg = small_config();
  cfg.num_train = 3;
  cfg.num_val = 1;
  cfg.num_test = 1;
  generate_shapes_dataset(a.path(), cfg, 42);
  generate_shapes_dataset(b.path(), cfg, 42);
  generate_shapes_dataset(c.path(), cfg, 43);
  bool any_differs_across_seeds = false;
  for (const std::string split : {"train", "val", "test"}) {
    for (const char* sub : {"images", "semantic", "instance"}) {
      for (const auto& e : std::filesystem::directory_iterator(a.path() / split / sub)) {
        const auto rel = std::filesystem::relative(e.path(), a.path());
        EXPECT_EQ(slurp(e.path()), slurp(b.path() / rel)) << rel;
        if (slurp(e.path()) != slurp(c.path() / rel)) any_differs_across_seeds = true;
      }
    }
  }
  EXPECT_TRUE(any_differs_across_seeds);
}

TEST(ShapesDataset, SingleShapeImageHasTwoSemanticIds) {
  TempDir dir("shapes_single");
  ShapesConfig cfg = small_config();
  cfg.num_train = 4;
  cfg.num_val = 0;
  cfg.num_test = 0;
  cfg.min_shapes = 1;
  cfg.max_shapes = 1;
  cfg.void_prob = 0.0;
  cfg.inlier_shapes = {"circle"};
  cfg.void_shapes.clear();
  const DatasetIndex index = generate_shapes_dataset(dir.path(), cfg, 3);
  for (const auto* rec : index.split("train")) {
    const SemanticMap sem = load_record_semantic(*rec, index.num_classes);
    std::set<std::int32_t> ids(sem.t.raw().begin(), sem.t.raw().end());
    EXPECT_EQ(ids.size(), 2u) << rec->stem;
    EXPECT_TRUE(ids.count(0));
    EXPECT_TRUE(ids.count(1));
  }
}

TEST(ShapesDataset, PixelConsistencyAndAnomalyPlacement) {
  TempDir dir("shapes_consistency");
  const ShapesConfig cfg = small_config();
  const DatasetIndex index = generate_shapes_dataset(dir.path(), cfg, 5);

  for (const auto& rec : index.records) {
    const SemanticMap sem = load_record_semantic(rec, index.num_classes);
    const InstanceMap inst = load_record_instance(rec, sem); // throws if inconsistent
    // semantic class at a pixel equals the class of the instance occupying it
    for (std::size_t p = 0; p < sem.t.size(); ++p) {
      if (inst.t[p] == kBackgroundInstance) {
        EXPECT_EQ(sem.t[p], 0);
      } else {
        EXPECT_EQ(sem.t[p], inst.instance_class.at(inst.t[p]));
      }
    }
  }

  // anomaly shapes (void pixels) only in val/test; train void comes from the
  // dedicated void shapes and must exist somewhere given void_prob > 0
  bool train_has_void = false;
  for (const auto* rec : index.split("train")) {
    const SemanticMap sem = load_record_semantic(*rec, index.num_classes);
    for (std::int32_t v : sem.t.raw())
      if (v == kVoidClass) train_has_void = true;
  }
  EXPECT_TRUE(train_has_void);
  for (const std::string split : {"val", "test"}) {
    for (const auto* rec : index.split(split)) {
      const SemanticMap sem = load_record_semantic(*rec, index.num_classes);
      std::size_t void_px = 0;
      for (std::int32_t v : sem.t.raw())
        if (v == kVoidClass) ++void_px;
      EXPECT_GT(void_px, 0u) << split << "/" << rec->stem;
    }
  }
}

TEST(ShapesDataset, ImagesDecodeInRange) {
  TempDir dir("shapes_decode");
  ShapesConfig cfg = small_config();
  cfg.num_train = 2;
  cfg.num_val = 1;
  cfg.num_test = 1;
  const DatasetIndex index = generate_shapes_dataset(dir.path(), cfg, 9);
  for (const auto& rec : index.records) {
    const RgbImage img = load_record_image(rec);
    EXPECT_EQ(img.height(), cfg.height);
    EXPECT_EQ(img.width(), cfg.width);
    EXPECT_NO_THROW(img.validate());
  }
}
