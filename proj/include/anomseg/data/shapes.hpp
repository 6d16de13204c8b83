#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomseg/core/image_io.hpp"
#include "anomseg/core/rng.hpp"
#include "anomseg/core/types.hpp"
#include "anomseg/data/dataset.hpp"

namespace anomseg {

/// Configuration of the synthetic shapes dataset.
///
/// Inlier shapes become training classes 1..N (background is 0). Void shapes
/// are painted into train/val-style scenes but labeled kVoidClass, mirroring
/// the unlabeled-object convention of segmentation datasets. Anomaly shapes
/// are held out entirely: they appear only in the anomaly splits (val, test)
/// and are labeled kVoidClass there.
struct ShapesConfig {
  std::size_t width = 256;
  std::size_t height = 128;
  std::size_t num_train = 500;
  std::size_t num_val = 50;
  std::size_t num_test = 100;
  std::vector<std::string> inlier_shapes = {"circle", "square", "triangle"};
  std::vector<std::string> void_shapes = {"cross"};
  std::vector<std::string> anomaly_shapes = {"star"};
  std::size_t min_shapes = 2;
  std::size_t max_shapes = 4;
  double void_prob = 0.5;          // chance a train image carries one void object
  std::size_t anomalies_per_image = 1;
  double color_jitter = 0.12;      // per-instance color offset amplitude
  double noise_std = 0.02;         // additive image noise
  double min_radius_frac = 0.10;   // of image height
  double max_radius_frac = 0.22;

  std::int32_t num_classes() const { return static_cast<std::int32_t>(1 + inlier_shapes.size()); }

  void validate() const {
    if (width < 64 || height < 64) throw std::invalid_argument("image size must be at least 64x64");
    if (inlier_shapes.empty()) throw std::invalid_argument("need at least one inlier shape");
    if (min_shapes > max_shapes) throw std::invalid_argument("min_shapes > max_shapes");
    for (const auto& a : anomaly_shapes)
      if (std::find(inlier_shapes.begin(), inlier_shapes.end(), a) != inlier_shapes.end())
        throw std::invalid_argument("anomaly shape listed among inlier classes: " + a);
    for (const auto& v : void_shapes)
      if (std::find(inlier_shapes.begin(), inlier_shapes.end(), v) != inlier_shapes.end())
        throw std::invalid_argument("void shape listed among inlier classes: " + v);
  }
};

namespace shapes_detail {

struct Color {
  double r, g, b;
};

// Fixed palette. The anomaly star sits between the circle and square hues on
// purpose: a color classifier splits its belief there, which is exactly the
// regime where dispersion maps carry signal.
inline Color base_color(const std::string& shape) {
  static const std::map<std::string, Color> palette = {
      {"background", {0.25, 0.26, 0.30}}, {"circle", {0.80, 0.22, 0.20}},
      {"square", {0.22, 0.72, 0.28}},     {"triangle", {0.22, 0.36, 0.80}},
      {"cross", {0.55, 0.28, 0.62}},      {"star", {0.78, 0.66, 0.22}},
      {"diamond", {0.20, 0.68, 0.66}},
  };
  const auto it = palette.find(shape);
  if (it == palette.end()) throw std::invalid_argument("unknown shape: " + shape);
  return it->second;
}

struct ShapeInstance {
  std::string kind;
  double cx, cy, radius, angle;
  Color color;
  std::int32_t class_id;   // kVoidClass for void/anomaly shapes
  std::int32_t instance_id;
};

inline bool point_in_polygon(const std::vector<std::array<double, 2>>& poly, double px, double py) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a[1] > py) != (b[1] > py)) {
      const double t = (py - a[1]) / (b[1] - a[1]);
      if (px < a[0] + t * (b[0] - a[0])) inside = !inside;
    }
  }
  return inside;
}

inline std::vector<std::array<double, 2>> regular_polygon(const ShapeInstance& s, std::size_t n,
                                                          double inner_ratio) {
  // inner_ratio < 1 interleaves inner vertices (star); == 1 gives a regular n-gon.
  std::vector<std::array<double, 2>> poly;
  const std::size_t verts = inner_ratio < 1.0 ? 2 * n : n;
  poly.reserve(verts);
  for (std::size_t i = 0; i < verts; ++i) {
    const double r = (inner_ratio < 1.0 && (i % 2 == 1)) ? s.radius * inner_ratio : s.radius;
    const double a = s.angle + 2.0 * 3.14159265358979323846 * static_cast<double>(i) / static_cast<double>(verts);
    poly.push_back({s.cx + r * std::sin(a), s.cy - r * std::cos(a)});
  }
  return poly;
}

inline bool covers(const ShapeInstance& s, double px, double py) {
  const double dx = px - s.cx, dy = py - s.cy;
  if (s.kind == "circle") return dx * dx + dy * dy <= s.radius * s.radius;
  // rotate into the shape frame
  const double ca = std::cos(-s.angle), sa = std::sin(-s.angle);
  const double rx = ca * dx - sa * dy, ry = sa * dx + ca * dy;
  if (s.kind == "square") return std::max(std::fabs(rx), std::fabs(ry)) <= s.radius * 0.82;
  if (s.kind == "diamond") return std::fabs(rx) + std::fabs(ry) <= s.radius;
  if (s.kind == "cross") {
    const double arm = s.radius * 0.34;
    return (std::fabs(rx) <= arm && std::fabs(ry) <= s.radius) ||
           (std::fabs(ry) <= arm && std::fabs(rx) <= s.radius);
  }
  if (s.kind == "triangle") return point_in_polygon(regular_polygon(s, 3, 1.0), px, py);
  if (s.kind == "star") return point_in_polygon(regular_polygon(s, 5, 0.45), px, py);
  throw std::invalid_argument("unknown shape: " + s.kind);
}

inline Color jitter_color(Color c, double amount, Rng& rng) {
  const auto adj = [&](double v) { return std::clamp(v + amount * rng.uniform(-1.0, 1.0), 0.02, 0.98); };
  return {adj(c.r), adj(c.g), adj(c.b)};
}

struct RenderedScene {
  RgbImage image;
  SemanticMap semantic;
  InstanceMap instance;
};

inline RenderedScene render_scene(const ShapesConfig& cfg, const std::vector<ShapeInstance>& shapes,
                                  const Color& bg, Rng& noise_rng) {
  const std::size_t h = cfg.height, w = cfg.width;
  RenderedScene scene;
  scene.image = RgbImage(h, w);
  scene.semantic.t = Tensor<std::int32_t>({h, w}, 0);
  scene.semantic.num_classes = cfg.num_classes();
  scene.instance.t = Tensor<std::int32_t>({h, w}, kBackgroundInstance);
  for (const auto& s : shapes) scene.instance.instance_class[s.instance_id] = s.class_id;

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      Color c = bg;
      // painter order: later shapes sit on top
      for (const auto& s : shapes) {
        if (covers(s, px, py)) {
          c = s.color;
          scene.semantic.t.at2(y, x) = s.class_id;
          scene.instance.t.at2(y, x) = s.instance_id;
        }
      }
      const auto noisy = [&](double v) {
        return static_cast<float>(std::clamp(v + cfg.noise_std * noise_rng.normal(), 0.0, 1.0));
      };
      scene.image.t.at3(0, y, x) = noisy(c.r);
      scene.image.t.at3(1, y, x) = noisy(c.g);
      scene.image.t.at3(2, y, x) = noisy(c.b);
    }
  }
  return scene;
}

inline ShapeInstance sample_shape(const ShapesConfig& cfg, const std::string& kind,
                                  std::int32_t class_id, std::int32_t instance_id, Rng& rng) {
  ShapeInstance s;
  s.kind = kind;
  s.class_id = class_id;
  s.instance_id = instance_id;
  const double hmin = static_cast<double>(cfg.height);
  s.radius = rng.uniform(cfg.min_radius_frac * hmin, cfg.max_radius_frac * hmin);
  s.cx = rng.uniform(s.radius + 2.0, static_cast<double>(cfg.width) - s.radius - 2.0);
  s.cy = rng.uniform(s.radius + 2.0, static_cast<double>(cfg.height) - s.radius - 2.0);
  s.angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  s.color = jitter_color(base_color(kind), cfg.color_jitter, rng);
  return s;
}

} // namespace shapes_detail

/// Generates the dataset under `root` and returns its index. Deterministic
/// given (config, seed); each image draws from its own (seed, image index)
/// stream so generation order never matters.
inline DatasetIndex generate_shapes_dataset(const std::filesystem::path& root, const ShapesConfig& cfg,
                                            std::uint64_t seed) {
  using namespace shapes_detail;
  cfg.validate();
  namespace fs = std::filesystem;

  const std::vector<std::string> splits = {"train", "val", "test"};
  for (const auto& split : splits)
    for (const char* sub : {"images", "semantic", "instance"})
      fs::create_directories(root / split / sub);

  const Rng master(seed);
  std::uint64_t image_counter = 0;

  const auto generate_split = [&](const std::string& split, std::size_t count, bool with_anomalies) {
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng = master.fork(image_counter++);
      std::vector<ShapeInstance> shapes;
      std::int32_t next_instance = 1;

      const std::size_t n_shapes =
          static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.min_shapes),
                                                   static_cast<std::int64_t>(cfg.max_shapes)));
      for (std::size_t k = 0; k < n_shapes; ++k) {
        const std::size_t ci = rng.uniform_index(cfg.inlier_shapes.size());
        shapes.push_back(sample_shape(cfg, cfg.inlier_shapes[ci], static_cast<std::int32_t>(ci + 1),
                                      next_instance++, rng));
      }
      if (!with_anomalies && !cfg.void_shapes.empty() && rng.bernoulli(cfg.void_prob)) {
        const std::size_t vi = rng.uniform_index(cfg.void_shapes.size());
        shapes.push_back(sample_shape(cfg, cfg.void_shapes[vi], kVoidClass, next_instance++, rng));
      }
      if (with_anomalies && !cfg.anomaly_shapes.empty()) {
        for (std::size_t k = 0; k < cfg.anomalies_per_image; ++k) {
          const std::size_t ai = rng.uniform_index(cfg.anomaly_shapes.size());
          shapes.push_back(sample_shape(cfg, cfg.anomaly_shapes[ai], kVoidClass, next_instance++, rng));
        }
      }

      Color bg = jitter_color(base_color("background"), cfg.color_jitter * 0.4, rng);
      RenderedScene scene = render_scene(cfg, shapes, bg, rng);

      char stem[32];
      std::snprintf(stem, sizeof(stem), "%s_%05zu", split.c_str(), i);
      save_image(root / split / "images" / (std::string(stem) + ".png"), scene.image);
      save_gray_png(root / split / "semantic" / (std::string(stem) + ".png"),
                    scene.semantic.t.cast<std::uint8_t>());
      save_gray_png(root / split / "instance" / (std::string(stem) + ".png"),
                    scene.instance.t.cast<std::uint8_t>());
    }
  };

  generate_split("train", cfg.num_train, false);
  generate_split("val", cfg.num_val, true);
  generate_split("test", cfg.num_test, true);

  nlohmann::json manifest;
  manifest["num_classes"] = cfg.num_classes();
  std::vector<std::string> class_names = {"background"};
  class_names.insert(class_names.end(), cfg.inlier_shapes.begin(), cfg.inlier_shapes.end());
  manifest["class_names"] = class_names;
  manifest["splits"] = splits;
  manifest["anomaly_splits"] = std::vector<std::string>{"val", "test"};
  manifest["seed"] = seed;
  manifest["image_size"] = {cfg.width, cfg.height};
  manifest["void_shapes"] = cfg.void_shapes;
  manifest["anomaly_shapes"] = cfg.anomaly_shapes;
  std::ofstream(root / "dataset.json") << manifest.dump(2) << "\n";

  return load_dataset_index(root);
}

} // namespace anomseg
