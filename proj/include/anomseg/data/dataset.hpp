#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomseg/core/image_io.hpp"
#include "anomseg/core/types.hpp"

namespace anomseg {

namespace fs = std::filesystem;

struct DatasetRecord {
  std::string stem;
  std::string split;
  fs::path image;
  fs::path semantic;
  fs::path instance;
};

/// Index over a dataset laid out as
///   <root>/<split>/images/*.png
///   <root>/<split>/semantic/*.png   (8-bit class IDs, void = 255)
///   <root>/<split>/instance/*.png   (8-bit instance IDs, background = 0)
/// with shared stems per record, plus a root-level dataset.json manifest.
struct DatasetIndex {
  fs::path root;
  std::int32_t num_classes = 0;
  std::vector<std::string> class_names; // index == class ID
  std::vector<DatasetRecord> records;

  std::vector<const DatasetRecord*> split(const std::string& name) const {
    std::vector<const DatasetRecord*> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(&r);
    return out;
  }

  const DatasetRecord& find(const std::string& stem) const {
    for (const auto& r : records)
      if (r.stem == stem) return r;
    throw std::runtime_error("dataset record not found: " + stem);
  }
};

inline RgbImage load_record_image(const DatasetRecord& r) { return load_image(r.image); }

inline SemanticMap load_record_semantic(const DatasetRecord& r, std::int32_t num_classes) {
  return load_semantic_png(r.semantic, num_classes);
}

/// Loads the instance map and reconstructs the instance->class mapping from
/// the semantic map; every instance must be class-consistent.
inline InstanceMap load_record_instance(const DatasetRecord& r, const SemanticMap& sem) {
  InstanceMap inst;
  inst.t = load_gray_png(r.instance).cast<std::int32_t>();
  if (inst.t.shape() != sem.t.shape())
    throw std::runtime_error("instance/semantic shape mismatch for " + r.stem);
  for (std::size_t p = 0; p < inst.t.size(); ++p) {
    const std::int32_t id = inst.t[p];
    if (id == kBackgroundInstance) continue;
    auto [it, inserted] = inst.instance_class.emplace(id, sem.t[p]);
    if (!inserted && it->second != sem.t[p])
      throw std::runtime_error("instance " + std::to_string(id) + " spans multiple classes in " + r.stem);
  }
  return inst;
}

inline DatasetIndex load_dataset_index(const fs::path& root) {
  DatasetIndex index;
  index.root = root;
  const fs::path manifest_path = root / "dataset.json";
  if (!fs::exists(manifest_path))
    throw std::runtime_error("dataset manifest not found: " + manifest_path.string());
  nlohmann::json manifest;
  std::ifstream(manifest_path) >> manifest;
  index.num_classes = manifest.at("num_classes").get<std::int32_t>();
  index.class_names = manifest.at("class_names").get<std::vector<std::string>>();

  std::set<std::string> seen_stems;
  for (const auto& split : manifest.at("splits").get<std::vector<std::string>>()) {
    const fs::path images = root / split / "images";
    if (!fs::exists(images)) continue; // empty split
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(images))
      if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      DatasetRecord r;
      r.stem = f.stem().string();
      r.split = split;
      r.image = f;
      r.semantic = root / split / "semantic" / (r.stem + ".png");
      r.instance = root / split / "instance" / (r.stem + ".png");
      if (!fs::exists(r.semantic)) throw std::runtime_error("missing semantic GT: " + r.semantic.string());
      if (!fs::exists(r.instance)) throw std::runtime_error("missing instance GT: " + r.instance.string());
      if (!seen_stems.insert(r.stem).second)
        throw std::runtime_error("dataset stems must be disjoint across splits: " + r.stem);
      index.records.push_back(std::move(r));
    }
  }
  return index;
}

} // namespace anomseg
