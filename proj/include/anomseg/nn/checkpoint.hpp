#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "anomseg/core/tensor_io.hpp"
#include "anomseg/nn/layers.hpp"

namespace anomseg {

constexpr int kCheckpointFormatVersion = 1;

/// FNV-1a, used to fingerprint configs and architecture specs.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// One tensor file per named parameter plus a manifest carrying the
/// architecture fingerprint and whatever metadata the owner supplies.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedParam<T>>& params,
                     nlohmann::json metadata) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "params");
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["metadata"] = std::move(metadata);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& p : params) {
    const std::string file = "params/" + p.name + ".tsr";
    save_tensor(dir / file, p.param->value);
    entries.push_back({{"name", p.name}, {"file", file}});
  }
  manifest["params"] = std::move(entries);
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& dir, const std::vector<NamedParam<T>>& params) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw std::runtime_error("checkpoint manifest not found: " + manifest_path.string());
  nlohmann::json manifest;
  std::ifstream(manifest_path) >> manifest;
  if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion)
    throw std::runtime_error("unsupported checkpoint format in " + dir.string());

  std::map<std::string, std::string> files;
  for (const auto& e : manifest.at("params"))
    files[e.at("name").get<std::string>()] = e.at("file").get<std::string>();

  for (const auto& p : params) {
    const auto it = files.find(p.name);
    if (it == files.end())
      throw std::runtime_error("checkpoint missing parameter '" + p.name + "' in " + dir.string());
    Tensor<T> loaded = load_tensor<T>(dir / it->second);
    if (loaded.shape() != p.param->value.shape())
      throw std::runtime_error("checkpoint shape mismatch for '" + p.name + "': stored " +
                               shape_string(loaded.shape()) + ", expected " +
                               shape_string(p.param->value.shape()));
    p.param->value = std::move(loaded);
  }
  return manifest.at("metadata");
}

} // namespace anomseg
