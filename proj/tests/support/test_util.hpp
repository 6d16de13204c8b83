#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "anomseg/core/rng.hpp"
#include "anomseg/core/tensor.hpp"

namespace anomseg_test {

/// Scratch directory, wiped on construction. The pid suffix keeps parallel
/// ctest processes (one per discovered test) out of each other's sandboxes.
class TempDir {
public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() /
              ("anomseg_test_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

template <typename T>
anomseg::Tensor<T> random_tensor(std::vector<std::size_t> shape, anomseg::Rng& rng,
                                 bool unit_interval = false) {
  anomseg::Tensor<T> t(std::move(shape));
  for (auto& v : t.raw())
    v = static_cast<T>(unit_interval ? rng.uniform() : rng.normal());
  return t;
}

} // namespace anomseg_test
