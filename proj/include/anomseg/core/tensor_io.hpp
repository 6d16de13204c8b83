#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#include "anomseg/core/tensor.hpp"

namespace anomseg {

// .tsr on-disk layout, little-endian throughout:
//   bytes 0..3   magic "TSR1"
//   byte  4      dtype code (0=f32, 1=f64, 2=u8, 3=i32)
//   byte  5      rank (1..4)
//   bytes 6..7   reserved, zero
//   8 bytes per dim
//   row-major payload

namespace detail {

template <typename T> struct TsrDtype;
template <> struct TsrDtype<float> { static constexpr std::uint8_t code = 0; };
template <> struct TsrDtype<double> { static constexpr std::uint8_t code = 1; };
template <> struct TsrDtype<std::uint8_t> { static constexpr std::uint8_t code = 2; };
template <> struct TsrDtype<std::int32_t> { static constexpr std::uint8_t code = 3; };

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw std::runtime_error("unexpected end of tensor file: " + path);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

} // namespace detail

template <typename T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  if (t.rank() == 0 || t.rank() > 4) throw std::invalid_argument("tensor rank must be 1..4");
  if constexpr (std::is_floating_point_v<T>) {
    if (!t.all_finite()) throw std::invalid_argument("refusing to save non-finite tensor: " + path.string());
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open tensor file for writing: " + path.string());
  os.write("TSR1", 4);
  const std::uint8_t header[4] = {detail::TsrDtype<T>::code, static_cast<std::uint8_t>(t.rank()), 0, 0};
  os.write(reinterpret_cast<const char*>(header), 4);
  for (std::size_t i = 0; i < t.rank(); ++i) detail::write_u64_le(os, t.dim(i));
  static_assert(std::endian::native == std::endian::little, "payload is written as native little-endian");
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw std::runtime_error("short write on tensor file: " + path.string());
}

inline std::uint8_t peek_tensor_dtype(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open tensor file: " + path.string());
  char magic[4];
  std::uint8_t header[4];
  if (!is.read(magic, 4) || !is.read(reinterpret_cast<char*>(header), 4))
    throw std::runtime_error("unexpected end of tensor file: " + path.string());
  if (std::memcmp(magic, "TSR1", 4) != 0)
    throw std::runtime_error("not a tensor file (bad magic): " + path.string());
  return header[0];
}

template <typename T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open tensor file: " + path.string());
  char magic[4];
  if (!is.read(magic, 4)) throw std::runtime_error("unexpected end of tensor file: " + path.string());
  if (std::memcmp(magic, "TSR1", 4) != 0)
    throw std::runtime_error("not a tensor file (bad magic): " + path.string());
  std::uint8_t header[4];
  if (!is.read(reinterpret_cast<char*>(header), 4))
    throw std::runtime_error("unexpected end of tensor file: " + path.string());
  if (header[0] != detail::TsrDtype<T>::code)
    throw std::runtime_error("tensor dtype mismatch in " + path.string() + " (code " +
                             std::to_string(int(header[0])) + ")");
  const std::size_t rank = header[1];
  if (rank == 0 || rank > 4)
    throw std::runtime_error("corrupt tensor header (rank " + std::to_string(rank) + "): " + path.string());
  std::vector<std::size_t> shape(rank);
  std::size_t n = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::uint64_t d = detail::read_u64_le(is, path.string());
    if (d == 0 || d > (std::uint64_t(1) << 32))
      throw std::runtime_error("corrupt tensor header (dim overflow): " + path.string());
    shape[i] = static_cast<std::size_t>(d);
    n *= shape[i];
    if (n > (std::size_t(1) << 40))
      throw std::runtime_error("corrupt tensor header (dim overflow): " + path.string());
  }
  Tensor<T> t(shape);
  if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(T))))
    throw std::runtime_error("unexpected end of tensor file: " + path.string());
  return t;
}

} // namespace anomseg
