#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cpn/tensor.hpp"

// CPTF: a tiny binary tensor container.
//   bytes 0-3  magic "CPTF"
//   byte  4    version (1)
//   byte  5    dtype: 0 = f32, 1 = f64
//   byte  6    ndim
//   then ndim little-endian u32 extents, then the row-major payload.

namespace cpn {

static_assert(std::endian::native == std::endian::little,
              "CPTF I/O assumes a little-endian host");

namespace detail {

template <typename T>
constexpr uint8_t cptf_dtype();
template <>
constexpr uint8_t cptf_dtype<float>() { return 0; }
template <>
constexpr uint8_t cptf_dtype<double>() { return 1; }

}  // namespace detail

template <typename T>
void save_cptf(const std::string& path, const Tensor<T>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_cptf: cannot open " + path);
  const char magic[4] = {'C', 'P', 'T', 'F'};
  out.write(magic, 4);
  uint8_t version = 1;
  uint8_t dtype = detail::cptf_dtype<T>();
  uint8_t ndim = static_cast<uint8_t>(t.ndim());
  out.put(static_cast<char>(version));
  out.put(static_cast<char>(dtype));
  out.put(static_cast<char>(ndim));
  for (int d = 0; d < t.ndim(); ++d) {
    uint32_t e = static_cast<uint32_t>(t.dim(d));
    out.write(reinterpret_cast<const char*>(&e), 4);
  }
  out.write(reinterpret_cast<const char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
  if (!out) throw std::runtime_error("save_cptf: write failed for " + path);
}

// Loads a CPTF file into the requested precision, converting the stored
// payload if its dtype differs.
template <typename T>
Tensor<T> load_cptf(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_cptf: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CPTF", 4) != 0)
    throw std::runtime_error("load_cptf: " + path + " is not a CPTF file");
  int version = in.get();
  int dtype = in.get();
  int ndim = in.get();
  if (version != 1) throw std::runtime_error("load_cptf: unsupported version in " + path);
  if (dtype != 0 && dtype != 1)
    throw std::runtime_error("load_cptf: unknown dtype in " + path);
  if (ndim <= 0 || ndim > 8)
    throw std::runtime_error("load_cptf: bad rank in " + path);
  Shape shape(static_cast<size_t>(ndim));
  for (int d = 0; d < ndim; ++d) {
    uint32_t e = 0;
    in.read(reinterpret_cast<char*>(&e), 4);
    if (!in || e == 0) throw std::runtime_error("load_cptf: bad extent in " + path);
    shape[static_cast<size_t>(d)] = static_cast<int>(e);
  }
  int64_t n = shape_numel(shape);
  std::vector<T> values(static_cast<size_t>(n));
  if (dtype == detail::cptf_dtype<T>()) {
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(n * sizeof(T)));
  } else if (dtype == 0) {
    std::vector<float> raw(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 4));
    for (int64_t i = 0; i < n; ++i) values[static_cast<size_t>(i)] = static_cast<T>(raw[static_cast<size_t>(i)]);
  } else {
    std::vector<double> raw(static_cast<size_t>(n));
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * 8));
    for (int64_t i = 0; i < n; ++i) values[static_cast<size_t>(i)] = static_cast<T>(raw[static_cast<size_t>(i)]);
  }
  if (!in) throw std::runtime_error("load_cptf: truncated payload in " + path);
  return Tensor<T>::from_data(std::move(shape), std::move(values));
}

}  // namespace cpn
