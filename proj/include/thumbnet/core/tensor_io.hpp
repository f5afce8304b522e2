#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "thumbnet/core/binio.hpp"
#include "thumbnet/core/error.hpp"
#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

// Tensor wire format:
//   magic "TSR1" | dtype u8 (0 = float32, 1 = float64) | rank u8 |
//   rank x u32 little-endian extents | payload, little-endian row-major.

namespace detail {

template <typename T>
constexpr std::uint8_t tsr1_dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensor io supports float32 and float64");
  return std::is_same_v<T, float> ? 0 : 1;
}

inline const char* tsr1_dtype_name(std::uint8_t code) { return code == 0 ? "float32" : "float64"; }

}  // namespace detail

template <typename T>
void save_tsr1(std::ostream& os, const Tensor<T>& t) {
  write_bytes(os, "TSR1", 4);
  write_u8(os, detail::tsr1_dtype_code<T>());
  if (t.rank() > 255) throw UsageError("tensor rank exceeds format limit");
  write_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t i = 0; i < t.rank(); ++i) {
    if (t.size(i) > std::numeric_limits<std::uint32_t>::max()) {
      throw UsageError("tensor extent exceeds format limit");
    }
    write_u32_le(os, static_cast<std::uint32_t>(t.size(i)));
  }
  // Payload is little-endian; this serializer targets little-endian hosts.
  write_bytes(os, t.data(), t.numel() * sizeof(T));
}

template <typename T>
Tensor<T> read_tsr1(std::istream& is) {
  char magic[4];
  read_bytes(is, magic, 4, "tensor magic");
  if (std::memcmp(magic, "TSR1", 4) != 0) {
    throw DataFormatError("bad tensor magic, expected TSR1");
  }
  const std::uint8_t dtype = read_u8(is, "tensor dtype");
  if (dtype > 1) throw DataFormatError("unknown tensor dtype code " + std::to_string(dtype));
  if (dtype != detail::tsr1_dtype_code<T>()) {
    throw DataFormatError(std::string("tensor dtype is ") + detail::tsr1_dtype_name(dtype) +
                          ", requested " + detail::tsr1_dtype_name(detail::tsr1_dtype_code<T>()));
  }
  const std::uint8_t rank = read_u8(is, "tensor rank");
  std::vector<std::size_t> dims(rank);
  for (std::uint8_t i = 0; i < rank; ++i) dims[i] = read_u32_le(is, "tensor extent");
  Shape shape(dims);
  Tensor<T> t(shape);
  read_bytes(is, t.mutable_data(), t.numel() * sizeof(T), "tensor payload");
  return t;
}

template <typename T>
void save_tsr1_file(const std::string& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataFormatError("cannot open " + path + " for writing");
  save_tsr1(os, t);
}

template <typename T>
Tensor<T> load_tsr1_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataFormatError("cannot open " + path);
  Tensor<T> t = read_tsr1<T>(is);
  is.peek();
  if (!is.eof()) throw DataFormatError(path + ": trailing bytes after tensor payload");
  return t;
}

template <typename T>
std::vector<std::uint8_t> encode_tsr1(const Tensor<T>& t) {
  std::ostringstream os(std::ios::binary);
  save_tsr1(os, t);
  const std::string s = os.str();
  return std::vector<std::uint8_t>(s.begin(), s.end());
}

template <typename T>
Tensor<T> decode_tsr1(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  Tensor<T> t = read_tsr1<T>(is);
  is.peek();
  if (!is.eof()) throw DataFormatError("trailing bytes after tensor payload");
  return t;
}

}  // namespace thumbnet
