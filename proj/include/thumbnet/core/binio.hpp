#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "thumbnet/core/error.hpp"

namespace thumbnet {

// Little-endian binary stream helpers shared by the tensor, checkpoint and
// dataset readers. All readers throw DataFormatError on truncation.

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw DataFormatError("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw DataFormatError(std::string("truncated input while reading ") + what);
  }
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }

inline void write_u16_le(std::ostream& os, std::uint16_t v) {
  const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
  write_bytes(os, b, 2);
}

inline void write_u32_le(std::ostream& os, std::uint32_t v) {
  const std::uint8_t b[4] = {
      static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
      static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
  write_bytes(os, b, 4);
}

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
  write_bytes(os, b, 8);
}

inline std::uint8_t read_u8(std::istream& is, const char* what) {
  std::uint8_t v;
  read_bytes(is, &v, 1, what);
  return v;
}

inline std::uint16_t read_u16_le(std::istream& is, const char* what) {
  std::uint8_t b[2];
  read_bytes(is, b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (std::uint16_t(b[1]) << 8));
}

inline std::uint32_t read_u32_le(std::istream& is, const char* what) {
  std::uint8_t b[4];
  read_bytes(is, b, 4, what);
  return b[0] | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

inline std::uint64_t read_u64_le(std::istream& is, const char* what) {
  std::uint8_t b[8];
  read_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
  return v;
}

inline std::uint32_t read_u32_be(std::istream& is, const char* what) {
  std::uint8_t b[4];
  read_bytes(is, b, 4, what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         b[3];
}

// FNV-1a, used as the checkpoint content checksum and the parameter-state
// fingerprint for frozen networks.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace thumbnet
