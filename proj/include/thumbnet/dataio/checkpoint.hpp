#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "thumbnet/core/binio.hpp"
#include "thumbnet/core/error.hpp"
#include "thumbnet/core/tensor_io.hpp"

namespace thumbnet {

class CorruptionError : public DataFormatError {
 public:
  using DataFormatError::DataFormatError;
};

class VersionError : public DataFormatError {
 public:
  using DataFormatError::DataFormatError;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Single-file training artifact: a JSON metadata document (graph text,
// hyperparameters, training progress, dataset statistics) plus a named
// tensor table with TSR1 payloads.
//
// Wire format:
//   "TNCK" | version u32 le | body | fnv1a64(body) u64 le
//   body = meta_len u64 | meta bytes | count u64 |
//          repeat: name_len u64 | name | payload_len u64 | payload
// The version field sits outside the checksum so that files written by a
// newer layout still fail with a version error rather than a checksum one.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string meta_json = "{}";
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> tensors;

  bool has_tensor(const std::string& name) const {
    for (const auto& [n, _] : tensors)
      if (n == name) return true;
    return false;
  }

  template <typename T>
  void put_tensor(const std::string& name, const Tensor<T>& t) {
    std::vector<std::uint8_t> payload = encode_tsr1(t);
    for (auto& [n, p] : tensors) {
      if (n == name) {
        p = std::move(payload);
        return;
      }
    }
    tensors.emplace_back(name, std::move(payload));
  }

  template <typename T>
  Tensor<T> tensor(const std::string& name) const {
    for (const auto& [n, p] : tensors)
      if (n == name) return decode_tsr1<T>(p);
    throw UsageError("checkpoint has no tensor named '" + name + "'");
  }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ostringstream body(std::ios::binary);
  write_u64_le(body, ck.meta_json.size());
  write_bytes(body, ck.meta_json.data(), ck.meta_json.size());
  write_u64_le(body, ck.tensors.size());
  for (const auto& [name, payload] : ck.tensors) {
    write_u64_le(body, name.size());
    write_bytes(body, name.data(), name.size());
    write_u64_le(body, payload.size());
    write_bytes(body, payload.data(), payload.size());
  }
  const std::string b = body.str();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataFormatError("cannot open " + path + " for writing");
  write_bytes(os, "TNCK", 4);
  write_u32_le(os, ck.version);
  write_bytes(os, b.data(), b.size());
  write_u64_le(os, fnv1a64(b.data(), b.size()));
  os.flush();
  if (!os) throw DataFormatError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataFormatError("cannot open " + path);
  std::ostringstream buf(std::ios::binary);
  buf << is.rdbuf();
  const std::string file = buf.str();

  if (file.size() < 4 + 4 + 8) throw DataFormatError(path + ": too short for a checkpoint");
  if (std::memcmp(file.data(), "TNCK", 4) != 0)
    throw DataFormatError(path + ": bad checkpoint magic, expected TNCK");

  Checkpoint ck;
  {
    std::istringstream hdr(file.substr(4, 4), std::ios::binary);
    ck.version = read_u32_le(hdr, "checkpoint version");
  }
  if (ck.version != kCheckpointVersion)
    throw VersionError(path + ": checkpoint version " + std::to_string(ck.version) +
                       " not supported (expected " + std::to_string(kCheckpointVersion) + ")");

  const std::size_t body_len = file.size() - 8 - 8;
  const char* body = file.data() + 8;
  std::uint64_t stored = 0;
  {
    std::istringstream tail(file.substr(file.size() - 8), std::ios::binary);
    stored = read_u64_le(tail, "checkpoint checksum");
  }
  if (fnv1a64(body, body_len) != stored)
    throw CorruptionError(path + ": checksum mismatch, file is corrupt");

  std::istringstream bs(std::string(body, body_len), std::ios::binary);
  const std::uint64_t meta_len = read_u64_le(bs, "meta length");
  ck.meta_json.resize(meta_len);
  if (meta_len > 0) read_bytes(bs, ck.meta_json.data(), meta_len, "meta document");
  const std::uint64_t count = read_u64_le(bs, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint64_t name_len = read_u64_le(bs, "tensor name length");
    std::string name(name_len, '\0');
    if (name_len > 0) read_bytes(bs, name.data(), name_len, "tensor name");
    const std::uint64_t payload_len = read_u64_le(bs, "tensor payload length");
    std::vector<std::uint8_t> payload(payload_len);
    if (payload_len > 0) read_bytes(bs, payload.data(), payload_len, "tensor payload");
    ck.tensors.emplace_back(std::move(name), std::move(payload));
  }
  bs.peek();
  if (!bs.eof()) throw DataFormatError(path + ": trailing bytes after tensor table");
  return ck;
}

}  // namespace thumbnet
