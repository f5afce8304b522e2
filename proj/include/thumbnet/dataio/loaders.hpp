#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "thumbnet/core/binio.hpp"
#include "thumbnet/core/error.hpp"
#include "thumbnet/dataio/dataset.hpp"

namespace thumbnet {

// CIFAR-10 binary layout: consecutive records of one label byte followed by
// 3072 image bytes (three 32x32 channel planes). Ten classes.
inline constexpr std::size_t kCifarEdge = 32;
inline constexpr std::size_t kCifarClasses = 10;
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * kCifarEdge * kCifarEdge;

inline void load_cifar10_file(const std::string& path, ImageDataset& out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataFormatError("cannot open " + path);
  std::vector<char> record(kCifarRecordBytes);
  std::size_t offset = 0;
  while (true) {
    is.read(record.data(), std::streamsize(record.size()));
    const std::size_t got = std::size_t(is.gcount());
    if (got == 0) break;
    if (got != kCifarRecordBytes)
      throw DataFormatError(path + ": truncated record at byte offset " +
                            std::to_string(offset) + " (got " + std::to_string(got) + " of " +
                            std::to_string(kCifarRecordBytes) + " bytes)");
    const std::uint8_t label = std::uint8_t(record[0]);
    if (label >= kCifarClasses)
      throw DataFormatError(path + ": label " + std::to_string(label) +
                            " out of range [0,10) at byte offset " + std::to_string(offset));
    out.push(reinterpret_cast<const std::uint8_t*>(record.data()) + 1, label);
    offset += kCifarRecordBytes;
  }
  if (offset == 0) throw DataFormatError(path + ": contains no records");
}

inline ImageDataset load_cifar10_files(const std::vector<std::string>& paths) {
  if (paths.empty()) throw UsageError("load_cifar10_files: no input files");
  ImageDataset ds(kCifarEdge, kCifarEdge, kCifarClasses);
  for (const std::string& p : paths) load_cifar10_file(p, ds);
  return ds;
}

// Standard distribution filenames inside `dir`: data_batch_1..5.bin for the
// train split, test_batch.bin for the test split.
inline ImageDataset load_cifar10(const std::string& dir, const std::string& split) {
  std::vector<std::string> paths;
  if (split == "train") {
    for (int i = 1; i <= 5; ++i)
      paths.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else if (split == "test") {
    paths.push_back(dir + "/test_batch.bin");
  } else {
    throw UsageError("load_cifar10: unknown split '" + split + "' (use train or test)");
  }
  return load_cifar10_files(paths);
}

// IDX pair (MNIST layout): big-endian magic and dims, u8 payload. Grayscale
// pixels are replicated to three channels.
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

inline ImageDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream li(labels_path, std::ios::binary);
  if (!li) throw DataFormatError("cannot open " + labels_path);
  const std::uint32_t lmagic = read_u32_be(li, "label magic");
  if (lmagic != kIdxLabelsMagic)
    throw DataFormatError(labels_path + ": bad magic " + std::to_string(lmagic) +
                          ", expected " + std::to_string(kIdxLabelsMagic));
  const std::uint32_t lcount = read_u32_be(li, "label count");
  if (lcount == 0) throw DataFormatError(labels_path + ": contains no labels");
  std::vector<std::uint8_t> labels(lcount);
  read_bytes(li, labels.data(), lcount, "label bytes");

  std::ifstream ii(images_path, std::ios::binary);
  if (!ii) throw DataFormatError("cannot open " + images_path);
  const std::uint32_t imagic = read_u32_be(ii, "image magic");
  if (imagic != kIdxImagesMagic)
    throw DataFormatError(images_path + ": bad magic " + std::to_string(imagic) +
                          ", expected " + std::to_string(kIdxImagesMagic));
  const std::uint32_t icount = read_u32_be(ii, "image count");
  const std::uint32_t rows = read_u32_be(ii, "image rows");
  const std::uint32_t cols = read_u32_be(ii, "image cols");
  if (icount != lcount)
    throw DataFormatError(images_path + ": " + std::to_string(icount) + " images but " +
                          std::to_string(lcount) + " labels");
  if (rows == 0 || cols == 0)
    throw DataFormatError(images_path + ": zero image extent");

  std::size_t num_classes = 0;
  for (std::uint8_t l : labels) num_classes = std::max<std::size_t>(num_classes, l + 1);

  ImageDataset ds(rows, cols, num_classes);
  const std::size_t hw = std::size_t(rows) * cols;
  std::vector<std::uint8_t> gray(hw), chw(3 * hw);
  for (std::uint32_t i = 0; i < icount; ++i) {
    read_bytes(ii, gray.data(), hw, "image pixels");
    for (std::size_t c = 0; c < 3; ++c)
      std::copy(gray.begin(), gray.end(), chw.begin() + c * hw);
    ds.push(chw.data(), labels[i]);
  }
  return ds;
}

}  // namespace thumbnet
