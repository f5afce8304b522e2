#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "thumbnet/core/error.hpp"
#include "thumbnet/core/rng.hpp"
#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

// One training batch. Images are N x 3 x H x W in [0,1]; statistics-based
// standardization happens inside the forward pipeline so that image-space
// losses and thumbnail export see plain pixel values.
template <typename T>
struct LabeledBatch {
  Tensor<T> images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;  // K
};

// Per-channel pixel statistics in [0,1] units, computed once on the train
// split and stored beside the dataset.
struct DatasetStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

inline void save_stats(const std::string& path, const DatasetStats& s) {
  nlohmann::json j;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  std::ofstream os(path);
  if (!os) throw DataFormatError("cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
  if (!os) throw DataFormatError("write failed for " + path);
}

inline DatasetStats load_stats(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataFormatError("cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
    DatasetStats s;
    s.mean = j.at("mean").get<std::array<double, 3>>();
    s.stddev = j.at("stddev").get<std::array<double, 3>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataFormatError(path + ": " + e.what());
  }
}

// In-memory labeled image set, 3-channel CHW bytes per sample.
class ImageDataset {
 public:
  ImageDataset(std::size_t height, std::size_t width, std::size_t num_classes)
      : height_(height), width_(width), num_classes_(num_classes) {
    if (height == 0 || width == 0 || num_classes == 0)
      throw UsageError("ImageDataset: extents and class count must be positive");
  }

  std::size_t size() const { return labels_.size(); }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t num_classes() const { return num_classes_; }
  std::size_t sample_bytes() const { return 3 * height_ * width_; }

  void push(const std::uint8_t* chw, std::size_t label) {
    if (label >= num_classes_)
      throw UsageError("ImageDataset: label " + std::to_string(label) + " out of range [0," +
                       std::to_string(num_classes_) + ")");
    pixels_.insert(pixels_.end(), chw, chw + sample_bytes());
    labels_.push_back(label);
  }

  const std::uint8_t* image(std::size_t i) const { return pixels_.data() + i * sample_bytes(); }
  std::size_t label(std::size_t i) const { return labels_.at(i); }

  DatasetStats compute_stats() const {
    if (size() == 0) throw UsageError("compute_stats on empty dataset");
    DatasetStats s;
    const std::size_t hw = height_ * width_;
    const double n = double(size()) * double(hw);
    std::array<double, 3> sum{};
    for (std::size_t i = 0; i < size(); ++i) {
      const std::uint8_t* p = image(i);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < hw; ++k) sum[c] += p[c * hw + k] / 255.0;
    }
    for (std::size_t c = 0; c < 3; ++c) s.mean[c] = sum[c] / n;
    std::array<double, 3> sq{};
    for (std::size_t i = 0; i < size(); ++i) {
      const std::uint8_t* p = image(i);
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t k = 0; k < hw; ++k) {
          const double d = p[c * hw + k] / 255.0 - s.mean[c];
          sq[c] += d * d;
        }
      }
    }
    for (std::size_t c = 0; c < 3; ++c) s.stddev[c] = std::sqrt(sq[c] / n);
    return s;
  }

  // Restricted copy containing only the listed classes, labels remapped to
  // their position in `keep`.
  ImageDataset subset_classes(const std::vector<std::size_t>& keep) const {
    if (keep.empty()) throw UsageError("subset_classes: class list is empty");
    std::vector<std::size_t> remap(num_classes_, num_classes_);
    for (std::size_t i = 0; i < keep.size(); ++i) {
      if (keep[i] >= num_classes_)
        throw UsageError("subset_classes: class " + std::to_string(keep[i]) +
                         " out of range [0," + std::to_string(num_classes_) + ")");
      if (remap[keep[i]] != num_classes_)
        throw UsageError("subset_classes: class " + std::to_string(keep[i]) + " listed twice");
      remap[keep[i]] = i;
    }
    ImageDataset out(height_, width_, keep.size());
    for (std::size_t i = 0; i < size(); ++i) {
      if (remap[labels_[i]] != num_classes_) out.push(image(i), remap[labels_[i]]);
    }
    return out;
  }

 private:
  std::size_t height_, width_, num_classes_;
  std::vector<std::uint8_t> pixels_;
  std::vector<std::size_t> labels_;
};

struct BatchOptions {
  std::size_t batch_size = 64;
  bool shuffle = true;
  // Random horizontal flip plus random crop from a 4-pixel zero-padded
  // canvas, applied to the train split only. Off by default so evaluation
  // and determinism tests see raw pixels.
  bool augment = false;
  std::uint64_t seed = 0;
  bool drop_last = false;
};

// Deterministic epoch iterator over an ImageDataset. The sample order and
// every augmentation draw are fully determined by (seed, epoch).
template <typename T>
class BatchStream {
 public:
  BatchStream(const ImageDataset& ds, BatchOptions opts)
      : ds_(&ds), opts_(opts), rng_(opts.seed) {
    if (opts_.batch_size == 0) throw UsageError("BatchStream: batch_size must be positive");
    if (ds.size() == 0) throw UsageError("BatchStream: dataset is empty");
    order_.resize(ds.size());
    start_epoch(0);
  }

  void start_epoch(std::size_t epoch) {
    rng_ = Rng(opts_.seed).fork(epoch);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (opts_.shuffle) rng_.shuffle(order_);
    cursor_ = 0;
  }

  std::size_t batches_per_epoch() const {
    const std::size_t n = ds_->size();
    return opts_.drop_last ? n / opts_.batch_size
                           : (n + opts_.batch_size - 1) / opts_.batch_size;
  }

  std::optional<LabeledBatch<T>> next() {
    const std::size_t remaining = order_.size() - cursor_;
    if (remaining == 0 || (opts_.drop_last && remaining < opts_.batch_size))
      return std::nullopt;
    const std::size_t n = std::min(opts_.batch_size, remaining);
    const std::size_t h = ds_->height(), w = ds_->width(), hw = h * w;

    LabeledBatch<T> batch;
    batch.images = Tensor<T>(Shape{n, 3, h, w});
    batch.num_classes = ds_->num_classes();
    T* dst = batch.images.mutable_data();
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t idx = order_[cursor_ + b];
      batch.labels.push_back(ds_->label(idx));
      const std::uint8_t* src = ds_->image(idx);
      bool flip = false;
      std::size_t dy = 4, dx = 4;  // offsets into the padded canvas; 4 = no shift
      if (opts_.augment) {
        flip = rng_.below(2) == 1;
        dy = rng_.below(9);
        dx = rng_.below(9);
      }
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t sx = flip ? w - 1 - x : x;
            // Position in the 4-padded canvas, mapped back to the source.
            const std::ptrdiff_t py = std::ptrdiff_t(y + dy) - 4;
            const std::ptrdiff_t px = std::ptrdiff_t(sx + dx) - 4;
            T v = T(0);
            if (py >= 0 && py < std::ptrdiff_t(h) && px >= 0 && px < std::ptrdiff_t(w))
              v = T(src[c * hw + std::size_t(py) * w + std::size_t(px)] / 255.0);
            dst[((b * 3 + c) * h + y) * w + x] = v;
          }
        }
      }
    }
    cursor_ += n;
    return batch;
  }

 private:
  const ImageDataset* ds_;
  BatchOptions opts_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace thumbnet
