#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/dataio/dataset.hpp"
#include "thumbnet/model/graph.hpp"

namespace thumbnet {

inline std::uint8_t to_byte(double v) {
  const long b = std::lround(v * 255.0);
  return std::uint8_t(std::clamp(b, 0l, 255l));
}

// Binary PPM (P6) writer for a 3 x H x W image in [0,1]. Values are scaled
// by 255, rounded and clamped.
template <typename T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
  require_rank(img.shape(), 3, "write_ppm input");
  if (img.size(0) != 3)
    throw GeometryError("write_ppm: expected 3 channels, got shape " + img.shape().str());
  const std::size_t h = img.size(1), w = img.size(2), hw = h * w;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataFormatError("cannot open " + path + " for writing");
  os << "P6\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> row(3 * w);
  const T* p = img.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        row[3 * x + c] = to_byte(double(p[c * hw + y * w + x]));
    os.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
  }
  if (!os) throw DataFormatError("write failed for " + path);
}

struct ThumbnailExport {
  std::vector<std::string> files;
  // Channel statistics of the emitted (clamped) thumbnails and of the source
  // images, both in [0,1] units, for moment-matching inspection.
  std::array<double, 3> emitted_mean{}, emitted_stddev{};
  std::array<double, 3> original_mean{}, original_stddev{};
};

// Runs the downscaler in inference mode over the first `count` dataset
// images and writes one PPM per image into out_dir.
template <typename T>
ThumbnailExport export_thumbnails(const NetworkGraph<T>& downscaler, const ImageDataset& ds,
                                  std::size_t count, const std::string& out_dir,
                                  std::ostream* log = nullptr) {
  if (count == 0 || count > ds.size()) count = ds.size();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataFormatError("cannot create directory " + out_dir + ": " + ec.message());

  const std::size_t h = ds.height(), w = ds.width(), hw = h * w;
  ThumbnailExport out;
  std::array<double, 3> esum{}, esq{};
  std::array<double, 3> osum{}, osq{};
  std::size_t epix = 0;

  Tensor<T> x(Shape{1, 3, h, w});
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* src = ds.image(i);
    T* px = x.mutable_data();
    for (std::size_t k = 0; k < 3 * hw; ++k) px[k] = T(src[k] / 255.0);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < hw; ++k) {
        const double v = src[c * hw + k] / 255.0;
        osum[c] += v;
        osq[c] += v * v;
      }
    }

    Tensor<T> y = downscaler.forward(x, RunMode::eval);
    const std::size_t th = y.size(2), tw = y.size(3), thw = th * tw;
    Tensor<T> img(Shape{3, th, tw});
    T* pi = img.mutable_data();
    const T* py = y.data();
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t k = 0; k < thw; ++k) {
        const double v = to_byte(double(py[c * thw + k])) / 255.0;  // as emitted
        pi[c * thw + k] = T(v);
        esum[c] += v;
        esq[c] += v * v;
      }
    }
    epix += thw;

    char name[32];
    std::snprintf(name, sizeof(name), "thumb_%06zu.ppm", i);
    const std::string path = out_dir + "/" + name;
    write_ppm(path, img);
    out.files.push_back(path);
  }

  const double en = double(epix), on = double(count) * double(hw);
  for (std::size_t c = 0; c < 3; ++c) {
    out.emitted_mean[c] = esum[c] / en;
    out.original_mean[c] = osum[c] / on;
    const double ev = esq[c] / en - out.emitted_mean[c] * out.emitted_mean[c];
    const double ov = osq[c] / on - out.original_mean[c] * out.original_mean[c];
    out.emitted_stddev[c] = std::sqrt(ev > 0.0 ? ev : 0.0);
    out.original_stddev[c] = std::sqrt(ov > 0.0 ? ov : 0.0);
  }
  if (log) {
    *log << "exported " << out.files.size() << " thumbnails to " << out_dir << "\n";
    for (std::size_t c = 0; c < 3; ++c) {
      *log << "channel " << c << ": emitted mean " << out.emitted_mean[c] << " std "
           << out.emitted_stddev[c] << " | original mean " << out.original_mean[c] << " std "
           << out.original_stddev[c] << "\n";
    }
  }
  return out;
}

}  // namespace thumbnet
