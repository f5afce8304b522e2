#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

// Cubic convolution kernel with a = -0.5 (Keys). Piecewise cubic supported
// on [-2,2]; reproduces constants and linear ramps exactly.
inline double cubic_kernel(double x) {
  x = std::abs(x);
  if (x < 1.0) return (1.5 * x - 2.5) * x * x + 1.0;
  if (x < 2.0) return ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0;
  return 0.0;
}

// Four-tap weights for source offsets {-1, 0, 1, 2} around floor(s), where
// frac = s - floor(s) in [0,1).
inline std::array<double, 4> cubic_weights(double frac) {
  return {cubic_kernel(frac + 1.0), cubic_kernel(frac), cubic_kernel(frac - 1.0),
          cubic_kernel(frac - 2.0)};
}

namespace detail {

struct CubicTap {
  std::ptrdiff_t base;  // floor of the source coordinate
  std::array<double, 4> w;
};

// Pixel-center mapping: source coordinate s = (dst + 0.5)*f - 0.5.
inline CubicTap cubic_tap(std::size_t dst, std::size_t f) {
  const double s = (double(dst) + 0.5) * double(f) - 0.5;
  const double base = std::floor(s);
  return {std::ptrdiff_t(base), cubic_weights(s - base)};
}

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t extent) {
  if (i < 0) return 0;
  if (i >= std::ptrdiff_t(extent)) return extent - 1;
  return std::size_t(i);
}

}  // namespace detail

// Separable cubic-convolution downscale of a 3 x H x W image by an integer
// linear factor; edges are clamped (border pixels replicate).
template <typename T>
Tensor<T> bicubic_downscale(const Tensor<T>& img, std::size_t f) {
  require_rank(img.shape(), 3, "bicubic_downscale input");
  if (img.size(0) != 3)
    throw GeometryError("bicubic_downscale: expected 3 channels, got shape " + img.shape().str());
  if (f == 0) throw UsageError("bicubic_downscale: factor must be positive");
  const std::size_t h = img.size(1), w = img.size(2);
  if (h % f != 0 || w % f != 0)
    throw GeometryError("bicubic_downscale: extents " + std::to_string(h) + "x" +
                        std::to_string(w) + " not divisible by factor " + std::to_string(f));
  const std::size_t oh = h / f, ow = w / f;

  std::vector<detail::CubicTap> col_taps(ow), row_taps(oh);
  for (std::size_t x = 0; x < ow; ++x) col_taps[x] = detail::cubic_tap(x, f);
  for (std::size_t y = 0; y < oh; ++y) row_taps[y] = detail::cubic_tap(y, f);

  // Horizontal pass into a 3 x H x OW buffer, then vertical.
  std::vector<double> mid(3 * h * ow);
  const T* src = img.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      const T* row = src + (c * h + y) * w;
      for (std::size_t x = 0; x < ow; ++x) {
        const detail::CubicTap& t = col_taps[x];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          acc += t.w[k] * double(row[detail::clamp_index(t.base - 1 + k, w)]);
        mid[(c * h + y) * ow + x] = acc;
      }
    }
  }

  Tensor<T> out(Shape{3, oh, ow});
  T* dst = out.mutable_data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      const detail::CubicTap& t = row_taps[y];
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
          acc += t.w[k] * mid[(c * h + detail::clamp_index(t.base - 1 + k, h)) * ow + x];
        dst[(c * oh + y) * ow + x] = T(acc);
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> bicubic_downscale_batch(const Tensor<T>& x, std::size_t f) {
  require_rank(x.shape(), 4, "bicubic_downscale_batch input");
  const std::size_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  Tensor<T> sample(Shape{c, h, w});
  Tensor<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(x.data() + i * sample.numel(), x.data() + (i + 1) * sample.numel(),
              sample.mutable_data());
    Tensor<T> yi = bicubic_downscale(sample, f);
    if (i == 0) out = Tensor<T>(Shape{n, c, yi.size(1), yi.size(2)});
    std::copy(yi.data(), yi.data() + yi.numel(), out.mutable_data() + i * yi.numel());
  }
  return out;
}

}  // namespace thumbnet
