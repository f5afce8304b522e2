#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "thumbnet/core/finite.hpp"
#include "thumbnet/core/ops.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/layers/spec.hpp"

namespace thumbnet {

// Max pooling over NCHW. Ties route the gradient to the first (lowest-index)
// maximum; windows lying entirely in padding produce 0 with no gradient.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, std::size_t k, std::size_t stride, std::size_t pad = 0) {
  require_rank(x.shape(), 4, "maxpool");
  const std::size_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const std::size_t oh = detail::conv_extent(h, k, stride, pad, "maxpool");
  const std::size_t ow = detail::conv_extent(w, k, stride, pad, "maxpool");

  Tensor<T> out(Shape{n, c, oh, ow});
  std::vector<std::int64_t> argmax(out.numel(), -1);
  {
    T* o = out.mutable_data();
    const T* p = x.data();
    std::size_t oi = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* plane = p + (i * c + ch) * h * w;
        const std::size_t base = (i * c + ch) * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xo = 0; xo < ow; ++xo, ++oi) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_idx = -1;
            for (std::size_t ki = 0; ki < k; ++ki) {
              const std::ptrdiff_t iy =
                  static_cast<std::ptrdiff_t>(y * stride + ki) - static_cast<std::ptrdiff_t>(pad);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kj = 0; kj < k; ++kj) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride + kj) -
                                          static_cast<std::ptrdiff_t>(pad);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                const T v = plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)];
                if (v > best) {
                  best = v;
                  best_idx = static_cast<std::int64_t>(
                      base + static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix));
                }
              }
            }
            o[oi] = best_idx < 0 ? T(0) : best;
            argmax[oi] = best_idx;
          }
        }
      }
    }
  }
  check_finite(out, "maxpool");

  auto core = detail::result_core<T>({&x});
  if (core) {
    const std::int64_t nx = detail::node_on(core, x);
    const std::size_t in_numel = x.numel();
    std::int64_t id = core->emit(out.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
      std::vector<T> dx(in_numel, T(0));
      for (std::size_t i = 0; i < up.size(); ++i) {
        if (argmax[i] >= 0) dx[static_cast<std::size_t>(argmax[i])] += up[i];
      }
      tc.accumulate(nx, dx.data(), dx.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

// Average pooling over NCHW, unpadded; divisor is always the window area.
template <typename T>
Tensor<T> avgpool(const Tensor<T>& x, std::size_t k, std::size_t stride) {
  require_rank(x.shape(), 4, "avgpool");
  const std::size_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  const std::size_t oh = detail::conv_extent(h, k, stride, 0, "avgpool");
  const std::size_t ow = detail::conv_extent(w, k, stride, 0, "avgpool");
  const T inv = T(1) / static_cast<T>(k * k);

  Tensor<T> out(Shape{n, c, oh, ow});
  {
    T* o = out.mutable_data();
    const T* p = x.data();
    std::size_t oi = 0;
    for (std::size_t img = 0; img < n * c; ++img) {
      const T* plane = p + img * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xo = 0; xo < ow; ++xo, ++oi) {
          T sum = T(0);
          for (std::size_t ki = 0; ki < k; ++ki)
            for (std::size_t kj = 0; kj < k; ++kj)
              sum += plane[(y * stride + ki) * w + xo * stride + kj];
          o[oi] = sum * inv;
        }
      }
    }
  }
  check_finite(out, "avgpool");

  auto core = detail::result_core<T>({&x});
  if (core) {
    const std::int64_t nx = detail::node_on(core, x);
    const std::size_t in_numel = x.numel();
    std::int64_t id = core->emit(out.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
      std::vector<T> dx(in_numel, T(0));
      std::size_t oi = 0;
      for (std::size_t img = 0; img < n * c; ++img) {
        T* dplane = dx.data() + img * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
          for (std::size_t xo = 0; xo < ow; ++xo, ++oi) {
            const T u = up[oi] * inv;
            for (std::size_t ki = 0; ki < k; ++ki)
              for (std::size_t kj = 0; kj < k; ++kj)
                dplane[(y * stride + ki) * w + xo * stride + kj] += u;
          }
        }
      }
      tc.accumulate(nx, dx.data(), dx.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

// Global average pooling NCHW -> N x C x 1 x 1.
template <typename T>
Tensor<T> global_avgpool(const Tensor<T>& x) {
  require_rank(x.shape(), 4, "globalavgpool");
  return reduce_mean(x, {2, 3}, /*keepdims=*/true);
}

// Fully-connected layer: flattens trailing dimensions, applies x W^T + b.
// Weights are [out, in]; bias [out] or empty.
template <typename T>
Tensor<T> fully_connected(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_rank(w.shape(), 2, "fullyconnected weights");
  const std::size_t batch = x.rank() >= 1 ? x.size(0) : 0;
  if (x.rank() < 2) throw GeometryError("fullyconnected: input must have a batch dimension");
  const std::size_t features = x.numel() / batch;
  if (features != w.size(1)) {
    throw GeometryError("fullyconnected: input flattens to " + std::to_string(features) +
                        " features, weights expect " + std::to_string(w.size(1)));
  }
  if (!bias.empty() && bias.numel() != w.size(0)) {
    throw GeometryError("fullyconnected: bias shape " + bias.shape().str() + " does not match " +
                        std::to_string(w.size(0)) + " outputs");
  }
  Tensor<T> flat = reshape(x, Shape{batch, features});
  Tensor<T> y = matmul(flat, transpose2d(w));
  if (!bias.empty()) y = add(y, reshape(bias, Shape{1, w.size(0)}));
  return y;
}

// Residual join: exact-shape elementwise sum (no silent broadcasting).
template <typename T>
Tensor<T> residual_add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw GeometryError("add: shapes " + a.shape().str() + " and " + b.shape().str() +
                        " must match exactly");
  }
  return add(a, b);
}

}  // namespace thumbnet
