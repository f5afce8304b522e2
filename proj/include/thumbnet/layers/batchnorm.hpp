#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "thumbnet/core/finite.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/layers/spec.hpp"

namespace thumbnet {

inline constexpr double kBatchnormEps = 1e-5;
inline constexpr double kBatchnormMomentum = 0.9;  // running <- 0.9*running + 0.1*batch

// Batch normalization over NCHW input, per channel. Train mode normalizes by
// batch statistics (population variance) and updates the running stats in
// place; eval mode applies the running-stat affine map. Differentiable with
// respect to input, scale and shift; running stats never carry gradient.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                    Tensor<T>& running_mean, Tensor<T>& running_var, RunMode mode,
                    T momentum = T(kBatchnormMomentum), T eps = T(kBatchnormEps)) {
  require_rank(x.shape(), 4, "batchnorm");
  const std::size_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (scale.numel() != c || shift.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw GeometryError("batchnorm: parameter length does not match " + std::to_string(c) +
                        " channels");
  }
  const std::size_t plane = h * w;
  const std::size_t m = n * plane;  // statistics count per channel
  if (mode == RunMode::train && m < 2) {
    throw UsageError("batchnorm: train mode needs at least 2 values per channel");
  }

  std::vector<T> mean(c), istd(c);
  if (mode == RunMode::train) {
    std::vector<T> var(c);
    const T* p = x.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0, sq = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* v = p + (i * c + ch) * plane;
        for (std::size_t j = 0; j < plane; ++j) {
          sum += v[j];
          sq += double(v[j]) * double(v[j]);
        }
      }
      const double mu = sum / double(m);
      const double va = std::max(0.0, sq / double(m) - mu * mu);
      mean[ch] = static_cast<T>(mu);
      var[ch] = static_cast<T>(va);
      istd[ch] = static_cast<T>(1.0 / std::sqrt(va + double(eps)));
    }
    T* rm = running_mean.mutable_data();
    T* rv = running_var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      rm[ch] = momentum * rm[ch] + (T(1) - momentum) * mean[ch];
      rv[ch] = momentum * rv[ch] + (T(1) - momentum) * var[ch];
    }
  } else {
    const T* rm = running_mean.data();
    const T* rv = running_var.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      istd[ch] = static_cast<T>(1.0 / std::sqrt(double(rv[ch]) + double(eps)));
    }
  }

  Tensor<T> out(x.shape());
  {
    T* o = out.mutable_data();
    const T* p = x.data();
    const T* g = scale.data();
    const T* b = shift.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* v = p + (i * c + ch) * plane;
        T* ov = o + (i * c + ch) * plane;
        const T mu = mean[ch], is = istd[ch], ga = g[ch], be = b[ch];
        for (std::size_t j = 0; j < plane; ++j) ov[j] = ga * (v[j] - mu) * is + be;
      }
    }
  }
  check_finite(out, "batchnorm");

  auto core = detail::result_core<T>({&x, &scale, &shift});
  if (core) {
    const std::int64_t nx = detail::node_on(core, x);
    const std::int64_t ng = detail::node_on(core, scale);
    const std::int64_t nb = detail::node_on(core, shift);
    Tensor<T> cx = x.detached(), cg = scale.detached();
    const bool train = mode == RunMode::train;
    std::int64_t id = core->emit(x.shape(), [=](TapeCore<T>& tc, const std::vector<T>& up) {
      const T* p = cx.data();
      const T* g = cg.data();
      std::vector<T> dg(c, T(0)), db(c, T(0));
      // Per-channel sums of upstream and upstream*xhat.
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* v = p + (i * c + ch) * plane;
          const T* u = up.data() + (i * c + ch) * plane;
          const T mu = mean[ch], is = istd[ch];
          T su = T(0), sux = T(0);
          for (std::size_t j = 0; j < plane; ++j) {
            su += u[j];
            sux += u[j] * (v[j] - mu) * is;
          }
          db[ch] += su;
          dg[ch] += sux;
        }
      }
      if (nx >= 0) {
        std::vector<T> dx(n * c * plane);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* v = p + (i * c + ch) * plane;
            const T* u = up.data() + (i * c + ch) * plane;
            T* d = dx.data() + (i * c + ch) * plane;
            const T mu = mean[ch], is = istd[ch], ga = g[ch];
            if (train) {
              const T inv_m = T(1) / static_cast<T>(m);
              for (std::size_t j = 0; j < plane; ++j) {
                const T xh = (v[j] - mu) * is;
                d[j] = ga * is * (u[j] - db[ch] * inv_m - xh * dg[ch] * inv_m);
              }
            } else {
              for (std::size_t j = 0; j < plane; ++j) d[j] = ga * is * u[j];
            }
          }
        }
        tc.accumulate(nx, dx.data(), dx.size());
      }
      if (ng >= 0) tc.accumulate(ng, dg.data(), dg.size());
      if (nb >= 0) tc.accumulate(nb, db.data(), db.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

}  // namespace thumbnet
