#pragma once

#include <cmath>
#include <functional>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/finite.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"

namespace thumbnet {

// Compares the taped gradient of a scalar-valued function against central
// finite differences at `at`. Returns the worst relative error
//   max_i |g_an[i] - g_num[i]| / max(|g_an[i]|, |g_num[i]|, 1e-8).
// f must be a pure function of its argument; it sees a watched tensor on the
// analytic pass and plain constants on the numeric passes.
template <typename T, typename F>
double grad_check(F&& f, const Tensor<T>& at, T step = T(1e-5)) {
  Tensor<T> analytic;
  {
    Tape<T> tape;
    Tensor<T> x = at.detached();
    tape.watch(x);
    Tensor<T> y = f(x);
    if (y.numel() != 1) {
      throw UsageError("grad_check: function must return a scalar, got " + y.shape().str());
    }
    tape.backward(y);
    analytic = tape.grad(x);
  }

  const std::size_t n = at.numel();
  double worst = 0;
  Tensor<T> probe = at.detached();
  for (std::size_t i = 0; i < n; ++i) {
    const T saved = probe.data()[i];
    probe.mutable_data()[i] = saved + step;
    const T up = f(probe).item();
    probe.mutable_data()[i] = saved - step;
    const T down = f(probe).item();
    probe.mutable_data()[i] = saved;
    if (!std::isfinite(static_cast<double>(up)) || !std::isfinite(static_cast<double>(down))) {
      throw NumericFault("grad_check: non-finite value at perturbed point");
    }
    const double numeric = (static_cast<double>(up) - static_cast<double>(down)) /
                           (2.0 * static_cast<double>(step));
    const double exact = static_cast<double>(analytic.data()[i]);
    const double scale = std::max({std::abs(exact), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(exact - numeric) / scale);
  }
  return worst;
}

}  // namespace thumbnet
