#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/finite.hpp"
#include "thumbnet/core/ops.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/losses/param_set.hpp"

namespace thumbnet {

// Guards the sqrt in the moment loss against a zero-variance channel, where
// the exact derivative is unbounded.
inline constexpr double kMomentEps = 1e-12;

// Moment-matching loss between an original image batch and its thumbnails.
// Per image: mean over channels of the squared mean gap, plus lambda_mm times
// the mean over channels of the squared standard-deviation gap; averaged over
// the batch. Standard deviations use population normalization. Spatial sizes
// of x and y may differ; only channel moments are compared.
template <typename T>
Tensor<T> mm_loss(const Tensor<T>& x, const Tensor<T>& y, T lambda_mm) {
  require_rank(x.shape(), 4, "mm_loss");
  require_rank(y.shape(), 4, "mm_loss");
  if (x.size(1) != 3 || y.size(1) != 3)
    throw UsageError("mm_loss: inputs must have 3 channels, got " + x.shape().str() + " and " +
                     y.shape().str());
  if (x.size(0) != y.size(0))
    throw UsageError("mm_loss: batch sizes differ, " + x.shape().str() + " vs " +
                     y.shape().str());

  auto moments = [](const Tensor<T>& t) {
    Tensor<T> mu = reduce_mean(t, {2, 3}, /*keepdims=*/true);
    Tensor<T> centered = sub(t, mu);
    Tensor<T> var = reduce_mean(mul(centered, centered), {2, 3}, /*keepdims=*/true);
    Tensor<T> sigma = sqrt(add_scalar(var, T(kMomentEps)));
    return std::pair<Tensor<T>, Tensor<T>>(mu, sigma);
  };
  auto [mu_x, sig_x] = moments(x);
  auto [mu_y, sig_y] = moments(y);

  Tensor<T> dmu = sub(mu_x, mu_y);
  Tensor<T> dsig = sub(sig_x, sig_y);
  Tensor<T> mean_term = mean_all(mul(dmu, dmu));
  Tensor<T> std_term = mean_all(mul(dsig, dsig));
  return add(mean_term, scale(std_term, lambda_mm));
}

// Mean cross-entropy between logits and integer labels: the batch average of
// -log softmax(logits)[label], computed with a stabilized log-sum-exp.
template <typename T>
Tensor<T> cl_loss(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  require_rank(logits.shape(), 2, "cl_loss");
  const std::size_t n = logits.size(0), k = logits.size(1);
  if (labels.size() != n)
    throw UsageError("cl_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] >= k)
      throw UsageError("cl_loss: label " + std::to_string(labels[i]) + " at index " +
                       std::to_string(i) + " out of range for " + std::to_string(k) +
                       " classes");

  const T* a = logits.data();
  std::vector<T> probs(n * k);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = a + i * k;
    T* prow = probs.data() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += double(prow[j]);
    }
    const T inv = T(1.0 / sum);
    for (std::size_t j = 0; j < k; ++j) prow[j] *= inv;
    total += std::log(sum) - double(row[labels[i]] - mx);
  }
  Tensor<T> out = Tensor<T>::scalar(T(total / double(n)));
  check_finite(out, "cl_loss", /*full_scan=*/true);

  auto core = detail::result_core<T>({&logits});
  if (core) {
    const std::int64_t nl = detail::node_on(core, logits);
    std::vector<std::size_t> lab = labels;
    std::int64_t id = core->emit(Shape{}, [=](TapeCore<T>& tc, const std::vector<T>& up) {
      const T u = up[0] / T(n);
      std::vector<T> g(probs.begin(), probs.end());
      for (std::size_t i = 0; i < n; ++i) {
        T* grow = g.data() + i * k;
        grow[lab[i]] -= T(1);
        for (std::size_t j = 0; j < k; ++j) grow[j] *= u;
      }
      tc.accumulate(nl, g.data(), g.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

// Distillation loss: batch mean of the cross entropy H(p_t, p_s) between
// temperature-softened distributions p = softmax(logits / tau). The teacher
// distribution is the target and receives no gradient; no tau^2 scaling is
// applied. With equal logits the loss reduces to the softened teacher
// entropy, its minimum over student logits.
template <typename T>
Tensor<T> kd_loss(const Tensor<T>& logits_s, const Tensor<T>& logits_t, T tau) {
  require_rank(logits_s.shape(), 2, "kd_loss");
  if (!(logits_s.shape() == logits_t.shape()))
    throw UsageError("kd_loss: shape mismatch, student " + logits_s.shape().str() +
                     " vs teacher " + logits_t.shape().str());
  if (!(tau > T(0))) throw UsageError("kd_loss: tau must be positive");

  const std::size_t n = logits_s.size(0), k = logits_s.size(1);
  const T* as = logits_s.data();
  const T* at = logits_t.data();
  std::vector<T> ps(n * k), pt(n * k);
  auto soften = [&](const T* src, T* dst) {
    for (std::size_t i = 0; i < n; ++i) {
      const T* row = src + i * k;
      T* drow = dst + i * k;
      T mx = row[0];
      for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        drow[j] = std::exp((row[j] - mx) / tau);
        sum += double(drow[j]);
      }
      const T inv = T(1.0 / sum);
      for (std::size_t j = 0; j < k; ++j) drow[j] *= inv;
    }
  };
  soften(as, ps.data());
  soften(at, pt.data());

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = as + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(double(row[j] - mx) / double(tau));
    const double lse = std::log(sum);
    for (std::size_t j = 0; j < k; ++j)
      total += double(pt[i * k + j]) * (lse - double(row[j] - mx) / double(tau));
  }
  Tensor<T> out = Tensor<T>::scalar(T(total / double(n)));
  check_finite(out, "kd_loss", /*full_scan=*/true);

  // Only the student input is recorded; the teacher side is a constant
  // target by contract.
  auto core = detail::result_core<T>({&logits_s});
  if (core) {
    const std::int64_t ns = detail::node_on(core, logits_s);
    std::int64_t id = core->emit(Shape{}, [=](TapeCore<T>& tc, const std::vector<T>& up) {
      const T u = up[0] / (T(n) * tau);
      std::vector<T> g(n * k);
      for (std::size_t i = 0; i < n * k; ++i) g[i] = u * (ps[i] - pt[i]);
      tc.accumulate(ns, g.data(), g.size());
    });
    out.detail_link(core, id, true);
  }
  return out;
}

// Feature-mimicking loss: (1 / 2N) * squared error between a fixed teacher
// feature map and the decoded student feature map, N being the teacher
// feature element count. `decoder` is any callable mapping the student
// feature tensor to the teacher feature geometry (typically a small
// deconvolution network); gradients flow into the student feature and the
// decoder parameters.
template <typename T, typename Decoder>
Tensor<T> fm_loss(const Tensor<T>& feat_t, const Tensor<T>& feat_s, Decoder&& decoder) {
  Tensor<T> decoded = std::forward<Decoder>(decoder)(feat_s);
  if (!(decoded.shape() == feat_t.shape()))
    throw GeometryError("fm_loss: decoder output " + decoded.shape().str() +
                        " does not match teacher feature " + feat_t.shape().str() +
                        "; decoder depth must invert the downscale ratio");
  Tensor<T> r = sub(feat_t.detached(), decoded);
  const T inv = T(1) / T(2 * feat_t.numel());
  return scale(sum_all(mul(r, r)), inv);
}

// Sum of squared entries over the weight tensors of a parameter set.
// Batchnorm scale/shift and biases are exempt. The caller applies the
// (theta / 2) factor.
template <typename T>
Tensor<T> l2_reg(const ParamSet<T>& params) {
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (const ParamEntry<T>& e : params) {
    if (e.role != ParamRole::weight) continue;
    if (e.tensor == nullptr) throw UsageError("l2_reg: null tensor for entry " + e.name);
    total = add(total, sum_all(mul(*e.tensor, *e.tensor)));
  }
  return total;
}

}  // namespace thumbnet
