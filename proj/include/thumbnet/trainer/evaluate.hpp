#pragma once

#include <array>
#include <cstddef>
#include <utility>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/dataio/bicubic.hpp"
#include "thumbnet/dataio/dataset.hpp"
#include "thumbnet/layers/spec.hpp"
#include "thumbnet/losses/losses.hpp"
#include "thumbnet/model/graph.hpp"
#include "thumbnet/model/pipeline.hpp"

namespace thumbnet {

struct EvalResult {
  double top1_error = 0.0;
  double top5_error = 0.0;
  double mean_loss = 0.0;  // mean classification loss over the split
  std::size_t count = 0;
};

// Counts top-1 and top-k hits for a batch of logits. A prediction is a top-k
// hit when fewer than k classes score strictly higher than the true one, so
// ties resolve in the label's favor and k >= num_classes always hits.
template <typename T>
std::pair<std::size_t, std::size_t> topk_hits(const Tensor<T>& logits,
                                              const std::vector<std::size_t>& labels,
                                              std::size_t k) {
  require_rank(logits.shape(), 2, "topk_hits");
  if (labels.size() != logits.size(0))
    throw UsageError("topk_hits: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(logits.size(0)));
  const std::size_t classes = logits.size(1);
  std::size_t hit1 = 0, hitk = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes)
      throw UsageError("topk_hits: label " + std::to_string(labels[i]) + " out of range [0, " +
                       std::to_string(classes) + ")");
    const T* row = logits.data() + i * classes;
    const T own = row[labels[i]];
    std::size_t above = 0;
    for (std::size_t c = 0; c < classes; ++c)
      if (row[c] > own) ++above;
    if (above == 0) ++hit1;
    if (above < k) ++hitk;
  }
  return {hit1, hitk};
}

// Streams a dataset through `logits_of` (a callable mapping an image batch in
// [0,1] to logits) without shuffling or augmentation and accumulates top-1/5
// error and the mean classification loss.
template <typename T, typename Forward>
EvalResult evaluate_with(const ImageDataset& ds, std::size_t batch_size, Forward&& logits_of) {
  if (ds.size() == 0) throw UsageError("evaluate_with: dataset is empty");
  BatchOptions opts;
  opts.batch_size = batch_size;
  opts.shuffle = false;
  opts.augment = false;
  BatchStream<T> stream(ds, opts);
  stream.start_epoch(0);
  std::size_t hit1 = 0, hit5 = 0, seen = 0;
  double loss_sum = 0.0;
  while (auto batch = stream.next()) {
    Tensor<T> logits = logits_of(batch->images);
    const std::size_t rows = batch->labels.size();
    loss_sum += double(cl_loss(logits, batch->labels).item()) * double(rows);
    auto [h1, h5] = topk_hits(logits, batch->labels, 5);
    hit1 += h1;
    hit5 += h5;
    seen += rows;
  }
  EvalResult r;
  r.count = seen;
  r.top1_error = 1.0 - double(hit1) / double(seen);
  r.top5_error = 1.0 - double(hit5) / double(seen);
  r.mean_loss = loss_sum / double(seen);
  return r;
}

namespace detail {
template <typename T>
std::array<T, 3> stats_mean(const DatasetStats& s) {
  return {T(s.mean[0]), T(s.mean[1]), T(s.mean[2])};
}
template <typename T>
std::array<T, 3> stats_std(const DatasetStats& s) {
  return {T(s.stddev[0]), T(s.stddev[1]), T(s.stddev[2])};
}
}  // namespace detail

// Full-resolution evaluation of a classifier graph.
template <typename T>
EvalResult evaluate_graph(const NetworkGraph<T>& net, const ImageDataset& ds,
                          const DatasetStats& stats, std::size_t batch_size = 128) {
  const auto mean = detail::stats_mean<T>(stats);
  const auto sd = detail::stats_std<T>(stats);
  return evaluate_with<T>(ds, batch_size, [&](const Tensor<T>& x) {
    return net.forward(standardize(x, mean, sd), RunMode::eval);
  });
}

// How full-resolution images become thumbnails at inference time.
enum class DownscaleMode { learned, bicubic };

// Produces the student's input batch in image space.
template <typename T>
Tensor<T> make_thumbnails(const ThumbNetBundle<T>& bundle, const Tensor<T>& x, DownscaleMode mode,
                          RunMode run) {
  if (mode == DownscaleMode::learned) return bundle.downscaler.forward(x, run);
  return bicubic_downscale_batch(x, bundle.factor);
}

// Thumbnail-resolution evaluation of the bundle's student.
template <typename T>
EvalResult evaluate_student(const ThumbNetBundle<T>& bundle, const ImageDataset& ds,
                            DownscaleMode mode, std::size_t batch_size = 128) {
  return evaluate_with<T>(ds, batch_size, [&](const Tensor<T>& x) {
    Tensor<T> y = make_thumbnails(bundle, x, mode, RunMode::eval);
    return bundle.student.forward(standardize(y, bundle.channel_mean, bundle.channel_std),
                                  RunMode::eval);
  });
}

}  // namespace thumbnet
