#pragma once

#include <array>
#include <cstddef>
#include <string>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/ops.hpp"
#include "thumbnet/model/builders.hpp"
#include "thumbnet/model/graph.hpp"

namespace thumbnet {

// The four networks plus the dataset standardization constants. Image batches
// travel in [0,1] pixel space; classification networks standardize internally
// so that the downscaler output and the moment loss stay in image space.
template <typename T>
struct ThumbNetBundle {
  NetworkGraph<T> teacher;
  NetworkGraph<T> student;
  NetworkGraph<T> downscaler;
  NetworkGraph<T> decoder;
  std::size_t factor = 2;
  std::array<T, 3> channel_mean{T(0), T(0), T(0)};
  std::array<T, 3> channel_std{T(1), T(1), T(1)};
};

template <typename T>
struct PipelineOut {
  Tensor<T> y;         // downscaled image batch, image space
  Tensor<T> logits_s;  // student logits on the thumbnail
  Tensor<T> logits_t;  // teacher logits on the original, gradient-free
  Tensor<T> feat_s;    // student tap feature (split point)
  Tensor<T> feat_t;    // teacher tap feature, gradient-free
};

// Channelwise standardization (x - mean) / std as a differentiable op chain;
// the constants carry no gradient.
template <typename T>
Tensor<T> standardize(const Tensor<T>& x, const std::array<T, 3>& mean,
                      const std::array<T, 3>& stddev) {
  require_rank(x.shape(), 4, "standardize");
  if (x.size(1) != 3)
    throw UsageError("standardize expects 3 channels, got " + x.shape().str());
  Tensor<T> m(Shape{1, 3, 1, 1});
  Tensor<T> inv(Shape{1, 3, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) {
    if (!(stddev[c] > T(0)))
      throw UsageError("standardize: channel std must be positive, got " +
                       std::to_string(double(stddev[c])) + " for channel " + std::to_string(c));
    m.mutable_data()[c] = mean[c];
    inv.mutable_data()[c] = T(1) / stddev[c];
  }
  return mul(sub(x, m), inv);
}

// One training-step evaluation of Fig. 2: thumbnail y = E(x); student logits
// and tap feature on the standardized thumbnail; teacher logits and tap
// feature on the standardized original, with the teacher always in eval mode
// and free of gradients.
template <typename T>
PipelineOut<T> forward_pipeline(const ThumbNetBundle<T>& bundle, const Tensor<T>& x,
                                RunMode mode) {
  require_rank(x.shape(), 4, "forward_pipeline input");
  const Shape& tin = bundle.teacher.input_shape();
  if (x.size(1) != tin[0] || x.size(2) != tin[1] || x.size(3) != tin[2])
    throw GeometryError("forward_pipeline: batch " + x.shape().str() +
                        " does not match teacher input " + tin.str());

  PipelineOut<T> out;
  out.y = bundle.downscaler.forward(x, mode);

  TapResult<T> t = bundle.teacher.forward_with_tap(
      standardize(x.detached(), bundle.channel_mean, bundle.channel_std), RunMode::eval);
  out.logits_t = t.output;
  out.feat_t = t.tap;

  TapResult<T> s = bundle.student.forward_with_tap(
      standardize(out.y, bundle.channel_mean, bundle.channel_std), mode);
  out.logits_s = s.output;
  out.feat_s = s.tap;
  return out;
}

// Assembles a full bundle around a split teacher: fresh student at thumbnail
// resolution, learned downscaler, and a decoder sized from the two tap
// features. The teacher is frozen.
template <typename T>
ThumbNetBundle<T> make_thumbnet_bundle(NetworkGraph<T> teacher, std::size_t f,
                                       std::size_t hidden_channels, Rng& rng) {
  if (!teacher.has_split())
    throw UsageError("make_thumbnet_bundle: teacher '" + teacher.name() +
                     "' needs a split index for the feature tap");
  ThumbNetBundle<T> b;
  b.factor = f;
  b.student = build_student_from_teacher(teacher, f, rng);
  b.downscaler = build_downscaler<T>(f, hidden_channels, rng, teacher.input_shape()[1],
                                     teacher.input_shape()[2]);
  const Shape feat_t = teacher.infer_shapes()[teacher.split_index() - 1];
  const Shape feat_s = b.student.infer_shapes()[b.student.split_index() - 1];
  b.decoder = build_decoder<T>(feat_s, feat_t, rng);
  b.teacher = std::move(teacher);
  b.teacher.set_frozen(true);
  return b;
}

}  // namespace thumbnet
