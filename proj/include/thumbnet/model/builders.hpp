#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/rng.hpp"
#include "thumbnet/model/graph.hpp"

namespace thumbnet {

// Student with the teacher's exact layer list on thumbnail-sized input.
// Channel counts and parameter shapes match the teacher's, except the first
// fully-connected layer whose input width is recomputed from the inferred
// flattened extent. Parameters are freshly initialized from `rng`.
template <typename T>
NetworkGraph<T> build_student_from_teacher(const NetworkGraph<T>& teacher, std::size_t f,
                                           Rng& rng) {
  if (f != 2 && f != 4)
    throw GeometryError("student factor " + std::to_string(f) +
                        " unsupported: the decoder needs an integral number of doubling "
                        "layers, so f must be 2 or 4");
  const Shape& in = teacher.input_shape();
  if (in[1] % f != 0 || in[2] % f != 0)
    throw GeometryError("teacher input " + in.str() + " is not divisible by factor " +
                        std::to_string(f));
  const Shape thumb{in[0], in[1] / f, in[2] / f};

  NetworkGraph<T> student(teacher.name() + "-student", thumb);
  std::vector<Shape> shapes;
  shapes.reserve(teacher.layer_count());
  bool fc_resized = false;
  for (std::size_t i = 0; i < teacher.layer_count(); ++i) {
    GraphNode n = teacher.node(i);
    const Shape& nin = n.input ? shapes[*n.input] : (i == 0 ? thumb : shapes[i - 1]);
    if (n.spec.kind == LayerKind::fullyconnected && !fc_resized) {
      n.spec.in_channels = nin.numel();
      fc_resized = true;
    }
    if (n.spec.kind == LayerKind::add && !(nin == shapes[*n.skip]))
      throw GeometryError("add layer '" + n.name + "' joins mismatched shapes " + nin.str() +
                          " and " + shapes[*n.skip].str() + " at thumbnail resolution");
    shapes.push_back(infer_layer_output(n.spec, nin));
    student.add_layer(n.name, n.spec, n.input, n.skip);
  }
  if (teacher.has_split()) student.set_split_index(teacher.split_index());
  student.init_params(rng);
  return student;
}

// The learned downscaler: two 5x5 convolutions with batchnorm and ReLU,
// channels 3 -> hidden -> 3. The stride pair is (2,1) for f=2 and (2,2) for
// f=4; striding starts in layer 1 to shrink early.
template <typename T>
NetworkGraph<T> build_downscaler(std::size_t f, std::size_t hidden_channels, Rng& rng,
                                 std::size_t h = 32, std::size_t w = 32) {
  if (f != 2 && f != 4)
    throw UsageError("downscale factor must be 2 or 4, got " + std::to_string(f));
  if (hidden_channels <= 3)
    throw UsageError("downscaler hidden channels must exceed the 3 input channels, got " +
                     std::to_string(hidden_channels));
  const std::size_t s1 = 2, s2 = f == 4 ? 2 : 1;

  NetworkGraph<T> g("downscaler-f" + std::to_string(f), Shape{3, h, w});
  LayerSpec c1{LayerKind::conv, 3, hidden_channels, 5, s1, 2, false};
  LayerSpec c2{LayerKind::conv, hidden_channels, 3, 5, s2, 2, false};
  LayerSpec bn1{LayerKind::batchnorm, hidden_channels, hidden_channels};
  LayerSpec bn2{LayerKind::batchnorm, 3, 3};
  g.add_layer("dconv1", c1);
  g.add_layer("dbn1", bn1);
  g.add_layer("drelu1", LayerSpec{LayerKind::relu});
  g.add_layer("dconv2", c2);
  g.add_layer("dbn2", bn2);
  g.add_layer("drelu2", LayerSpec{LayerKind::relu});
  g.init_params(rng);
  return g;
}

// Parameter-free downscaler substitute: average pooling with window f, or the
// identity for f=1. Lets the pipeline run with a fixed non-learned E.
template <typename T>
NetworkGraph<T> build_avgpool_downscaler(std::size_t f, std::size_t h = 32,
                                         std::size_t w = 32) {
  if (f == 0) throw UsageError("downscale factor must be positive");
  NetworkGraph<T> g("avgpool-downscaler-f" + std::to_string(f), Shape{3, h, w});
  g.add_layer("dpool", LayerSpec{LayerKind::avgpool, 0, 0, f, f});
  return g;
}

// Decoder lifting the student tap feature to the teacher tap geometry:
// log2(ratio) channel-preserving deconvolutions (kernel 4, stride 2, padding
// 1, each an exact doubling), ReLU between layers but not after the last so
// decoded features can go negative.
template <typename T>
NetworkGraph<T> build_decoder(const Shape& student_feat, const Shape& teacher_feat, Rng& rng) {
  require_rank(student_feat, 3, "build_decoder student feature");
  require_rank(teacher_feat, 3, "build_decoder teacher feature");
  if (student_feat[0] != teacher_feat[0])
    throw GeometryError("decoder cannot change channel count: student " + student_feat.str() +
                        " vs teacher " + teacher_feat.str());
  std::size_t k = 0;
  for (std::size_t d = 0; d < 2; ++d) {
    const std::size_t s = student_feat[1 + d], t = teacher_feat[1 + d];
    if (s == 0 || t == 0 || t % s != 0)
      throw GeometryError("teacher feature " + teacher_feat.str() +
                          " is not a power-of-two upscale of " + student_feat.str());
    std::size_t ratio = t / s, steps = 0;
    while (ratio > 1) {
      if (ratio % 2 != 0)
        throw GeometryError("teacher feature " + teacher_feat.str() +
                            " is not a power-of-two upscale of " + student_feat.str());
      ratio /= 2;
      ++steps;
    }
    if (d == 0)
      k = steps;
    else if (steps != k)
      throw GeometryError("anisotropic upscale " + student_feat.str() + " -> " +
                          teacher_feat.str() + " is unsupported");
  }
  if (k < 1)
    throw GeometryError("decoder needs at least one doubling: student " + student_feat.str() +
                        " already matches teacher " + teacher_feat.str());

  const std::size_t c = student_feat[0];
  NetworkGraph<T> g("decoder", student_feat);
  for (std::size_t j = 0; j < k; ++j) {
    g.add_layer("up" + std::to_string(j + 1),
                LayerSpec{LayerKind::deconv, c, c, 4, 2, 1, true});
    if (j + 1 < k) g.add_layer("uprelu" + std::to_string(j + 1), LayerSpec{LayerKind::relu});
  }
  g.init_params(rng);
  return g;
}

}  // namespace thumbnet
