#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "thumbnet/model/graph.hpp"

namespace thumbnet {

namespace detail {

// conv(3x3 by default, no bias) + batchnorm + relu, returning the relu index.
template <typename T>
std::size_t add_cbr(NetworkGraph<T>& g, const std::string& base, std::size_t in_ch,
                    std::size_t out_ch, std::size_t stride, std::size_t kernel = 3,
                    std::size_t pad = 1) {
  g.add_layer(base + "c", LayerSpec{LayerKind::conv, in_ch, out_ch, kernel, stride, pad, false});
  g.add_layer(base + "n", LayerSpec{LayerKind::batchnorm, out_ch, out_ch});
  return g.add_layer(base + "r", LayerSpec{LayerKind::relu});
}

// Basic residual block: two 3x3 convs with batchnorm; a 1x1 projection on the
// skip path when the stride or the channel count changes.
template <typename T>
std::size_t add_basic_block(NetworkGraph<T>& g, const std::string& base, std::size_t from,
                            std::size_t in_ch, std::size_t out_ch, std::size_t stride) {
  g.add_layer(base + "c1", LayerSpec{LayerKind::conv, in_ch, out_ch, 3, stride, 1, false},
              from);
  g.add_layer(base + "n1", LayerSpec{LayerKind::batchnorm, out_ch, out_ch});
  g.add_layer(base + "r1", LayerSpec{LayerKind::relu});
  g.add_layer(base + "c2", LayerSpec{LayerKind::conv, out_ch, out_ch, 3, 1, 1, false});
  const std::size_t main = g.add_layer(base + "n2", LayerSpec{LayerKind::batchnorm, out_ch, out_ch});
  std::size_t skip = from;
  if (stride != 1 || in_ch != out_ch) {
    g.add_layer(base + "p", LayerSpec{LayerKind::conv, in_ch, out_ch, 1, stride, 0, false},
                from);
    skip = g.add_layer(base + "pn", LayerSpec{LayerKind::batchnorm, out_ch, out_ch});
  }
  g.add_layer(base + "add", LayerSpec{LayerKind::add}, skip, main);
  return g.add_layer(base + "r2", LayerSpec{LayerKind::relu});
}

// Bottleneck residual block (1x1 reduce, 3x3, 1x1 expand by 4).
template <typename T>
std::size_t add_bottleneck_block(NetworkGraph<T>& g, const std::string& base, std::size_t from,
                                 std::size_t in_ch, std::size_t width, std::size_t stride) {
  const std::size_t out_ch = width * 4;
  g.add_layer(base + "c1", LayerSpec{LayerKind::conv, in_ch, width, 1, 1, 0, false}, from);
  g.add_layer(base + "n1", LayerSpec{LayerKind::batchnorm, width, width});
  g.add_layer(base + "r1", LayerSpec{LayerKind::relu});
  g.add_layer(base + "c2", LayerSpec{LayerKind::conv, width, width, 3, stride, 1, false});
  g.add_layer(base + "n2", LayerSpec{LayerKind::batchnorm, width, width});
  g.add_layer(base + "r2", LayerSpec{LayerKind::relu});
  g.add_layer(base + "c3", LayerSpec{LayerKind::conv, width, out_ch, 1, 1, 0, false});
  const std::size_t main = g.add_layer(base + "n3", LayerSpec{LayerKind::batchnorm, out_ch, out_ch});
  std::size_t skip = from;
  if (stride != 1 || in_ch != out_ch) {
    g.add_layer(base + "p", LayerSpec{LayerKind::conv, in_ch, out_ch, 1, stride, 0, false},
                from);
    skip = g.add_layer(base + "pn", LayerSpec{LayerKind::batchnorm, out_ch, out_ch});
  }
  g.add_layer(base + "add", LayerSpec{LayerKind::add}, skip, main);
  return g.add_layer(base + "r3", LayerSpec{LayerKind::relu});
}

}  // namespace detail

// Desk-scale residual backbone: stem conv plus one basic block per stage at
// widths 16/32/64 (strides 1/2/2), global average pooling and a linear head.
// The split sits after the second downsampling stage.
template <typename T>
NetworkGraph<T> make_resnet_mini(std::size_t classes = 10, std::size_t hw = 32) {
  NetworkGraph<T> g("resnet-mini", Shape{3, hw, hw});
  std::size_t cur = detail::add_cbr(g, "stem", 3, 16, 1);
  cur = detail::add_basic_block(g, "b1", cur, 16, 16, 1);
  cur = detail::add_basic_block(g, "b2", cur, 16, 32, 2);
  cur = detail::add_basic_block(g, "b3", cur, 32, 64, 2);
  const std::size_t split = cur + 1;
  g.add_layer("gap", LayerSpec{LayerKind::globalavgpool});
  g.add_layer("fc", LayerSpec{LayerKind::fullyconnected, 64, classes});
  g.set_split_index(split);
  return g;
}

// Desk-scale plain backbone: three conv stacks with max pooling, then two
// fully-connected layers. The first FC width depends on the input resolution,
// exercising the student resize rule. The split sits after the second pool.
template <typename T>
NetworkGraph<T> make_vgg_mini(std::size_t classes = 10, std::size_t hw = 32) {
  NetworkGraph<T> g("vgg-mini", Shape{3, hw, hw});
  const std::size_t widths[3] = {32, 64, 128};
  std::size_t in_ch = 3;
  for (std::size_t stage = 0; stage < 3; ++stage) {
    const std::string s = "s" + std::to_string(stage + 1);
    detail::add_cbr(g, s + "a", in_ch, widths[stage], 1);
    detail::add_cbr(g, s + "b", widths[stage], widths[stage], 1);
    g.add_layer(s + "pool", LayerSpec{LayerKind::maxpool, 0, 0, 2, 2});
    in_ch = widths[stage];
  }
  const std::size_t flat = 128 * (hw / 8) * (hw / 8);
  g.add_layer("fc1", LayerSpec{LayerKind::fullyconnected, flat, 256});
  g.add_layer("fc1r", LayerSpec{LayerKind::relu});
  g.add_layer("fc2", LayerSpec{LayerKind::fullyconnected, 256, classes});
  g.set_split_index(g.index_of("s2pool") + 1);
  return g;
}

// Classic 11-layer plain backbone (analysis-scale): conv widths
// 64/128/256x2/512x2/512x2 with five pools, then 4096-4096-classes.
template <typename T>
NetworkGraph<T> make_vgg11(std::size_t classes = 100, std::size_t hw = 224) {
  NetworkGraph<T> g("vgg11", Shape{3, hw, hw});
  const std::vector<std::vector<std::size_t>> stages = {
      {64}, {128}, {256, 256}, {512, 512}, {512, 512}};
  std::size_t in_ch = 3, idx = 0;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    for (std::size_t j = 0; j < stages[s].size(); ++j) {
      const std::string base = "c" + std::to_string(++idx);
      g.add_layer(base,
                  LayerSpec{LayerKind::conv, in_ch, stages[s][j], 3, 1, 1, true});
      g.add_layer(base + "r", LayerSpec{LayerKind::relu});
      in_ch = stages[s][j];
    }
    g.add_layer("pool" + std::to_string(s + 1), LayerSpec{LayerKind::maxpool, 0, 0, 2, 2});
  }
  const std::size_t flat = 512 * (hw / 32) * (hw / 32);
  g.add_layer("fc1", LayerSpec{LayerKind::fullyconnected, flat, 4096});
  g.add_layer("fc1r", LayerSpec{LayerKind::relu});
  g.add_layer("fc2", LayerSpec{LayerKind::fullyconnected, 4096, 4096});
  g.add_layer("fc2r", LayerSpec{LayerKind::relu});
  g.add_layer("fc3", LayerSpec{LayerKind::fullyconnected, 4096, classes});
  g.set_split_index(g.index_of("pool2") + 1);
  return g;
}

namespace detail {

template <typename T>
NetworkGraph<T> make_resnet_basic(const std::string& name, const std::size_t (&blocks)[4],
                                  std::size_t classes, std::size_t hw) {
  NetworkGraph<T> g(name, Shape{3, hw, hw});
  add_cbr(g, "stem", 3, 64, 2, 7, 3);
  std::size_t cur = g.add_layer("stempool", LayerSpec{LayerKind::maxpool, 0, 0, 3, 2, 1});
  const std::size_t widths[4] = {64, 128, 256, 512};
  std::size_t in_ch = 64, split = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < blocks[s]; ++b) {
      const std::string base = "s" + std::to_string(s + 1) + "b" + std::to_string(b + 1);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      cur = add_basic_block(g, base, cur, in_ch, widths[s], stride);
      in_ch = widths[s];
    }
    if (s == 1) split = cur + 1;
  }
  g.add_layer("gap", LayerSpec{LayerKind::globalavgpool});
  g.add_layer("fc", LayerSpec{LayerKind::fullyconnected, 512, classes});
  g.set_split_index(split);
  return g;
}

}  // namespace detail

template <typename T>
NetworkGraph<T> make_resnet18(std::size_t classes = 100, std::size_t hw = 224) {
  const std::size_t blocks[4] = {2, 2, 2, 2};
  return detail::make_resnet_basic<T>("resnet18", blocks, classes, hw);
}

template <typename T>
NetworkGraph<T> make_resnet34(std::size_t classes = 100, std::size_t hw = 224) {
  const std::size_t blocks[4] = {3, 4, 6, 3};
  return detail::make_resnet_basic<T>("resnet34", blocks, classes, hw);
}

template <typename T>
NetworkGraph<T> make_resnet50(std::size_t classes = 100, std::size_t hw = 224) {
  NetworkGraph<T> g("resnet50", Shape{3, hw, hw});
  detail::add_cbr(g, "stem", 3, 64, 2, 7, 3);
  std::size_t cur = g.add_layer("stempool", LayerSpec{LayerKind::maxpool, 0, 0, 3, 2, 1});
  const std::size_t widths[4] = {64, 128, 256, 512};
  const std::size_t blocks[4] = {3, 4, 6, 3};
  std::size_t in_ch = 64, split = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < blocks[s]; ++b) {
      const std::string base = "s" + std::to_string(s + 1) + "b" + std::to_string(b + 1);
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      cur = detail::add_bottleneck_block(g, base, cur, in_ch, widths[s], stride);
      in_ch = widths[s] * 4;
    }
    if (s == 1) split = cur + 1;
  }
  g.add_layer("gap", LayerSpec{LayerKind::globalavgpool});
  g.add_layer("fc", LayerSpec{LayerKind::fullyconnected, 2048, classes});
  g.set_split_index(split);
  return g;
}

}  // namespace thumbnet
