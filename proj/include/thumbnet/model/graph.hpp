#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/rng.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/layers/basic.hpp"
#include "thumbnet/layers/batchnorm.hpp"
#include "thumbnet/layers/conv.hpp"
#include "thumbnet/layers/spec.hpp"
#include "thumbnet/losses/param_set.hpp"

namespace thumbnet {

// Trainable state of one layer. Unused fields stay empty; batchnorm running
// statistics are state, not parameters, and are excluded from param sets.
template <typename T>
struct LayerParams {
  Tensor<T> weights;
  Tensor<T> bias;
  Tensor<T> bn_scale;
  Tensor<T> bn_shift;
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

// One node of a network. `input` names the node whose output feeds this one
// (empty: the previous node, or the graph input for node 0). `skip` names the
// second operand of an `add` node.
struct GraphNode {
  std::string name;
  LayerSpec spec;
  std::optional<std::size_t> input;
  std::optional<std::size_t> skip;
};

template <typename T>
struct TapResult {
  Tensor<T> output;
  Tensor<T> tap;
};

// An ordered layer list with explicit wiring, carried parameters, a declared
// canonical input shape (CHW), and the split index marking the boundary
// between the left and right segments (the feature-mimicking tap point).
template <typename T>
class NetworkGraph {
 public:
  NetworkGraph() = default;
  NetworkGraph(std::string name, Shape input_chw)
      : name_(std::move(name)), input_shape_(std::move(input_chw)) {
    require_rank(input_shape_, 3, "NetworkGraph input");
  }

  const std::string& name() const { return name_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t layer_count() const { return nodes_.size(); }
  const GraphNode& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  LayerParams<T>& params(std::size_t i) { return params_.at(i); }
  const LayerParams<T>& params(std::size_t i) const { return params_.at(i); }

  bool frozen() const { return frozen_; }
  void set_frozen(bool on) { frozen_ = on; }

  std::size_t split_index() const { return split_; }
  void set_split_index(std::size_t idx) {
    if (idx == 0 || idx >= nodes_.size())
      throw UsageError("split_index " + std::to_string(idx) +
                       " must leave both segments non-empty in a " +
                       std::to_string(nodes_.size()) + "-layer graph");
    split_ = idx;
  }
  bool has_split() const { return split_ != 0; }

  std::size_t add_layer(const std::string& name, const LayerSpec& spec,
                        std::optional<std::size_t> input = std::nullopt,
                        std::optional<std::size_t> skip = std::nullopt) {
    if (name.empty()) throw UsageError("layer name must not be empty");
    for (const GraphNode& n : nodes_)
      if (n.name == name) throw UsageError("duplicate layer name '" + name + "'");
    if (input && *input >= nodes_.size())
      throw UsageError("layer '" + name + "' wires input to a later node");
    if (skip && *skip >= nodes_.size())
      throw UsageError("layer '" + name + "' wires skip to a later node");
    if (spec.kind == LayerKind::add && !skip)
      throw UsageError("add layer '" + name + "' needs a skip operand");
    if (spec.kind != LayerKind::add && skip)
      throw UsageError("layer '" + name + "' is not an add but has a skip operand");
    nodes_.push_back(GraphNode{name, spec, input, skip});
    params_.push_back(LayerParams<T>{});
    return nodes_.size() - 1;
  }

  std::size_t index_of(const std::string& layer_name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].name == layer_name) return i;
    throw UsageError("no layer named '" + layer_name + "' in graph '" + name_ + "'");
  }

  // Batchless output shape (CHW or flat) of every node; throws GeometryError
  // if any layer rejects its input.
  std::vector<Shape> infer_shapes() const { return infer_shapes(input_shape_); }
  std::vector<Shape> infer_shapes(const Shape& input_chw) const {
    std::vector<Shape> out;
    out.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const GraphNode& n = nodes_[i];
      const Shape& in = n.input ? out[*n.input] : (i == 0 ? input_chw : out[i - 1]);
      if (n.spec.kind == LayerKind::add) {
        const Shape& other = out[*n.skip];
        if (!(in == other))
          throw GeometryError("add layer '" + n.name + "' joins mismatched shapes " + in.str() +
                              " and " + other.str());
      }
      out.push_back(infer_layer_output(n.spec, in));
    }
    return out;
  }

  // Sizes every parameter slot to its spec shape, leaving slots that already
  // hold data untouched. Weights and biases start at zero; batchnorm scales
  // and running variances start at one. Lets a parsed graph receive a
  // checkpoint without random initialization.
  void allocate_params() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const ParamShapes shapes = infer_param_shapes(nodes_[i].spec);
      LayerParams<T>& p = params_[i];
      if (shapes.weights.rank() > 0 && p.weights.empty()) p.weights = Tensor<T>(shapes.weights);
      if (shapes.bias.rank() > 0 && p.bias.empty()) p.bias = Tensor<T>(shapes.bias);
      if (shapes.bn.rank() > 0) {
        if (p.bn_scale.empty()) p.bn_scale = Tensor<T>::ones(shapes.bn);
        if (p.bn_shift.empty()) p.bn_shift = Tensor<T>(shapes.bn);
        if (p.running_mean.empty()) p.running_mean = Tensor<T>(shapes.bn);
        if (p.running_var.empty()) p.running_var = Tensor<T>::ones(shapes.bn);
      }
    }
  }

  // He-scaled normal weights for conv/deconv/fc, zero biases, identity
  // batchnorm with unit running variance. Deterministic in node order.
  void init_params(Rng& rng) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const LayerSpec& s = nodes_[i].spec;
      LayerParams<T>& p = params_[i];
      const ParamShapes shapes = infer_param_shapes(s);
      if (shapes.weights.rank() > 0) {
        p.weights = Tensor<T>(shapes.weights);
        const std::size_t fan_in = s.kind == LayerKind::fullyconnected
                                       ? s.in_channels
                                       : s.in_channels * s.kernel * s.kernel;
        rng.fill_normal(p.weights, T(0), std::sqrt(T(2) / T(fan_in)));
      }
      if (shapes.bias.rank() > 0) p.bias = Tensor<T>(shapes.bias);
      if (shapes.bn.rank() > 0) {
        p.bn_scale = Tensor<T>::ones(shapes.bn);
        p.bn_shift = Tensor<T>(shapes.bn);
        p.running_mean = Tensor<T>(shapes.bn);
        p.running_var = Tensor<T>::ones(shapes.bn);
      }
    }
  }

  Tensor<T> forward(const Tensor<T>& x, RunMode mode) const {
    return run(x, mode, nodes_.size()).output;
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return forward(x, RunMode::train); }

  // Runs the full graph and also returns the output of the last left-segment
  // node (the feature-mimicking tap).
  TapResult<T> forward_with_tap(const Tensor<T>& x, RunMode mode) const {
    if (!has_split())
      throw UsageError("graph '" + name_ + "' has no split index; set one before tapping");
    return run(x, mode, split_);
  }

  // Runs only the left segment, producing the tap feature.
  Tensor<T> forward_left(const Tensor<T>& x, RunMode mode) const {
    if (!has_split())
      throw UsageError("graph '" + name_ + "' has no split index; set one before tapping");
    return run(x, mode, split_, /*stop_at_split=*/true).tap;
  }

  // Trainable tensors of the node range [lo, hi), named `<layer>.<field>`.
  ParamSet<T> param_set(std::size_t lo, std::size_t hi) {
    if (hi > nodes_.size() || lo > hi)
      throw UsageError("param_set: bad range for graph '" + name_ + "'");
    ParamSet<T> set;
    for (std::size_t i = lo; i < hi; ++i) {
      LayerParams<T>& p = params_[i];
      const std::string& base = nodes_[i].name;
      if (!p.weights.empty())
        set.push_back({base + ".weights", &p.weights, ParamRole::weight});
      if (!p.bias.empty()) set.push_back({base + ".bias", &p.bias, ParamRole::bias});
      if (!p.bn_scale.empty())
        set.push_back({base + ".bn_scale", &p.bn_scale, ParamRole::bn_scale});
      if (!p.bn_shift.empty())
        set.push_back({base + ".bn_shift", &p.bn_shift, ParamRole::bn_shift});
    }
    return set;
  }
  ParamSet<T> param_set() { return param_set(0, nodes_.size()); }
  ParamSet<T> left_params() { return param_set(0, require_split()); }
  ParamSet<T> right_params() { return param_set(require_split(), nodes_.size()); }

  void watch_params(Tape<T>& tape) {
    if (frozen_)
      throw UsageError("graph '" + name_ + "' is frozen; its parameters cannot be watched");
    for (ParamEntry<T>& e : param_set()) tape.watch(*e.tensor);
  }

  // All persistent tensors (parameters plus batchnorm running statistics),
  // for checkpointing.
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<T>*>> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      LayerParams<T>& p = params_[i];
      const std::string& base = nodes_[i].name;
      auto push = [&](const char* field, Tensor<T>& t) {
        if (!t.empty()) out.emplace_back(base + "." + field, &t);
      };
      push("weights", p.weights);
      push("bias", p.bias);
      push("bn_scale", p.bn_scale);
      push("bn_shift", p.bn_shift);
      push("running_mean", p.running_mean);
      push("running_var", p.running_var);
    }
    return out;
  }

  // Same topology and split, fresh uninitialized parameters.
  NetworkGraph structural_clone(const std::string& new_name) const {
    NetworkGraph g(new_name, input_shape_);
    for (const GraphNode& n : nodes_) g.add_layer(n.name, n.spec, n.input, n.skip);
    g.split_ = split_;
    return g;
  }

 private:
  std::size_t require_split() const {
    if (!has_split()) throw UsageError("graph '" + name_ + "' has no split index");
    return split_;
  }

  TapResult<T> run(const Tensor<T>& x, RunMode mode, std::size_t tap_after,
                   bool stop_at_split = false) const {
    if (nodes_.empty()) throw UsageError("graph '" + name_ + "' has no layers");
    require_rank(x.shape(), 4, "graph input");
    if (x.size(1) != input_shape_[0])
      throw GeometryError("graph '" + name_ + "' expects " + std::to_string(input_shape_[0]) +
                          " input channels, got " + x.shape().str());
    if (frozen_) mode = RunMode::eval;

    const std::size_t stop = stop_at_split ? tap_after : nodes_.size();
    std::vector<Tensor<T>> outs(stop);
    TapResult<T> result;
    for (std::size_t i = 0; i < stop; ++i) {
      const GraphNode& n = nodes_[i];
      const Tensor<T>& in = n.input ? outs[*n.input] : (i == 0 ? x : outs[i - 1]);
      outs[i] = n.spec.kind == LayerKind::add ? residual_add(in, outs[*n.skip])
                                              : apply(i, in, mode);
      if (i + 1 == tap_after) result.tap = outs[i];
    }
    if (!stop_at_split) result.output = outs.back();
    return result;
  }

  Tensor<T> apply(std::size_t i, const Tensor<T>& in, RunMode mode) const {
    const GraphNode& n = nodes_[i];
    const LayerSpec& s = n.spec;
    // Parameter state is logically mutable during forward: train-mode
    // batchnorm refreshes its running statistics.
    LayerParams<T>& p = const_cast<LayerParams<T>&>(params_[i]);
    switch (s.kind) {
      case LayerKind::conv:
        return conv2d(in, p.weights, p.bias, s.stride, s.padding);
      case LayerKind::deconv:
        return deconv2d(in, p.weights, p.bias, s.stride, s.padding);
      case LayerKind::batchnorm:
        return batchnorm(in, p.bn_scale, p.bn_shift, p.running_mean, p.running_var, mode);
      case LayerKind::relu:
        return relu(in);
      case LayerKind::maxpool:
        return maxpool(in, s.kernel, s.stride, s.padding);
      case LayerKind::avgpool:
        return avgpool(in, s.kernel, s.stride);
      case LayerKind::globalavgpool:
        return global_avgpool(in);
      case LayerKind::fullyconnected:
        return fully_connected(in, p.weights, p.bias);
      case LayerKind::softmax:
        return softmax(in);
      case LayerKind::add:
        break;  // handled in run(), needs two operands
    }
    throw UsageError("unknown layer kind in graph '" + name_ + "'");
  }

  std::string name_;
  Shape input_shape_{0, 0, 0};
  std::vector<GraphNode> nodes_;
  std::vector<LayerParams<T>> params_;
  std::size_t split_ = 0;
  bool frozen_ = false;
};

}  // namespace thumbnet
