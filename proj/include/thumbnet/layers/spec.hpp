#pragma once

#include <string>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/shape.hpp"

namespace thumbnet {

enum class LayerKind {
  conv,
  deconv,
  batchnorm,
  relu,
  maxpool,
  avgpool,
  globalavgpool,
  fullyconnected,
  softmax,
  add,  // elementwise sum of two graph nodes (residual join)
};

enum class RunMode { train, eval };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::deconv: return "deconv";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::avgpool: return "avgpool";
    case LayerKind::globalavgpool: return "globalavgpool";
    case LayerKind::fullyconnected: return "fullyconnected";
    case LayerKind::softmax: return "softmax";
    case LayerKind::add: return "add";
  }
  return "?";
}

inline LayerKind layer_kind_from_name(const std::string& s) {
  for (int k = 0; k <= static_cast<int>(LayerKind::add); ++k) {
    if (s == layer_kind_name(static_cast<LayerKind>(k))) return static_cast<LayerKind>(k);
  }
  throw UsageError("unknown layer kind '" + s + "'");
}

// Static description of one layer. For fullyconnected, in_channels and
// out_channels hold the input and output feature widths.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_channels = 0;   // n_{l-1}
  std::size_t out_channels = 0;  // n_l
  std::size_t kernel = 1;        // s_l
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool has_bias = true;

  bool operator==(const LayerSpec&) const = default;
};

namespace detail {

inline std::size_t conv_extent(std::size_t m, std::size_t k, std::size_t stride, std::size_t pad,
                               const char* what) {
  if (m + 2 * pad < k) {
    throw GeometryError(std::string(what) + ": spatial extent " + std::to_string(m) +
                        " smaller than kernel " + std::to_string(k) + " after padding");
  }
  return (m + 2 * pad - k) / stride + 1;
}

inline std::size_t deconv_extent(std::size_t m, std::size_t k, std::size_t stride,
                                 std::size_t pad, const char* what) {
  const std::size_t grown = (m - 1) * stride + k;
  if (grown < 2 * pad + 1) {
    throw GeometryError(std::string(what) + ": output extent below 1");
  }
  return grown - 2 * pad;
}

}  // namespace detail

// Output shape of one layer on a batch-free CHW input (rank 3, or rank 1
// once a fully-connected layer has flattened the features).
inline Shape infer_layer_output(const LayerSpec& spec, const Shape& in) {
  const char* what = layer_kind_name(spec.kind);
  auto want_chw = [&] {
    if (in.rank() != 3) {
      throw GeometryError(std::string(what) + ": expected CHW input, got " + in.str());
    }
  };
  switch (spec.kind) {
    case LayerKind::conv: {
      want_chw();
      if (in[0] != spec.in_channels) {
        throw GeometryError(std::string(what) + ": input has " + std::to_string(in[0]) +
                            " channels, layer expects " + std::to_string(spec.in_channels));
      }
      const std::size_t oh = detail::conv_extent(in[1], spec.kernel, spec.stride, spec.padding, what);
      const std::size_t ow = detail::conv_extent(in[2], spec.kernel, spec.stride, spec.padding, what);
      if (oh < 1 || ow < 1) throw GeometryError(std::string(what) + ": output extent below 1");
      return Shape{spec.out_channels, oh, ow};
    }
    case LayerKind::deconv: {
      want_chw();
      if (in[0] != spec.in_channels) {
        throw GeometryError(std::string(what) + ": input has " + std::to_string(in[0]) +
                            " channels, layer expects " + std::to_string(spec.in_channels));
      }
      const std::size_t oh =
          detail::deconv_extent(in[1], spec.kernel, spec.stride, spec.padding, what);
      const std::size_t ow =
          detail::deconv_extent(in[2], spec.kernel, spec.stride, spec.padding, what);
      return Shape{spec.out_channels, oh, ow};
    }
    case LayerKind::batchnorm: {
      want_chw();
      if (spec.in_channels && in[0] != spec.in_channels) {
        throw GeometryError("batchnorm: channel mismatch, input " + in.str());
      }
      return in;
    }
    case LayerKind::relu:
    case LayerKind::add:
      return in;
    case LayerKind::maxpool:
    case LayerKind::avgpool: {
      want_chw();
      const std::size_t oh = detail::conv_extent(in[1], spec.kernel, spec.stride, spec.padding, what);
      const std::size_t ow = detail::conv_extent(in[2], spec.kernel, spec.stride, spec.padding, what);
      return Shape{in[0], oh, ow};
    }
    case LayerKind::globalavgpool: {
      want_chw();
      return Shape{in[0], 1, 1};
    }
    case LayerKind::fullyconnected: {
      if (in.numel() != spec.in_channels) {
        throw GeometryError("fullyconnected: input " + in.str() + " flattens to " +
                            std::to_string(in.numel()) + " features, layer expects " +
                            std::to_string(spec.in_channels));
      }
      return Shape{spec.out_channels};
    }
    case LayerKind::softmax: {
      if (in.rank() != 1) {
        throw GeometryError("softmax: expected a logit vector, got " + in.str());
      }
      return in;
    }
  }
  throw UsageError("unhandled layer kind");
}

// Parameter tensor shapes implied by a LayerSpec. Empty shapes mean the
// slot is unused.
struct ParamShapes {
  Shape weights{0};
  Shape bias{0};
  Shape bn{0};  // scale/shift/running mean/running variance all share this
};

inline ParamShapes infer_param_shapes(const LayerSpec& spec) {
  ParamShapes ps;
  switch (spec.kind) {
    case LayerKind::conv:
      ps.weights = Shape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
      if (spec.has_bias) ps.bias = Shape{spec.out_channels};
      break;
    case LayerKind::deconv:
      ps.weights = Shape{spec.in_channels, spec.out_channels, spec.kernel, spec.kernel};
      if (spec.has_bias) ps.bias = Shape{spec.out_channels};
      break;
    case LayerKind::fullyconnected:
      ps.weights = Shape{spec.out_channels, spec.in_channels};
      if (spec.has_bias) ps.bias = Shape{spec.out_channels};
      break;
    case LayerKind::batchnorm:
      ps.bn = Shape{spec.in_channels};
      break;
    default:
      break;
  }
  return ps;
}

}  // namespace thumbnet
