#pragma once

#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/shape.hpp"
#include "thumbnet/layers/spec.hpp"
#include "thumbnet/model/graph.hpp"

namespace thumbnet {

// Counting conventions. One FLOP means one multiply-accumulate unless
// macs_as_two_flops doubles it. Elementwise layers (batchnorm, relu, pool,
// add, softmax) cost zero by default; count_elementwise charges one op per
// output element (two for batchnorm's scale and shift).
struct CostOptions {
  bool count_elementwise = false;
  bool macs_as_two_flops = false;
  std::size_t bytes_per_element = 4;
};

struct CostRow {
  std::string name;
  std::string kind;
  std::uint64_t in_channels = 0;   // n_{l-1}
  std::uint64_t kernel = 0;        // s_l
  std::uint64_t out_channels = 0;  // n_l
  std::uint64_t out_extent = 0;    // m_l (output height; width folded into macs)
  std::uint64_t macs = 0;
  std::uint64_t feature_bytes = 0;
  std::uint64_t params = 0;
};

struct CostReport {
  std::string graph_name;
  Shape input{0, 0, 0};
  std::size_t batch = 0;
  std::vector<CostRow> rows;
  std::uint64_t total_macs = 0;
  std::uint64_t total_feature_bytes = 0;
  std::uint64_t total_params = 0;
  std::uint64_t image_storage_bytes = 0;
};

// Bytes to hold the batch as 8-bit images: batch * C * H * W.
inline std::uint64_t image_storage_bytes(const Shape& input_chw, std::size_t batch) {
  require_rank(input_chw, 3, "image_storage_bytes");
  return std::uint64_t(batch) * input_chw.numel();
}

namespace detail {

inline std::uint64_t param_count_of(const LayerSpec& s) {
  const ParamShapes shapes = infer_param_shapes(s);  // unused slots have numel 0
  return std::uint64_t(shapes.weights.numel()) + shapes.bias.numel() + 2 * shapes.bn.numel();
}

}  // namespace detail

// Static cost walk: per layer, multiply-accumulates (convolution work
// n_{l-1} * s^2 * n_l * oh * ow per image, deconvolution charged at its input
// spatial size, fully-connected in*out), output feature bytes, and parameter
// count. Shape inference failures propagate as geometry errors.
template <typename T>
CostReport count_flops(const NetworkGraph<T>& graph, const Shape& input_chw, std::size_t batch,
                       const CostOptions& opts = {}) {
  require_rank(input_chw, 3, "count_flops input");
  const std::vector<Shape> shapes = graph.infer_shapes(input_chw);

  CostReport rep;
  rep.graph_name = graph.name();
  rep.input = input_chw;
  rep.batch = batch;
  rep.image_storage_bytes = image_storage_bytes(input_chw, batch);

  for (std::size_t i = 0; i < graph.layer_count(); ++i) {
    const GraphNode& n = graph.node(i);
    const LayerSpec& s = n.spec;
    const Shape& in = n.input ? shapes[*n.input] : (i == 0 ? input_chw : shapes[i - 1]);
    const Shape& out = shapes[i];

    CostRow row;
    row.name = n.name;
    row.kind = layer_kind_name(s.kind);
    row.feature_bytes = std::uint64_t(batch) * out.numel() * opts.bytes_per_element;
    row.params = detail::param_count_of(s);

    const std::uint64_t out_hw = out.rank() == 3 ? std::uint64_t(out[1]) * out[2] : 1;
    switch (s.kind) {
      case LayerKind::conv:
        row.in_channels = s.in_channels;
        row.kernel = s.kernel;
        row.out_channels = s.out_channels;
        row.out_extent = out[1];
        row.macs = std::uint64_t(batch) * s.in_channels * s.kernel * s.kernel *
                   s.out_channels * out_hw;
        break;
      case LayerKind::deconv:
        row.in_channels = s.in_channels;
        row.kernel = s.kernel;
        row.out_channels = s.out_channels;
        row.out_extent = out[1];
        row.macs = std::uint64_t(batch) * s.in_channels * s.kernel * s.kernel *
                   s.out_channels * std::uint64_t(in[1]) * in[2];
        break;
      case LayerKind::fullyconnected:
        row.in_channels = s.in_channels;
        row.kernel = 1;
        row.out_channels = s.out_channels;
        row.out_extent = 1;
        row.macs = std::uint64_t(batch) * s.in_channels * s.out_channels;
        break;
      case LayerKind::batchnorm:
        row.out_channels = out[0];
        if (opts.count_elementwise) row.macs = 2 * std::uint64_t(batch) * out.numel();
        break;
      case LayerKind::relu:
      case LayerKind::maxpool:
      case LayerKind::avgpool:
      case LayerKind::globalavgpool:
      case LayerKind::softmax:
      case LayerKind::add:
        if (opts.count_elementwise) row.macs = std::uint64_t(batch) * out.numel();
        break;
    }
    if (opts.macs_as_two_flops) row.macs *= 2;

    rep.total_macs += row.macs;
    rep.total_feature_bytes += row.feature_bytes;
    rep.total_params += row.params;
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

template <typename T>
std::uint64_t count_feature_memory(const NetworkGraph<T>& graph, const Shape& input_chw,
                                   std::size_t batch, std::size_t bytes_per_element) {
  CostOptions opts;
  opts.bytes_per_element = bytes_per_element;
  return count_flops(graph, input_chw, batch, opts).total_feature_bytes;
}

template <typename T>
std::uint64_t count_params(const NetworkGraph<T>& graph) {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < graph.layer_count(); ++i)
    n += detail::param_count_of(graph.node(i).spec);
  return n;
}

struct SpeedupReport {
  CostReport original;
  CostReport thumbnet;
  double flops_ratio = 0.0;
  double memory_ratio = 0.0;
  double params_ratio = 0.0;
  double storage_ratio = 0.0;
};

// Reduction ratios original/thumbnet. `thumb_extras` adds further graphs to
// the thumbnail side (each analyzed at its own input shape), e.g. the
// downscaler, or the decoder for training-time accounting; the headline
// table compares the bare classification networks.
template <typename T>
SpeedupReport speedup_report(
    const NetworkGraph<T>& original, const Shape& original_input, const NetworkGraph<T>& thumb,
    const Shape& thumb_input, std::size_t batch, const CostOptions& opts = {},
    const std::vector<std::pair<const NetworkGraph<T>*, Shape>>& thumb_extras = {}) {
  SpeedupReport rep;
  rep.original = count_flops(original, original_input, batch, opts);
  rep.thumbnet = count_flops(thumb, thumb_input, batch, opts);
  for (const auto& [g, in] : thumb_extras) {
    CostReport extra = count_flops(*g, in, batch, opts);
    for (CostRow& row : extra.rows) {
      row.name = extra.graph_name + "." + row.name;
      rep.thumbnet.rows.push_back(std::move(row));
    }
    rep.thumbnet.total_macs += extra.total_macs;
    rep.thumbnet.total_feature_bytes += extra.total_feature_bytes;
    rep.thumbnet.total_params += extra.total_params;
  }

  auto ratio = [](std::uint64_t a, std::uint64_t b) {
    if (b == 0) throw UsageError("speedup_report: thumbnail-side total is zero");
    return double(a) / double(b);
  };
  rep.flops_ratio = ratio(rep.original.total_macs, rep.thumbnet.total_macs);
  rep.memory_ratio = ratio(rep.original.total_feature_bytes, rep.thumbnet.total_feature_bytes);
  rep.params_ratio = ratio(rep.original.total_params, rep.thumbnet.total_params);
  rep.storage_ratio =
      ratio(rep.original.image_storage_bytes, rep.thumbnet.image_storage_bytes);
  return rep;
}

inline std::string format_cost_report(const CostReport& rep, const std::string& format) {
  std::ostringstream out;
  if (format == "csv") {
    out << "layer,kind,n_prev,kernel,n_out,m,macs,feature_bytes,params\n";
    for (const CostRow& r : rep.rows)
      out << r.name << "," << r.kind << "," << r.in_channels << "," << r.kernel << ","
          << r.out_channels << "," << r.out_extent << "," << r.macs << "," << r.feature_bytes
          << "," << r.params << "\n";
    out << "total,,,,,," << rep.total_macs << "," << rep.total_feature_bytes << ","
        << rep.total_params << "\n";
    return out.str();
  }
  if (format != "text")
    throw UsageError("unknown report format '" + format + "' (use text or csv)");

  out << "graph " << rep.graph_name << "  input " << rep.input.str() << "  batch "
      << rep.batch << "\n";
  out << std::left << std::setw(16) << "layer" << std::setw(10) << "kind" << std::right
      << std::setw(8) << "n_prev" << std::setw(8) << "kernel" << std::setw(8) << "n_out"
      << std::setw(8) << "m" << std::setw(16) << "macs" << std::setw(16) << "feat_bytes"
      << std::setw(12) << "params" << "\n";
  for (const CostRow& r : rep.rows)
    out << std::left << std::setw(16) << r.name << std::setw(10) << r.kind << std::right
        << std::setw(8) << r.in_channels << std::setw(8) << r.kernel << std::setw(8)
        << r.out_channels << std::setw(8) << r.out_extent << std::setw(16) << r.macs
        << std::setw(16) << r.feature_bytes << std::setw(12) << r.params << "\n";
  out << "total macs " << rep.total_macs << "  feature bytes " << rep.total_feature_bytes
      << "  params " << rep.total_params << "  image storage bytes "
      << rep.image_storage_bytes << "\n";
  return out.str();
}

inline std::string format_speedup_report(const SpeedupReport& rep, const std::string& format) {
  std::ostringstream out;
  std::ostringstream fr, mr, pr, sr;
  fr << std::fixed << std::setprecision(2) << rep.flops_ratio;
  mr << std::fixed << std::setprecision(2) << rep.memory_ratio;
  pr << std::fixed << std::setprecision(2) << rep.params_ratio;
  sr << std::fixed << std::setprecision(2) << rep.storage_ratio;
  if (format == "csv") {
    out << "graph,macs,feature_bytes,params,image_storage_bytes\n";
    out << rep.original.graph_name << "," << rep.original.total_macs << ","
        << rep.original.total_feature_bytes << "," << rep.original.total_params << ","
        << rep.original.image_storage_bytes << "\n";
    out << rep.thumbnet.graph_name << "," << rep.thumbnet.total_macs << ","
        << rep.thumbnet.total_feature_bytes << "," << rep.thumbnet.total_params << ","
        << rep.thumbnet.image_storage_bytes << "\n";
    out << "ratio," << fr.str() << "," << mr.str() << "," << pr.str() << "," << sr.str()
        << "\n";
    return out.str();
  }
  if (format != "text")
    throw UsageError("unknown report format '" + format + "' (use text or csv)");
  out << format_cost_report(rep.original, "text") << "\n"
      << format_cost_report(rep.thumbnet, "text") << "\n";
  out << "reduction ratios: flops " << fr.str() << "x  feature memory " << mr.str()
      << "x  params " << pr.str() << "x  image storage " << sr.str() << "x\n";
  return out.str();
}

}  // namespace thumbnet
