#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "thumbnet/core/error.hpp"
#include "thumbnet/model/graph.hpp"

namespace thumbnet {

namespace detail {

inline std::size_t parse_count(const std::string& v, const std::string& key, int line_no) {
  try {
    std::size_t pos = 0;
    const long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw DataFormatError("graph text line " + std::to_string(line_no) + ": key '" + key +
                          "' needs a non-negative integer, got '" + v + "'");
  }
}

}  // namespace detail

// Parses the declarative graph description format (see docs/graph-format.md).
// Parameters are left uninitialized; call init_params or load a checkpoint.
template <typename T>
NetworkGraph<T> parse_graph_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;

  std::string graph_name;
  std::optional<Shape> input_shape;
  std::optional<std::size_t> split;
  NetworkGraph<T> graph;
  bool graph_started = false;

  auto fail = [&](const std::string& msg) -> void {
    throw DataFormatError("graph text line " + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word) || word[0] == '#') continue;

    if (word == "graph") {
      if (!graph_name.empty()) fail("duplicate 'graph' line");
      if (!(ls >> graph_name)) fail("'graph' needs a name");
    } else if (word == "input") {
      if (input_shape) fail("duplicate 'input' line");
      std::size_t c = 0, h = 0, w = 0;
      if (!(ls >> c >> h >> w)) fail("'input' needs three extents: channels height width");
      input_shape = Shape{c, h, w};
    } else if (word == "split") {
      std::size_t s = 0;
      if (!(ls >> s)) fail("'split' needs an index");
      split = s;
    } else if (word == "layer") {
      if (graph_name.empty() || !input_shape)
        fail("'layer' before 'graph' and 'input' lines");
      if (!graph_started) {
        graph = NetworkGraph<T>(graph_name, *input_shape);
        graph_started = true;
      }
      std::string lname;
      if (!(ls >> lname)) fail("'layer' needs a name");

      std::map<std::string, std::string> kv;
      std::string tok;
      while (ls >> tok) {
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 >= tok.size())
          fail("expected key=value, got '" + tok + "'");
        if (!kv.emplace(tok.substr(0, eq), tok.substr(eq + 1)).second)
          fail("duplicate key '" + tok.substr(0, eq) + "'");
      }

      auto take = [&](const char* key) -> std::optional<std::string> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
      };
      auto take_count = [&](const char* key, std::size_t fallback) {
        auto v = take(key);
        return v ? detail::parse_count(*v, key, line_no) : fallback;
      };

      auto kind_str = take("kind");
      if (!kind_str) fail("layer '" + lname + "' has no kind");
      LayerSpec spec;
      try {
        spec.kind = layer_kind_from_name(*kind_str);
      } catch (const UsageError& e) {
        fail(e.what());
      }

      if (spec.kind == LayerKind::batchnorm) {
        const std::size_t ch = take_count("channels", 0);
        if (ch == 0) fail("batchnorm '" + lname + "' needs channels=<n>");
        spec.in_channels = spec.out_channels = ch;
      } else {
        spec.in_channels = take_count("in", 0);
        spec.out_channels = take_count("out", 0);
      }
      spec.kernel = take_count("kernel", 1);
      spec.stride = take_count("stride", 1);
      spec.padding = take_count("pad", 0);
      spec.has_bias = take_count("bias", 1) != 0;

      std::optional<std::size_t> input_idx, skip_idx;
      if (auto from = take("from")) {
        try {
          input_idx = graph.index_of(*from);
        } catch (const UsageError& e) {
          fail(e.what());
        }
      }
      if (auto skip = take("skip")) {
        try {
          skip_idx = graph.index_of(*skip);
        } catch (const UsageError& e) {
          fail(e.what());
        }
      }
      if (!kv.empty()) fail("unknown key '" + kv.begin()->first + "' on layer '" + lname + "'");

      try {
        graph.add_layer(lname, spec, input_idx, skip_idx);
      } catch (const UsageError& e) {
        fail(e.what());
      }
    } else {
      fail("unknown directive '" + word + "'");
    }
  }

  if (graph_name.empty()) throw DataFormatError("graph text has no 'graph' line");
  if (!input_shape) throw DataFormatError("graph text has no 'input' line");
  if (!graph_started) throw DataFormatError("graph '" + graph_name + "' has no layers");
  if (split) {
    try {
      graph.set_split_index(*split);
    } catch (const UsageError& e) {
      throw DataFormatError(std::string("graph text: ") + e.what());
    }
  }
  return graph;
}

template <typename T>
std::string graph_to_text(const NetworkGraph<T>& g) {
  std::ostringstream out;
  out << "graph " << g.name() << "\n";
  out << "input " << g.input_shape()[0] << " " << g.input_shape()[1] << " "
      << g.input_shape()[2] << "\n";
  if (g.has_split()) out << "split " << g.split_index() << "\n";
  for (std::size_t i = 0; i < g.layer_count(); ++i) {
    const GraphNode& n = g.node(i);
    const LayerSpec& s = n.spec;
    out << "layer " << n.name << " kind=" << layer_kind_name(s.kind);
    switch (s.kind) {
      case LayerKind::conv:
      case LayerKind::deconv:
        out << " in=" << s.in_channels << " out=" << s.out_channels << " kernel=" << s.kernel
            << " stride=" << s.stride << " pad=" << s.padding << " bias=" << (s.has_bias ? 1 : 0);
        break;
      case LayerKind::fullyconnected:
        out << " in=" << s.in_channels << " out=" << s.out_channels
            << " bias=" << (s.has_bias ? 1 : 0);
        break;
      case LayerKind::batchnorm:
        out << " channels=" << s.out_channels;
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        out << " kernel=" << s.kernel << " stride=" << s.stride;
        if (s.padding != 0) out << " pad=" << s.padding;
        break;
      case LayerKind::relu:
      case LayerKind::globalavgpool:
      case LayerKind::softmax:
      case LayerKind::add:
        break;
    }
    if (n.input) out << " from=" << g.node(*n.input).name;
    if (n.skip) out << " skip=" << g.node(*n.skip).name;
    out << "\n";
  }
  return out.str();
}

}  // namespace thumbnet
