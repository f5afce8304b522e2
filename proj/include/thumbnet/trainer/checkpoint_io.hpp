#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include <json.hpp>

#include "thumbnet/core/binio.hpp"
#include "thumbnet/core/error.hpp"
#include "thumbnet/dataio/checkpoint.hpp"
#include "thumbnet/dataio/dataset.hpp"
#include "thumbnet/losses/hyperparams.hpp"
#include "thumbnet/model/graph.hpp"
#include "thumbnet/model/graph_text.hpp"
#include "thumbnet/model/pipeline.hpp"

namespace thumbnet {

inline nlohmann::json hyperparams_to_json(const Hyperparams& hp) {
  return nlohmann::json{{"alpha", hp.alpha},
                        {"beta", hp.beta},
                        {"theta", hp.theta},
                        {"tau", hp.tau},
                        {"lambda_mm", hp.lambda_mm},
                        {"base_lr", hp.base_lr},
                        {"momentum", hp.momentum},
                        {"finetune_lr_factor", hp.finetune_lr_factor}};
}

inline Hyperparams hyperparams_from_json(const nlohmann::json& j) {
  Hyperparams hp;
  hp.alpha = j.value("alpha", hp.alpha);
  hp.beta = j.value("beta", hp.beta);
  hp.theta = j.value("theta", hp.theta);
  hp.tau = j.value("tau", hp.tau);
  hp.lambda_mm = j.value("lambda_mm", hp.lambda_mm);
  hp.base_lr = j.value("base_lr", hp.base_lr);
  hp.momentum = j.value("momentum", hp.momentum);
  hp.finetune_lr_factor = j.value("finetune_lr_factor", hp.finetune_lr_factor);
  return hp;
}

// Stores every named tensor of a graph under `prefix.`.
template <typename T>
void put_graph_tensors(Checkpoint& ck, const std::string& prefix, NetworkGraph<T>& g) {
  for (auto& [name, t] : g.named_tensors()) ck.put_tensor(prefix + "." + name, *t);
}

// Restores every named tensor of a graph from `prefix.`; missing names raise
// a usage error and shape drift raises a geometry error.
template <typename T>
void load_graph_tensors(const Checkpoint& ck, const std::string& prefix, NetworkGraph<T>& g) {
  g.allocate_params();
  for (auto& [name, t] : g.named_tensors()) {
    const std::string key = prefix + "." + name;
    Tensor<T> v = ck.tensor<T>(key);
    if (!(v.shape() == t->shape()))
      throw GeometryError("checkpoint tensor '" + key + "' has shape " + v.shape().str() +
                          " but the graph expects " + t->shape().str());
    *t = std::move(v);
  }
}

// Order-dependent digest over parameter names and raw values; equal digests
// mean bit-identical weights.
template <typename T>
std::uint64_t graph_checksum(NetworkGraph<T>& g) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto& [name, t] : g.named_tensors()) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t->data(), t->numel() * sizeof(T), h);
  }
  return h;
}

// Packs a standalone classifier (architecture text, dataset stats, weights)
// into a checkpoint.
template <typename T>
Checkpoint classifier_checkpoint(NetworkGraph<T>& net, const DatasetStats& stats,
                                 const nlohmann::json& progress = nlohmann::json::object()) {
  Checkpoint ck;
  nlohmann::json meta;
  meta["kind"] = "classifier";
  meta["graph"] = graph_to_text(net);
  meta["channel_mean"] = stats.mean;
  meta["channel_std"] = stats.stddev;
  meta["progress"] = progress;
  ck.meta_json = meta.dump(2);
  put_graph_tensors(ck, "net", net);
  return ck;
}

template <typename T>
std::pair<NetworkGraph<T>, DatasetStats> classifier_from_checkpoint(const Checkpoint& ck) {
  nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  if (meta.value("kind", "") != "classifier")
    throw DataFormatError("checkpoint kind '" + meta.value("kind", std::string("?")) +
                          "' is not a classifier");
  NetworkGraph<T> net = parse_graph_text<T>(meta.at("graph").get<std::string>());
  load_graph_tensors(ck, "net", net);
  DatasetStats stats;
  for (std::size_t c = 0; c < 3; ++c) {
    stats.mean[c] = meta.at("channel_mean").at(c).get<double>();
    stats.stddev[c] = meta.at("channel_std").at(c).get<double>();
  }
  return {std::move(net), stats};
}

// Packs the whole four-graph bundle plus normalization constants.
template <typename T>
Checkpoint bundle_checkpoint(ThumbNetBundle<T>& b,
                             const nlohmann::json& progress = nlohmann::json::object()) {
  Checkpoint ck;
  nlohmann::json meta;
  meta["kind"] = "thumbnet_bundle";
  meta["factor"] = b.factor;
  meta["channel_mean"] = b.channel_mean;
  meta["channel_std"] = b.channel_std;
  meta["graphs"] = {{"teacher", graph_to_text(b.teacher)},
                    {"student", graph_to_text(b.student)},
                    {"downscaler", graph_to_text(b.downscaler)},
                    {"decoder", graph_to_text(b.decoder)}};
  meta["progress"] = progress;
  ck.meta_json = meta.dump(2);
  put_graph_tensors(ck, "teacher", b.teacher);
  put_graph_tensors(ck, "student", b.student);
  put_graph_tensors(ck, "downscaler", b.downscaler);
  put_graph_tensors(ck, "decoder", b.decoder);
  return ck;
}

template <typename T>
ThumbNetBundle<T> bundle_from_checkpoint(const Checkpoint& ck) {
  nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  if (meta.value("kind", "") != "thumbnet_bundle")
    throw DataFormatError("checkpoint kind '" + meta.value("kind", std::string("?")) +
                          "' is not a thumbnet bundle");
  ThumbNetBundle<T> b;
  const nlohmann::json& graphs = meta.at("graphs");
  b.teacher = parse_graph_text<T>(graphs.at("teacher").get<std::string>());
  b.student = parse_graph_text<T>(graphs.at("student").get<std::string>());
  b.downscaler = parse_graph_text<T>(graphs.at("downscaler").get<std::string>());
  b.decoder = parse_graph_text<T>(graphs.at("decoder").get<std::string>());
  b.factor = meta.at("factor").get<std::size_t>();
  for (std::size_t c = 0; c < 3; ++c) {
    b.channel_mean[c] = T(meta.at("channel_mean").at(c).get<double>());
    b.channel_std[c] = T(meta.at("channel_std").at(c).get<double>());
  }
  load_graph_tensors(ck, "teacher", b.teacher);
  load_graph_tensors(ck, "student", b.student);
  load_graph_tensors(ck, "downscaler", b.downscaler);
  load_graph_tensors(ck, "decoder", b.decoder);
  b.teacher.set_frozen(true);
  return b;
}

}  // namespace thumbnet
