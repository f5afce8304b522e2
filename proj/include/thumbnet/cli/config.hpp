#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/rng.hpp"
#include "thumbnet/dataio/dataset.hpp"
#include "thumbnet/dataio/loaders.hpp"
#include "thumbnet/losses/hyperparams.hpp"
#include "thumbnet/model/graph.hpp"
#include "thumbnet/model/templates.hpp"
#include "thumbnet/trainer/checkpoint_io.hpp"
#include "thumbnet/trainer/trainer.hpp"

namespace thumbnet {

struct DatasetConfig {
  std::string format = "cifar10";  // cifar10 | idx
  std::string path;                // cifar10 directory
  std::string split = "train";
  std::string val_split = "test";
  std::string images;      // idx image file
  std::string labels;      // idx label file
  std::string val_images;  // idx validation image file
  std::string val_labels;  // idx validation label file
};

struct BackboneConfig {
  std::string name = "resnet-mini";  // resnet-mini | vgg-mini | resnet18 | vgg11
  std::size_t classes = 10;
  std::size_t edge = 32;
};

struct RunConfig {
  DatasetConfig dataset;
  BackboneConfig backbone;
  std::size_t factor = 2;
  std::size_t hidden_channels = 16;
  char method = 'f';
  bool moment_matching = true;
  Hyperparams hp;
  TrainOptions train;
  std::size_t threads = 1;
  std::string format = "text";  // text | csv
  std::string teacher;          // classifier checkpoint path
  std::string checkpoint;       // checkpoint to evaluate / export from
  std::string mode;             // eval downscale mode override: learned | bicubic
  std::size_t count = 0;        // thumbnails to export; 0 = all
  std::size_t analyze_batch = 1;
  bool include_downscaler = false;
};

namespace detail {

inline void require_known_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                               const std::string& where) {
  if (!j.is_object()) throw UsageError("config section '" + where + "' must be a JSON object");
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const std::string& k : known)
      if (item.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw UsageError("unknown config key '" + item.key() + "' in " + where);
  }
}

template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace detail

// Merges a JSON config document into `cfg`. Every key is validated so typos
// fail loudly instead of silently training with defaults.
inline void apply_config_json(const nlohmann::json& j, RunConfig& cfg) {
  detail::require_known_keys(
      j,
      {"dataset", "backbone", "factor", "hidden_channels", "method", "moment_matching",
       "hyperparams", "training", "seed", "threads", "out", "tag", "format", "teacher",
       "checkpoint", "mode", "count", "analyze_batch", "include_downscaler"},
      "the top level");

  if (j.contains("dataset")) {
    const nlohmann::json& d = j.at("dataset");
    detail::require_known_keys(
        d, {"format", "path", "split", "val_split", "images", "labels", "val_images", "val_labels"},
        "'dataset'");
    detail::read_key(d, "format", cfg.dataset.format);
    detail::read_key(d, "path", cfg.dataset.path);
    detail::read_key(d, "split", cfg.dataset.split);
    detail::read_key(d, "val_split", cfg.dataset.val_split);
    detail::read_key(d, "images", cfg.dataset.images);
    detail::read_key(d, "labels", cfg.dataset.labels);
    detail::read_key(d, "val_images", cfg.dataset.val_images);
    detail::read_key(d, "val_labels", cfg.dataset.val_labels);
  }
  if (j.contains("backbone")) {
    const nlohmann::json& b = j.at("backbone");
    detail::require_known_keys(b, {"name", "classes", "edge"}, "'backbone'");
    detail::read_key(b, "name", cfg.backbone.name);
    detail::read_key(b, "classes", cfg.backbone.classes);
    detail::read_key(b, "edge", cfg.backbone.edge);
  }
  detail::read_key(j, "factor", cfg.factor);
  detail::read_key(j, "hidden_channels", cfg.hidden_channels);
  if (j.contains("method")) {
    std::string m;
    detail::read_key(j, "method", m);
    if (m.size() != 1) throw UsageError("config key 'method' must be a single letter, got '" + m + "'");
    cfg.method = m[0];
  }
  detail::read_key(j, "moment_matching", cfg.moment_matching);
  if (j.contains("hyperparams")) {
    const nlohmann::json& h = j.at("hyperparams");
    detail::require_known_keys(h,
                               {"alpha", "beta", "theta", "tau", "lambda_mm", "base_lr",
                                "momentum", "finetune_lr_factor"},
                               "'hyperparams'");
    detail::read_key(h, "alpha", cfg.hp.alpha);
    detail::read_key(h, "beta", cfg.hp.beta);
    detail::read_key(h, "theta", cfg.hp.theta);
    detail::read_key(h, "tau", cfg.hp.tau);
    detail::read_key(h, "lambda_mm", cfg.hp.lambda_mm);
    detail::read_key(h, "base_lr", cfg.hp.base_lr);
    detail::read_key(h, "momentum", cfg.hp.momentum);
    detail::read_key(h, "finetune_lr_factor", cfg.hp.finetune_lr_factor);
  }
  if (j.contains("training")) {
    const nlohmann::json& t = j.at("training");
    detail::require_known_keys(
        t, {"epochs", "pretrain_epochs", "batch_size", "eval_batch_size", "augment"}, "'training'");
    detail::read_key(t, "epochs", cfg.train.epochs);
    detail::read_key(t, "pretrain_epochs", cfg.train.pretrain_epochs);
    detail::read_key(t, "batch_size", cfg.train.batch_size);
    detail::read_key(t, "eval_batch_size", cfg.train.eval_batch_size);
    detail::read_key(t, "augment", cfg.train.augment);
  }
  detail::read_key(j, "seed", cfg.train.seed);
  detail::read_key(j, "threads", cfg.threads);
  detail::read_key(j, "out", cfg.train.out_dir);
  detail::read_key(j, "tag", cfg.train.tag);
  detail::read_key(j, "format", cfg.format);
  detail::read_key(j, "teacher", cfg.teacher);
  detail::read_key(j, "checkpoint", cfg.checkpoint);
  detail::read_key(j, "mode", cfg.mode);
  detail::read_key(j, "count", cfg.count);
  detail::read_key(j, "analyze_batch", cfg.analyze_batch);
  detail::read_key(j, "include_downscaler", cfg.include_downscaler);
}

inline void load_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file " + path + " is not valid JSON: " + e.what());
  }
  apply_config_json(j, cfg);
}

// Builds the named backbone template; every template carries the split index
// used for the feature tap.
template <typename T>
NetworkGraph<T> make_backbone(const BackboneConfig& b) {
  if (b.name == "resnet-mini") return make_resnet_mini<T>(b.classes, b.edge);
  if (b.name == "vgg-mini") return make_vgg_mini<T>(b.classes, b.edge);
  if (b.name == "resnet18") return make_resnet18<T>(b.classes, b.edge);
  if (b.name == "vgg11") return make_vgg11<T>(b.classes, b.edge);
  throw UsageError("unknown backbone '" + b.name +
                   "'; expected resnet-mini, vgg-mini, resnet18, or vgg11");
}

// Loads the configured split ("train" picks the training files, anything else
// the corresponding evaluation files). Paths are checked up front so a wrong
// location fails as a configuration error, not a parse error.
inline ImageDataset load_split(const DatasetConfig& d, const std::string& split) {
  if (d.format == "cifar10") {
    if (d.path.empty()) throw UsageError("dataset path is required (set dataset.path or --data)");
    if (!std::filesystem::exists(d.path))
      throw UsageError("dataset path does not exist: " + d.path);
    return load_cifar10(d.path, split);
  }
  if (d.format == "idx") {
    const bool train = split == "train";
    const std::string& images = train ? d.images : d.val_images;
    const std::string& labels = train ? d.labels : d.val_labels;
    if (images.empty() || labels.empty())
      throw UsageError("idx datasets need dataset.images and dataset.labels for the " + split +
                       " split");
    for (const std::string& p : {images, labels})
      if (!std::filesystem::exists(p)) throw UsageError("dataset path does not exist: " + p);
    return load_idx(images, labels);
  }
  throw UsageError("unknown dataset format '" + d.format + "'; expected cifar10 or idx");
}

}  // namespace thumbnet
