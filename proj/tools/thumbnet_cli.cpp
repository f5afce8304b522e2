#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "thumbnet/cli/config.hpp"
#include "thumbnet/complexity/analyzer.hpp"
#include "thumbnet/core/parallel.hpp"
#include "thumbnet/dataio/ppm.hpp"
#include "thumbnet/model/builders.hpp"
#include "thumbnet/model/pipeline.hpp"
#include "thumbnet/trainer/evaluate.hpp"
#include "thumbnet/trainer/trainer.hpp"

namespace tn = thumbnet;
namespace fs = std::filesystem;
using T = double;

namespace {

// Every flag lands in an optional so file settings survive unless the flag
// was actually given: defaults < config file < flags.
struct Overrides {
  std::optional<std::string> config, data, data_format, split, val_split, images, labels,
      val_images, val_labels, backbone, out, tag, format, teacher, checkpoint, mode, method;
  std::optional<std::size_t> classes, edge, factor, hidden, epochs, pretrain_epochs, batch,
      eval_batch, threads, count, analyze_batch;
  std::optional<std::uint64_t> seed;
  std::optional<bool> augment, include_downscaler, moment_matching;
  std::optional<double> lr, alpha, beta, theta, tau, lambda_mm, momentum, finetune_lr_factor;
};

void apply_overrides(const Overrides& o, tn::RunConfig& cfg) {
  if (o.data) cfg.dataset.path = *o.data;
  if (o.data_format) cfg.dataset.format = *o.data_format;
  if (o.split) cfg.dataset.split = *o.split;
  if (o.val_split) cfg.dataset.val_split = *o.val_split;
  if (o.images) cfg.dataset.images = *o.images;
  if (o.labels) cfg.dataset.labels = *o.labels;
  if (o.val_images) cfg.dataset.val_images = *o.val_images;
  if (o.val_labels) cfg.dataset.val_labels = *o.val_labels;
  if (o.backbone) cfg.backbone.name = *o.backbone;
  if (o.classes) cfg.backbone.classes = *o.classes;
  if (o.edge) cfg.backbone.edge = *o.edge;
  if (o.factor) cfg.factor = *o.factor;
  if (o.hidden) cfg.hidden_channels = *o.hidden;
  if (o.method) {
    if (o.method->size() != 1)
      throw tn::UsageError("--method takes a single letter, got '" + *o.method + "'");
    cfg.method = (*o.method)[0];
  }
  if (o.moment_matching) cfg.moment_matching = *o.moment_matching;
  if (o.lr) cfg.hp.base_lr = *o.lr;
  if (o.alpha) cfg.hp.alpha = *o.alpha;
  if (o.beta) cfg.hp.beta = *o.beta;
  if (o.theta) cfg.hp.theta = *o.theta;
  if (o.tau) cfg.hp.tau = *o.tau;
  if (o.lambda_mm) cfg.hp.lambda_mm = *o.lambda_mm;
  if (o.momentum) cfg.hp.momentum = *o.momentum;
  if (o.finetune_lr_factor) cfg.hp.finetune_lr_factor = *o.finetune_lr_factor;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.pretrain_epochs) cfg.train.pretrain_epochs = *o.pretrain_epochs;
  if (o.batch) cfg.train.batch_size = *o.batch;
  if (o.eval_batch) cfg.train.eval_batch_size = *o.eval_batch;
  if (o.augment) cfg.train.augment = *o.augment;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.threads) cfg.threads = *o.threads;
  if (o.out) cfg.train.out_dir = *o.out;
  if (o.tag) cfg.train.tag = *o.tag;
  if (o.format) cfg.format = *o.format;
  if (o.teacher) cfg.teacher = *o.teacher;
  if (o.checkpoint) cfg.checkpoint = *o.checkpoint;
  if (o.mode) cfg.mode = *o.mode;
  if (o.count) cfg.count = *o.count;
  if (o.analyze_batch) cfg.analyze_batch = *o.analyze_batch;
  if (o.include_downscaler) cfg.include_downscaler = *o.include_downscaler;
}

tn::RunConfig resolve_config(const Overrides& o) {
  tn::RunConfig cfg;
  if (o.config) tn::load_config_file(*o.config, cfg);
  apply_overrides(o, cfg);
  if (cfg.format != "text" && cfg.format != "csv")
    throw tn::UsageError("unknown output format '" + cfg.format + "'; expected text or csv");
  tn::set_global_threads(cfg.threads);
  return cfg;
}

void require_out_dir(const tn::RunConfig& cfg) {
  if (cfg.train.out_dir.empty())
    throw tn::UsageError("an output directory is required; pass --out <dir>");
}

std::string print_eval(const tn::EvalResult& r, const std::string& format) {
  std::ostringstream out;
  out.precision(6);
  if (format == "csv") {
    out << "top1_error,top5_error,mean_loss,samples\n"
        << r.top1_error << "," << r.top5_error << "," << r.mean_loss << "," << r.count << "\n";
  } else {
    out << "top-1 error: " << r.top1_error << "\n"
        << "top-5 error: " << r.top5_error << "\n"
        << "mean loss:   " << r.mean_loss << "\n"
        << "samples:     " << r.count << "\n";
  }
  return out.str();
}

int cmd_train_teacher(const tn::RunConfig& cfg) {
  require_out_dir(cfg);
  tn::ImageDataset train = tn::load_split(cfg.dataset, cfg.dataset.split);
  tn::ImageDataset val = tn::load_split(cfg.dataset, cfg.dataset.val_split);
  if (train.num_classes() != cfg.backbone.classes)
    throw tn::UsageError("backbone expects " + std::to_string(cfg.backbone.classes) +
                         " classes but the dataset has " + std::to_string(train.num_classes()));
  tn::DatasetStats stats = train.compute_stats();

  tn::Rng rng(cfg.train.seed);
  tn::NetworkGraph<T> net = tn::make_backbone<T>(cfg.backbone);
  net.init_params(rng);

  std::string final_path;
  tn::StageReport rep =
      tn::train_teacher(net, train, val, stats, cfg.hp, cfg.train, &final_path);
  const std::string metrics =
      (fs::path(cfg.train.out_dir) / (cfg.train.tag + "_metrics.csv")).string();
  tn::write_metrics_csv(metrics, {&rep});

  std::cout << "teacher checkpoint: " << final_path << "\n"
            << "metrics log:        " << metrics << "\n";
  if (!rep.epochs.empty()) {
    const tn::EpochRecord& e = rep.epochs.back();
    std::cout << "final val top-1 error: " << e.val_top1 << "\n"
              << "final val top-5 error: " << e.val_top5 << "\n";
  }
  return 0;
}

int cmd_train_thumbnet(const tn::RunConfig& cfg) {
  require_out_dir(cfg);
  if (cfg.method == 'a')
    throw tn::UsageError("method a is the full-resolution teacher; use the train-teacher command");
  tn::AblationConfig ablation = tn::ablation_for_method(cfg.method);
  ablation.use_moment_matching = cfg.moment_matching;
  ablation.validate();

  tn::ImageDataset train = tn::load_split(cfg.dataset, cfg.dataset.split);
  tn::ImageDataset val = tn::load_split(cfg.dataset, cfg.dataset.val_split);

  const bool needs_teacher = ablation.use_distillation || ablation.use_feature_mapping;
  tn::NetworkGraph<T> teacher;
  tn::DatasetStats stats;
  if (!cfg.teacher.empty()) {
    auto [net, st] = tn::classifier_from_checkpoint<T>(tn::load_checkpoint(cfg.teacher));
    teacher = std::move(net);
    stats = st;
  } else {
    if (needs_teacher)
      throw tn::UsageError(std::string("method ") + cfg.method +
                           " distills from a trained network; pass --teacher <checkpoint>");
    tn::Rng rng(cfg.train.seed + 1);
    teacher = tn::make_backbone<T>(cfg.backbone);
    teacher.init_params(rng);
    stats = train.compute_stats();
  }
  const tn::Shape& tin = teacher.input_shape();
  if (tin[1] != train.height() || tin[2] != train.width())
    throw tn::UsageError("teacher input " + tin.str() + " does not match dataset images " +
                         std::to_string(train.height()) + "x" + std::to_string(train.width()));
  if (train.num_classes() != teacher.infer_shapes().back().numel())
    throw tn::UsageError("teacher head emits " +
                         std::to_string(teacher.infer_shapes().back().numel()) +
                         " classes but the dataset has " + std::to_string(train.num_classes()));

  tn::Rng rng(cfg.train.seed);
  tn::TrainState<T> state;
  state.bundle = tn::make_thumbnet_bundle<T>(std::move(teacher), cfg.factor,
                                             cfg.hidden_channels, rng);
  for (std::size_t c = 0; c < 3; ++c) {
    state.bundle.channel_mean[c] = T(stats.mean[c]);
    state.bundle.channel_std[c] = T(stats.stddev[c]);
  }
  state.hp = cfg.hp;
  state.ablation = ablation;

  tn::TrainRunResult<T> run = tn::train_thumbnet(state, train, val, cfg.train);
  std::cout << "method:             " << cfg.method << "\n"
            << "final checkpoint:   " << run.final_checkpoint << "\n"
            << "metrics log:        " << run.metrics_csv << "\n"
            << "final val top-1 error: " << run.final_eval.top1_error << "\n"
            << "final val top-5 error: " << run.final_eval.top5_error << "\n";
  return 0;
}

int cmd_eval(const tn::RunConfig& cfg) {
  if (cfg.checkpoint.empty())
    throw tn::UsageError("a checkpoint is required; pass --checkpoint <file>");
  tn::ImageDataset ds = tn::load_split(cfg.dataset, cfg.dataset.split);
  tn::Checkpoint ck = tn::load_checkpoint(cfg.checkpoint);
  nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  const std::string kind = meta.value("kind", "");

  tn::EvalResult r;
  if (kind == "classifier") {
    auto [net, stats] = tn::classifier_from_checkpoint<T>(ck);
    r = tn::evaluate_graph(net, ds, stats, cfg.train.eval_batch_size);
  } else if (kind == "thumbnet_bundle") {
    tn::ThumbNetBundle<T> bundle = tn::bundle_from_checkpoint<T>(ck);
    std::string mode = cfg.mode;
    if (mode.empty())
      mode = meta.contains("progress") ? meta.at("progress").value("downscale", "learned")
                                       : "learned";
    if (mode != "learned" && mode != "bicubic")
      throw tn::UsageError("unknown downscale mode '" + mode + "'; expected learned or bicubic");
    r = tn::evaluate_student(bundle, ds,
                             mode == "learned" ? tn::DownscaleMode::learned
                                               : tn::DownscaleMode::bicubic,
                             cfg.train.eval_batch_size);
  } else {
    throw tn::DataFormatError("checkpoint kind '" + kind + "' cannot be evaluated");
  }
  std::cout << print_eval(r, cfg.format);
  return 0;
}

int cmd_analyze(const tn::RunConfig& cfg) {
  tn::NetworkGraph<T> original = tn::make_backbone<T>(cfg.backbone);
  const tn::Shape in{3, cfg.backbone.edge, cfg.backbone.edge};
  tn::Rng rng(cfg.train.seed);
  tn::CostOptions opts;

  if (cfg.factor == 1) {
    tn::NetworkGraph<T> same = original.structural_clone(original.name() + "-thumb");
    tn::SpeedupReport rep =
        tn::speedup_report(original, in, same, in, cfg.analyze_batch, opts);
    std::cout << tn::format_speedup_report(rep, cfg.format);
    return 0;
  }

  tn::NetworkGraph<T> student = tn::build_student_from_teacher(original, cfg.factor, rng);
  const tn::Shape thumb_in{3, cfg.backbone.edge / cfg.factor, cfg.backbone.edge / cfg.factor};
  std::vector<std::pair<const tn::NetworkGraph<T>*, tn::Shape>> extras;
  tn::NetworkGraph<T> downscaler;
  if (cfg.include_downscaler) {
    downscaler = tn::build_downscaler<T>(cfg.factor, cfg.hidden_channels, rng,
                                         cfg.backbone.edge, cfg.backbone.edge);
    extras.emplace_back(&downscaler, in);
  }
  tn::SpeedupReport rep =
      tn::speedup_report(original, in, student, thumb_in, cfg.analyze_batch, opts, extras);
  std::cout << tn::format_speedup_report(rep, cfg.format);
  return 0;
}

int cmd_downscale(const tn::RunConfig& cfg) {
  require_out_dir(cfg);
  if (cfg.checkpoint.empty())
    throw tn::UsageError("a trained bundle checkpoint is required; pass --checkpoint <file>");
  tn::Checkpoint ck = tn::load_checkpoint(cfg.checkpoint);
  nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  if (meta.value("kind", "") != "thumbnet_bundle")
    throw tn::UsageError("checkpoint " + cfg.checkpoint +
                         " has no downscaler (kind '" + meta.value("kind", "?") + "')");
  tn::ThumbNetBundle<T> bundle = tn::bundle_from_checkpoint<T>(ck);
  tn::ImageDataset ds = tn::load_split(cfg.dataset, cfg.dataset.split);
  tn::export_thumbnails(bundle.downscaler, ds, cfg.count, cfg.train.out_dir, &std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ThumbNet: train and analyze thumbnail-input classifiers"};
  app.require_subcommand(1);
  Overrides o;

  auto add_shared = [&o](CLI::App* sc) {
    sc->add_option("--config", o.config, "JSON config file (flags override it)");
    sc->add_option("--seed", o.seed, "RNG seed for initialization and batching");
    sc->add_option("--threads", o.threads, "intra-op worker threads");
    sc->add_option("--out", o.out, "output directory for all artifacts");
    sc->add_option("--tag", o.tag, "artifact name prefix inside --out");
    sc->add_option("--format", o.format, "report format: text or csv");
  };
  auto add_dataset = [&o](CLI::App* sc) {
    sc->add_option("--data", o.data, "dataset path (directory for cifar10)");
    sc->add_option("--data-format", o.data_format, "dataset format: cifar10 or idx");
    sc->add_option("--split", o.split, "split to train or evaluate on");
    sc->add_option("--val-split", o.val_split, "split used for validation");
    sc->add_option("--images", o.images, "idx image file");
    sc->add_option("--labels", o.labels, "idx label file");
    sc->add_option("--val-images", o.val_images, "idx validation image file");
    sc->add_option("--val-labels", o.val_labels, "idx validation label file");
  };
  auto add_backbone = [&o](CLI::App* sc) {
    sc->add_option("--backbone", o.backbone,
                   "template: resnet-mini, vgg-mini, resnet18, vgg11");
    sc->add_option("--classes", o.classes, "number of classes");
    sc->add_option("--edge", o.edge, "square input edge in pixels");
  };
  auto add_training = [&o](CLI::App* sc) {
    sc->add_option("--epochs", o.epochs, "fine-tuning epoch budget");
    sc->add_option("--batch-size", o.batch, "training batch size");
    sc->add_option("--eval-batch-size", o.eval_batch, "evaluation batch size");
    sc->add_flag("--augment,!--no-augment", o.augment, "random crop shift and flip");
    sc->add_option("--lr", o.lr, "base learning rate");
    sc->add_option("--momentum", o.momentum, "SGD momentum");
    sc->add_option("--theta", o.theta, "weight decay strength");
  };

  CLI::App* tt = app.add_subcommand("train-teacher", "train a full-resolution classifier");
  add_shared(tt);
  add_dataset(tt);
  add_backbone(tt);
  add_training(tt);

  CLI::App* tn_cmd = app.add_subcommand("train-thumbnet", "run the two-stage thumbnail recipe");
  add_shared(tn_cmd);
  add_dataset(tn_cmd);
  add_backbone(tn_cmd);
  add_training(tn_cmd);
  tn_cmd->add_option("--method", o.method, "ablation row: b, c, d, e, or f");
  tn_cmd->add_option("--teacher", o.teacher, "trained classifier checkpoint");
  tn_cmd->add_option("--factor", o.factor, "downscale factor (2 or 4)");
  tn_cmd->add_option("--hidden-channels", o.hidden, "downscaler hidden width");
  tn_cmd->add_option("--pretrain-epochs", o.pretrain_epochs,
                     "stage-A epoch budget (0 derives epochs/4)");
  tn_cmd->add_flag("--moment-matching,!--no-moment-matching", o.moment_matching,
                   "keep or drop the moment-matching term");
  tn_cmd->add_option("--alpha", o.alpha, "feature-mapping weight");
  tn_cmd->add_option("--beta", o.beta, "distillation weight");
  tn_cmd->add_option("--tau", o.tau, "distillation temperature");
  tn_cmd->add_option("--lambda-mm", o.lambda_mm, "std weight inside the moment loss");
  tn_cmd->add_option("--finetune-lr-factor", o.finetune_lr_factor,
                     "lr multiplier for pretrained groups");

  CLI::App* ev = app.add_subcommand("eval", "report top-1/top-5 error of a checkpoint");
  add_shared(ev);
  add_dataset(ev);
  ev->add_option("--checkpoint", o.checkpoint, "checkpoint to evaluate");
  ev->add_option("--eval-batch-size", o.eval_batch, "evaluation batch size");
  ev->add_option("--mode", o.mode, "bundle thumbnail source: learned or bicubic");

  CLI::App* an = app.add_subcommand("analyze", "compare full-size and thumbnail network costs");
  add_shared(an);
  add_backbone(an);
  an->add_option("--factor", o.factor, "downscale factor (1 compares identical graphs)");
  an->add_option("--batch", o.analyze_batch, "batch size for the cost model");
  an->add_option("--hidden-channels", o.hidden, "downscaler hidden width");
  an->add_flag("--include-downscaler", o.include_downscaler,
               "charge the learned downscaler to the thumbnail side");

  CLI::App* ds = app.add_subcommand("downscale", "export learned thumbnails as PPM images");
  add_shared(ds);
  add_dataset(ds);
  ds->add_option("--checkpoint", o.checkpoint, "trained bundle checkpoint");
  ds->add_option("--count", o.count, "number of images to export (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const tn::RunConfig cfg = resolve_config(o);
    if (tt->parsed()) return cmd_train_teacher(cfg);
    if (tn_cmd->parsed()) return cmd_train_thumbnet(cfg);
    if (ev->parsed()) return cmd_eval(cfg);
    if (an->parsed()) return cmd_analyze(cfg);
    if (ds->parsed()) return cmd_downscale(cfg);
    throw tn::UsageError("no command selected");
  } catch (const tn::NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return 4;
  } catch (const tn::DataFormatError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const tn::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
