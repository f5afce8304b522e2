#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "thumbnet/core/error.hpp"
#include "thumbnet/core/ops.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/core/tensor.hpp"
#include "thumbnet/dataio/bicubic.hpp"
#include "thumbnet/dataio/checkpoint.hpp"
#include "thumbnet/dataio/dataset.hpp"
#include "thumbnet/losses/hyperparams.hpp"
#include "thumbnet/losses/losses.hpp"
#include "thumbnet/model/graph.hpp"
#include "thumbnet/model/pipeline.hpp"
#include "thumbnet/trainer/checkpoint_io.hpp"
#include "thumbnet/trainer/evaluate.hpp"
#include "thumbnet/trainer/plateau.hpp"
#include "thumbnet/trainer/sgd.hpp"

namespace thumbnet {

// Which ingredients of the full recipe a run uses. The presets b..f toggle
// the learned (supervised) downscaler, distillation, and feature-mapping
// pre-training; moment matching can additionally be switched off to isolate
// its effect in configurations that would otherwise apply it.
struct AblationConfig {
  bool use_supervised_downscaler = true;
  bool use_distillation = true;
  bool use_feature_mapping = true;
  bool use_moment_matching = true;

  void validate() const {
    if (use_feature_mapping && !use_supervised_downscaler)
      throw UsageError("AblationConfig: feature-mapping pre-training requires the learned "
                       "downscaler");
  }
};

// Preset table: (b) bicubic baseline, (c) learned downscaler, (d) bicubic
// with distillation, (e) learned downscaler with distillation, (f) the full
// two-stage recipe. Method (a) is the full-resolution teacher and is trained
// by train_teacher instead.
inline AblationConfig ablation_for_method(char method) {
  switch (method) {
    case 'b': return {false, false, false, true};
    case 'c': return {true, false, false, true};
    case 'd': return {false, true, false, true};
    case 'e': return {true, true, false, true};
    case 'f': return {true, true, true, true};
    default:
      throw UsageError(std::string("unknown method '") + method + "'; expected one of b, c, d, e, f");
  }
}

inline DownscaleMode inference_mode(const AblationConfig& a) {
  return a.use_supervised_downscaler ? DownscaleMode::learned : DownscaleMode::bicubic;
}

struct TrainOptions {
  std::size_t epochs = 30;          // fine-tuning budget
  std::size_t pretrain_epochs = 0;  // 0 derives max(1, epochs / 4)
  std::size_t batch_size = 64;
  std::size_t eval_batch_size = 128;
  std::uint64_t seed = 0;
  bool augment = true;
  std::string out_dir;  // empty: no checkpoints or logs are written
  std::string tag = "run";
};

// Raw (unweighted) loss components observed at one optimization step; the
// total applies the configured weights.
struct StepRecord {
  std::string stage;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double mm = 0.0;
  double fm = 0.0;
  double cl = 0.0;
  double kd = 0.0;
  double reg = 0.0;
};

// Epoch summary: means of the step components, plus validation metrics when
// the stage has a labeled objective. Negative validation fields mean "not
// measured" and render as empty CSV cells.
struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;
  std::size_t steps_done = 0;
  double lr = 0.0;
  double loss = 0.0;
  double mm = 0.0;
  double fm = 0.0;
  double cl = 0.0;
  double kd = 0.0;
  double reg = 0.0;
  double val_loss = -1.0;
  double val_top1 = -1.0;
  double val_top5 = -1.0;
};

struct StageReport {
  std::string stage;
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
  std::string final_checkpoint;
};

template <typename T>
struct TrainState {
  ThumbNetBundle<T> bundle;
  Hyperparams hp;
  AblationConfig ablation;
  std::string last_checkpoint;
};

// One CSV row per epoch across all stages, in order.
inline void write_metrics_csv(const std::string& path, std::initializer_list<const StageReport*> stages) {
  std::ofstream out(path);
  if (!out) throw DataFormatError("cannot open metrics log for writing: " + path);
  out << "stage,epoch,step,lr,loss,mm,fm,cl,kd,reg,val_loss,val_top1,val_top5\n";
  out.precision(17);
  auto cell = [&out](double v) {
    out << ",";
    if (v >= 0.0) out << v;
  };
  for (const StageReport* s : stages) {
    if (s == nullptr) continue;
    for (const EpochRecord& e : s->epochs) {
      out << e.stage << "," << e.epoch << "," << e.steps_done << "," << e.lr << "," << e.loss
          << "," << e.mm << "," << e.fm << "," << e.cl << "," << e.kd << "," << e.reg;
      cell(e.val_loss);
      cell(e.val_top1);
      cell(e.val_top5);
      out << "\n";
    }
  }
  if (!out) throw DataFormatError("failed while writing metrics log: " + path);
}

namespace detail {

template <typename T>
ParamSet<T> concat_params(std::initializer_list<ParamSet<T>> sets) {
  ParamSet<T> all;
  for (const ParamSet<T>& s : sets) all.insert(all.end(), s.begin(), s.end());
  return all;
}

inline std::string run_file(const TrainOptions& o, const std::string& leaf) {
  return (std::filesystem::path(o.out_dir) / (o.tag + "_" + leaf)).string();
}

template <typename T>
std::string save_bundle_state(TrainState<T>& state, const TrainOptions& opts,
                              const std::string& leaf, const nlohmann::json& progress) {
  if (opts.out_dir.empty()) return std::string();
  std::filesystem::create_directories(opts.out_dir);
  const std::string path = run_file(opts, leaf + ".tnck");
  save_checkpoint(path, bundle_checkpoint(state.bundle, progress));
  state.last_checkpoint = path;
  return path;
}

inline std::string divergence_message(const std::string& stage, std::size_t epoch,
                                      std::size_t step, const char* cause,
                                      const std::string& last_checkpoint) {
  std::string msg = "training diverged during " + stage + " at epoch " + std::to_string(epoch) +
                    ", step " + std::to_string(step) + " (" + cause + ")";
  if (last_checkpoint.empty())
    msg += "; no checkpoint has been written yet";
  else
    msg += "; last good checkpoint: " + last_checkpoint;
  return msg;
}

inline void finish_epoch_means(EpochRecord& e, std::size_t steps) {
  if (steps == 0) return;
  const double n = double(steps);
  e.loss /= n;
  e.mm /= n;
  e.fm /= n;
  e.cl /= n;
  e.kd /= n;
  e.reg /= n;
}

}  // namespace detail

// Stage one of the recipe: fits the downscaler, the student's front half, and
// the decoder to the objective  MM + alpha * FM + (theta/2) * l2  with the
// teacher frozen. The learning rate starts at base_lr and decays on plateaus
// of the epoch-mean training objective (the stage has no labeled metric).
template <typename T>
StageReport pretrain_stage(TrainState<T>& state, const ImageDataset& train,
                           const TrainOptions& opts) {
  state.hp.validate();
  state.ablation.validate();
  if (!state.ablation.use_feature_mapping)
    throw UsageError("pretrain_stage: this configuration disables feature-mapping pre-training");
  if (state.bundle.downscaler.frozen())
    throw UsageError("pretrain_stage: the downscaler is frozen and cannot be pre-trained");
  if (!state.bundle.teacher.frozen())
    throw UsageError("pretrain_stage: a trained, frozen teacher is required");
  if (train.size() == 0) throw UsageError("pretrain_stage: training set is empty");

  ThumbNetBundle<T>& b = state.bundle;
  const Hyperparams& hp = state.hp;

  std::vector<ParamGroup<T>> groups;
  groups.push_back({"downscaler", b.downscaler.param_set(), 1.0, {}});
  groups.push_back({"student_left", b.student.left_params(), 1.0, {}});
  groups.push_back({"decoder", b.decoder.param_set(), 1.0, {}});
  ParamSet<T> reg_params = detail::concat_params<T>(
      {b.downscaler.param_set(), b.student.left_params(), b.decoder.param_set()});

  const std::size_t epochs =
      opts.pretrain_epochs ? opts.pretrain_epochs : std::max<std::size_t>(1, opts.epochs / 4);
  BatchOptions bo;
  bo.batch_size = opts.batch_size;
  bo.shuffle = true;
  bo.augment = opts.augment;
  bo.seed = opts.seed;
  BatchStream<T> stream(train, bo);
  PlateauDetector plateau;
  double lr = hp.base_lr;

  StageReport rep;
  rep.stage = "pretrain";
  std::size_t gstep = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    stream.start_epoch(epoch);
    EpochRecord er;
    er.stage = rep.stage;
    er.epoch = epoch;
    er.lr = lr;
    std::size_t steps = 0;
    while (auto batch = stream.next()) {
      try {
        Tape<T> tape;
        for (ParamGroup<T>& g : groups)
          for (ParamEntry<T>& e : g.params) tape.watch(*e.tensor);
        Tensor<T> thumb = b.downscaler.forward(batch->images, RunMode::train);
        Tensor<T> feat_t = b.teacher.forward_left(
            standardize(batch->images, b.channel_mean, b.channel_std), RunMode::eval);
        Tensor<T> feat_s = b.student.forward_left(
            standardize(thumb, b.channel_mean, b.channel_std), RunMode::train);
        Tensor<T> mm = mm_loss(batch->images, thumb, T(hp.lambda_mm));
        Tensor<T> fm = fm_loss(feat_t, feat_s, [&](const Tensor<T>& v) {
          return b.decoder.forward(v, RunMode::train);
        });
        Tensor<T> reg = l2_reg(reg_params);
        Tensor<T> loss = add(add(mm, scale(fm, T(hp.alpha))), scale(reg, T(0.5 * hp.theta)));
        const double lv = double(loss.item());
        if (!std::isfinite(lv)) throw NumericFault("pretrain objective is not finite");
        tape.backward(loss);
        step_groups(groups, tape, lr, hp.momentum);

        StepRecord sr{rep.stage, epoch,           gstep, lr, lv, double(mm.item()),
                      double(fm.item()), 0.0, 0.0, double(reg.item())};
        rep.steps.push_back(sr);
        er.loss += sr.loss;
        er.mm += sr.mm;
        er.fm += sr.fm;
        er.reg += sr.reg;
        ++steps;
        ++gstep;
      } catch (const NumericFault& e) {
        throw NumericFault(detail::divergence_message("pre-training", epoch, gstep, e.what(),
                                                      state.last_checkpoint));
      }
    }
    detail::finish_epoch_means(er, steps);
    er.steps_done = gstep;
    er.val_loss = er.loss;  // plateau metric for the unlabeled stage
    rep.epochs.push_back(er);
    lr = plateau.observe(er.val_loss, lr);
    detail::save_bundle_state(state, opts, "last",
                              {{"stage", "pretrain"}, {"epochs_done", epoch + 1}, {"lr", lr}});
  }
  rep.final_checkpoint = detail::save_bundle_state(
      state, opts, "stage_a", {{"stage", "pretrain"}, {"epochs_done", epochs}, {"lr", lr}});
  return rep;
}

// Stage two: fits the classification objective  CL + beta * KD (+ MM when the
// learned downscaler trains without a pre-training stage) + (theta/2) * l2.
// After feature-mapping pre-training, the downscaler and the student's front
// half continue at finetune_lr_factor times the base rate. The learning rate
// decays on validation-loss plateaus.
template <typename T>
StageReport finetune_stage(TrainState<T>& state, const ImageDataset& train,
                           const ImageDataset& val, const TrainOptions& opts) {
  state.hp.validate();
  state.ablation.validate();
  if (train.size() == 0) throw UsageError("finetune_stage: training set is empty");
  if (opts.epochs > 0 && val.size() == 0)
    throw UsageError("finetune_stage: validation set is empty");

  ThumbNetBundle<T>& b = state.bundle;
  const Hyperparams& hp = state.hp;
  const AblationConfig& ab = state.ablation;
  const bool learned = ab.use_supervised_downscaler;
  const bool e_trainable = learned && !b.downscaler.frozen();
  if (ab.use_distillation && !b.teacher.frozen())
    throw UsageError("finetune_stage: distillation requires a trained, frozen teacher");
  const bool mm_on = e_trainable && !ab.use_feature_mapping && ab.use_moment_matching;

  const double pre_scale = ab.use_feature_mapping ? hp.finetune_lr_factor : 1.0;
  std::vector<ParamGroup<T>> groups;
  if (e_trainable) groups.push_back({"downscaler", b.downscaler.param_set(), pre_scale, {}});
  if (ab.use_feature_mapping) {
    groups.push_back({"student_left", b.student.left_params(), pre_scale, {}});
    groups.push_back({"student_right", b.student.right_params(), 1.0, {}});
  } else {
    groups.push_back({"student", b.student.param_set(), 1.0, {}});
  }
  ParamSet<T> reg_params = b.student.param_set();
  if (e_trainable)
    reg_params = detail::concat_params<T>({b.downscaler.param_set(), b.student.param_set()});

  BatchOptions bo;
  bo.batch_size = opts.batch_size;
  bo.shuffle = true;
  bo.augment = opts.augment;
  bo.seed = opts.seed + 1;
  BatchStream<T> stream(train, bo);
  PlateauDetector plateau;
  double lr = hp.base_lr;
  const DownscaleMode eval_mode = inference_mode(ab);

  StageReport rep;
  rep.stage = "finetune";
  std::size_t gstep = 0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    stream.start_epoch(epoch);
    EpochRecord er;
    er.stage = rep.stage;
    er.epoch = epoch;
    er.lr = lr;
    std::size_t steps = 0;
    while (auto batch = stream.next()) {
      try {
        Tape<T> tape;
        for (ParamGroup<T>& g : groups)
          for (ParamEntry<T>& e : g.params) tape.watch(*e.tensor);
        Tensor<T> thumb = learned ? b.downscaler.forward(batch->images, RunMode::train)
                                  : bicubic_downscale_batch(batch->images, b.factor);
        Tensor<T> logits_s = b.student.forward(
            standardize(thumb, b.channel_mean, b.channel_std), RunMode::train);
        Tensor<T> cl = cl_loss(logits_s, batch->labels);
        Tensor<T> loss = cl;
        double kd_v = 0.0, mm_v = 0.0;
        if (ab.use_distillation) {
          Tensor<T> logits_t = b.teacher.forward(
              standardize(batch->images, b.channel_mean, b.channel_std), RunMode::eval);
          Tensor<T> kd = kd_loss(logits_s, logits_t, T(hp.tau));
          kd_v = double(kd.item());
          loss = add(loss, scale(kd, T(hp.beta)));
        }
        if (mm_on) {
          Tensor<T> mm = mm_loss(batch->images, thumb, T(hp.lambda_mm));
          mm_v = double(mm.item());
          loss = add(loss, mm);
        }
        Tensor<T> reg = l2_reg(reg_params);
        loss = add(loss, scale(reg, T(0.5 * hp.theta)));
        const double lv = double(loss.item());
        if (!std::isfinite(lv)) throw NumericFault("fine-tuning objective is not finite");
        tape.backward(loss);
        step_groups(groups, tape, lr, hp.momentum);

        StepRecord sr{rep.stage, epoch, gstep, lr,  lv,
                      mm_v,      0.0,   double(cl.item()), kd_v, double(reg.item())};
        rep.steps.push_back(sr);
        er.loss += sr.loss;
        er.mm += sr.mm;
        er.cl += sr.cl;
        er.kd += sr.kd;
        er.reg += sr.reg;
        ++steps;
        ++gstep;
      } catch (const NumericFault& e) {
        throw NumericFault(detail::divergence_message("fine-tuning", epoch, gstep, e.what(),
                                                      state.last_checkpoint));
      }
    }
    detail::finish_epoch_means(er, steps);
    er.steps_done = gstep;
    EvalResult ev;
    try {
      ev = evaluate_student(b, val, eval_mode, opts.eval_batch_size);
    } catch (const NumericFault& e) {
      throw NumericFault(detail::divergence_message("fine-tuning validation", epoch, gstep,
                                                    e.what(), state.last_checkpoint));
    }
    er.val_loss = ev.mean_loss;
    er.val_top1 = ev.top1_error;
    er.val_top5 = ev.top5_error;
    rep.epochs.push_back(er);
    lr = plateau.observe(ev.mean_loss, lr);
    detail::save_bundle_state(state, opts, "last",
                              {{"stage", "finetune"},
                               {"epochs_done", epoch + 1},
                               {"lr", lr},
                               {"downscale", learned ? "learned" : "bicubic"}});
  }
  rep.final_checkpoint = detail::save_bundle_state(
      state, opts, "final",
      {{"stage", "finetune"},
       {"epochs_done", opts.epochs},
       {"lr", lr},
       {"downscale", learned ? "learned" : "bicubic"}});
  return rep;
}

// Trains a full-resolution classifier with  CL + (theta/2) * l2 , evaluating
// and checkpointing each epoch. With a zero epoch budget the initialization
// is checkpointed as-is. When `final_path` is non-null it receives the path
// of the last checkpoint written.
template <typename T>
StageReport train_teacher(NetworkGraph<T>& net, const ImageDataset& train, const ImageDataset& val,
                          const DatasetStats& stats, const Hyperparams& hp,
                          const TrainOptions& opts, std::string* final_path = nullptr) {
  hp.validate();
  if (net.frozen()) throw UsageError("train_teacher: the network is frozen");
  if (train.size() == 0) throw UsageError("train_teacher: training set is empty");
  if (opts.epochs > 0 && val.size() == 0) throw UsageError("train_teacher: validation set is empty");

  std::vector<ParamGroup<T>> groups;
  groups.push_back({"all", net.param_set(), 1.0, {}});
  ParamSet<T> reg_params = net.param_set();
  const auto mean = detail::stats_mean<T>(stats);
  const auto sd = detail::stats_std<T>(stats);

  BatchOptions bo;
  bo.batch_size = opts.batch_size;
  bo.shuffle = true;
  bo.augment = opts.augment;
  bo.seed = opts.seed;
  BatchStream<T> stream(train, bo);
  PlateauDetector plateau;
  double lr = hp.base_lr;
  std::string last;

  auto save = [&](const std::string& leaf, std::size_t epochs_done) -> std::string {
    if (opts.out_dir.empty()) return std::string();
    std::filesystem::create_directories(opts.out_dir);
    const std::string path = detail::run_file(opts, leaf + ".tnck");
    save_checkpoint(path, classifier_checkpoint(net, stats,
                                                {{"stage", "teacher"},
                                                 {"epochs_done", epochs_done},
                                                 {"lr", lr}}));
    last = path;
    return path;
  };

  StageReport rep;
  rep.stage = "teacher";
  std::size_t gstep = 0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    stream.start_epoch(epoch);
    EpochRecord er;
    er.stage = rep.stage;
    er.epoch = epoch;
    er.lr = lr;
    std::size_t steps = 0;
    while (auto batch = stream.next()) {
      try {
        Tape<T> tape;
        net.watch_params(tape);
        Tensor<T> logits = net.forward(standardize(batch->images, mean, sd), RunMode::train);
        Tensor<T> cl = cl_loss(logits, batch->labels);
        Tensor<T> reg = l2_reg(reg_params);
        Tensor<T> loss = add(cl, scale(reg, T(0.5 * hp.theta)));
        const double lv = double(loss.item());
        if (!std::isfinite(lv)) throw NumericFault("teacher objective is not finite");
        tape.backward(loss);
        step_groups(groups, tape, lr, hp.momentum);

        StepRecord sr{rep.stage, epoch, gstep, lr,  lv,
                      0.0,       0.0,   double(cl.item()), 0.0, double(reg.item())};
        rep.steps.push_back(sr);
        er.loss += sr.loss;
        er.cl += sr.cl;
        er.reg += sr.reg;
        ++steps;
        ++gstep;
      } catch (const NumericFault& e) {
        throw NumericFault(detail::divergence_message("teacher training", epoch, gstep, e.what(), last));
      }
    }
    detail::finish_epoch_means(er, steps);
    er.steps_done = gstep;
    EvalResult ev;
    try {
      ev = evaluate_graph(net, val, stats, opts.eval_batch_size);
    } catch (const NumericFault& e) {
      throw NumericFault(
          detail::divergence_message("teacher validation", epoch, gstep, e.what(), last));
    }
    er.val_loss = ev.mean_loss;
    er.val_top1 = ev.top1_error;
    er.val_top5 = ev.top5_error;
    rep.epochs.push_back(er);
    lr = plateau.observe(ev.mean_loss, lr);
    save("last", epoch + 1);
  }
  rep.final_checkpoint = save("final", opts.epochs);
  if (final_path != nullptr) *final_path = rep.final_checkpoint;
  return rep;
}

template <typename T>
struct TrainRunResult {
  StageReport stage_a;  // empty unless the method pre-trains
  StageReport stage_b;
  EvalResult final_eval;
  std::string final_checkpoint;
  std::string metrics_csv;
};

// Runs the configured method end to end: optional feature-mapping
// pre-training, then fine-tuning, a final validation pass, and one combined
// metrics log.
template <typename T>
TrainRunResult<T> train_thumbnet(TrainState<T>& state, const ImageDataset& train,
                                 const ImageDataset& val, const TrainOptions& opts) {
  state.hp.validate();
  state.ablation.validate();
  const bool needs_teacher = state.ablation.use_distillation || state.ablation.use_feature_mapping;
  if (needs_teacher && !state.bundle.teacher.frozen())
    throw UsageError("train_thumbnet: this method needs a trained, frozen teacher");

  TrainRunResult<T> out;
  if (state.ablation.use_feature_mapping) out.stage_a = pretrain_stage(state, train, opts);
  out.stage_b = finetune_stage(state, train, val, opts);
  out.final_checkpoint = out.stage_b.final_checkpoint;
  if (val.size() > 0)
    out.final_eval =
        evaluate_student(state.bundle, val, inference_mode(state.ablation), opts.eval_batch_size);
  if (!opts.out_dir.empty()) {
    out.metrics_csv = detail::run_file(opts, "metrics.csv");
    write_metrics_csv(out.metrics_csv, {&out.stage_a, &out.stage_b});
  }
  return out;
}

}  // namespace thumbnet
