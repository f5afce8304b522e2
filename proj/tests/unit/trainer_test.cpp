#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "thumbnet/core/rng.hpp"
#include "thumbnet/core/tape.hpp"
#include "thumbnet/dataio/checkpoint.hpp"
#include "thumbnet/dataio/dataset.hpp"
#include "thumbnet/model/builders.hpp"
#include "thumbnet/model/graph.hpp"
#include "thumbnet/model/pipeline.hpp"
#include "thumbnet/trainer/checkpoint_io.hpp"
#include "thumbnet/trainer/evaluate.hpp"
#include "thumbnet/trainer/plateau.hpp"
#include "thumbnet/trainer/sgd.hpp"
#include "thumbnet/trainer/trainer.hpp"

namespace tn = thumbnet;
namespace fs = std::filesystem;
using D = tn::Tensor<double>;
using Graph = tn::NetworkGraph<double>;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("thumbnet_trainer_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small classifier used as the teacher in stage tests: conv-(bn)-relu front
// half (the tap), then a strided conv, global pooling, and a linear head.
Graph toy_teacher(std::size_t classes, std::size_t edge, bool with_bn, tn::Rng& rng) {
  Graph g("toy-teacher", tn::Shape{3, edge, edge});
  g.add_layer("c1", tn::LayerSpec{tn::LayerKind::conv, 3, 6, 3, 1, 1, !with_bn});
  if (with_bn) g.add_layer("b1", tn::LayerSpec{tn::LayerKind::batchnorm, 6, 6});
  g.add_layer("r1", tn::LayerSpec{tn::LayerKind::relu});
  g.add_layer("c2", tn::LayerSpec{tn::LayerKind::conv, 6, 8, 3, 2, 1, true});
  g.add_layer("r2", tn::LayerSpec{tn::LayerKind::relu});
  g.add_layer("gap", tn::LayerSpec{tn::LayerKind::globalavgpool});
  g.add_layer("fc", tn::LayerSpec{tn::LayerKind::fullyconnected, 8, classes});
  g.set_split_index(with_bn ? 3 : 2);
  g.init_params(rng);
  return g;
}

// Class-tinted noisy images so the labeled objectives have signal.
tn::ImageDataset toy_data(std::size_t n, std::size_t classes, std::size_t edge,
                          std::uint64_t seed) {
  tn::ImageDataset ds(edge, edge, classes);
  tn::Rng rng(seed);
  std::vector<std::uint8_t> px(3 * edge * edge);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % classes;
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = 40.0 + 40.0 * double((label + c) % classes);
      for (std::size_t p = 0; p < edge * edge; ++p) {
        const double v = base + rng.uniform(0.0, 30.0);
        px[c * edge * edge + p] =
            static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
      }
    }
    ds.push(px.data(), label);
  }
  return ds;
}

tn::ThumbNetBundle<double> toy_bundle(std::uint64_t seed, std::size_t classes = 4,
                                      std::size_t edge = 16) {
  tn::Rng rng(seed);
  Graph teacher = toy_teacher(classes, edge, true, rng);
  return tn::make_thumbnet_bundle<double>(std::move(teacher), 2, 4, rng);
}

tn::ParamSet<double> single_param(const char* name, D* t) {
  return tn::ParamSet<double>{{name, t, tn::ParamRole::weight}};
}

D grad_of(double v) {
  D g(tn::Shape{1});
  g.mutable_data()[0] = v;
  return g;
}

double softened_entropy(const D& logits, double tau) {
  const std::size_t n = logits.size(0), k = logits.size(1);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.data() + i * k;
    double mx = row[0];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < k; ++c) z += std::exp((row[c] - mx) / tau);
    for (std::size_t c = 0; c < k; ++c) {
      const double p = std::exp((row[c] - mx) / tau) / z;
      if (p > 0.0) total -= p * std::log(p);
    }
  }
  return total / double(n);
}

}  // namespace

TEST(Sgd, HandValues) {
  D w(tn::Shape{1});
  tn::ParamSet<double> ps = single_param("w", &w);
  std::vector<D> vel;
  tn::sgd_step(ps, {grad_of(1.0)}, vel, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(w.data()[0], -0.1);

  D w2(tn::Shape{1});
  tn::ParamSet<double> ps2 = single_param("w2", &w2);
  std::vector<D> vel2;
  tn::sgd_step(ps2, {grad_of(1.0)}, vel2, 1.0, 0.9);
  EXPECT_DOUBLE_EQ(w2.data()[0], -1.0);
  tn::sgd_step(ps2, {grad_of(1.0)}, vel2, 1.0, 0.9);
  EXPECT_DOUBLE_EQ(w2.data()[0], -2.9);
}

TEST(Sgd, ZeroGradientLeavesParamsAlone) {
  D w(tn::Shape{3});
  for (std::size_t i = 0; i < 3; ++i) w.mutable_data()[i] = 0.5 * double(i + 1);
  tn::ParamSet<double> ps = single_param("w", &w);
  std::vector<D> vel;
  for (int s = 0; s < 3; ++s) tn::sgd_step(ps, {D(tn::Shape{3})}, vel, 0.1, 0.9);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w.data()[i], 0.5 * double(i + 1));
}

TEST(Sgd, RejectsMismatchesAndDecoupledDecay) {
  D w(tn::Shape{1});
  tn::ParamSet<double> ps = single_param("w", &w);
  std::vector<D> vel;
  EXPECT_THROW(tn::sgd_step(ps, {}, vel, 0.1, 0.0), tn::UsageError);
  EXPECT_THROW(tn::sgd_step(ps, {D(tn::Shape{2})}, vel, 0.1, 0.0), tn::UsageError);
  std::vector<D> bad_vel{D(tn::Shape{2})};
  EXPECT_THROW(tn::sgd_step(ps, {grad_of(0.0)}, bad_vel, 0.1, 0.0), tn::UsageError);
  EXPECT_THROW(tn::sgd_step(ps, {grad_of(0.0)}, vel, 0.1, 0.0, false), tn::UsageError);
}

TEST(Plateau, ImprovingHistoryNeverDecays) {
  tn::PlateauDetector pd;
  double lr = 0.1;
  for (double v : {1.0, 0.9, 0.8, 0.7, 0.6, 0.5}) lr = pd.observe(v, lr);
  EXPECT_DOUBLE_EQ(lr, 0.1);
  EXPECT_EQ(pd.decays(), 0u);
}

TEST(Plateau, FlatHistoryOfPatiencePlusOneDecaysOnce) {
  tn::PlateauDetector pd;
  double lr = 0.1;
  for (int i = 0; i < 3; ++i) lr = pd.observe(1.0, lr);
  EXPECT_DOUBLE_EQ(lr, 0.1);
  lr = pd.observe(1.0, lr);
  EXPECT_DOUBLE_EQ(lr, 0.01);
  EXPECT_EQ(pd.decays(), 1u);
}

TEST(Plateau, StopsAfterMaxDecays) {
  tn::PlateauDetector pd;
  double lr = 0.1;
  for (int i = 0; i < 50; ++i) lr = pd.observe(2.0, lr);
  EXPECT_DOUBLE_EQ(lr, 0.001);
  EXPECT_EQ(pd.decays(), 2u);
}

TEST(Plateau, NonFiniteLossesCountAsStalls) {
  tn::PlateauDetector pd;
  double lr = 0.1;
  for (int i = 0; i < 3; ++i) lr = pd.observe(std::nan(""), lr);
  EXPECT_DOUBLE_EQ(lr, 0.01);
  EXPECT_EQ(pd.decays(), 1u);
}

TEST(Plateau, RejectsBadConfiguration) {
  EXPECT_THROW(tn::PlateauDetector(0.0), tn::UsageError);
  EXPECT_THROW(tn::PlateauDetector(1e-3, 0), tn::UsageError);
  EXPECT_THROW(tn::PlateauDetector(1e-3, 3, 2, 1.0), tn::UsageError);
}

TEST(Evaluate, TopkHandCase) {
  D logits(tn::Shape{4, 6});
  const double rows[4][6] = {{5, 1, 1, 1, 1, 1},
                             {5, 4, 3, 2, 1, 0},
                             {5, 4, 3, 2, 1, 0},
                             {2, 2, 0, 0, 0, 0}};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 6; ++j) logits.mutable_data()[i * 6 + j] = rows[i][j];
  const std::vector<std::size_t> labels{0, 3, 5, 1};
  auto [hit1, hit5] = tn::topk_hits(logits, labels, 5);
  EXPECT_EQ(hit1, 2u);
  EXPECT_EQ(hit5, 3u);
  auto [h1b, hall] = tn::topk_hits(logits, labels, 6);
  EXPECT_EQ(h1b, 2u);
  EXPECT_EQ(hall, 4u);
  EXPECT_THROW(tn::topk_hits(logits, {0, 1, 2}, 5), tn::UsageError);
  EXPECT_THROW(tn::topk_hits(logits, {0, 1, 2, 9}, 5), tn::UsageError);
}

TEST(Evaluate, FiveClassProblemHasZeroTopFiveError) {
  tn::Rng rng(11);
  Graph net = toy_teacher(5, 16, true, rng);
  tn::ImageDataset ds = toy_data(20, 5, 16, 3);
  tn::EvalResult r = tn::evaluate_graph(net, ds, ds.compute_stats(), 8);
  EXPECT_EQ(r.count, 20u);
  EXPECT_DOUBLE_EQ(r.top5_error, 0.0);
  EXPECT_GE(r.top1_error, 0.0);
  EXPECT_LE(r.top1_error, 1.0);
  EXPECT_GT(r.mean_loss, 0.0);
}

TEST(Sgd, GroupScalesApplyToTheLearningRate) {
  D a(tn::Shape{1}), b(tn::Shape{1});
  tn::Tape<double> tape;
  tape.watch(a);
  tape.watch(b);
  D loss = tn::add(a, b);
  tape.backward(loss);
  std::vector<tn::ParamGroup<double>> groups;
  groups.push_back({"pretrained", single_param("a", &a), 0.01, {}});
  groups.push_back({"fresh", single_param("b", &b), 1.0, {}});
  tn::step_groups(groups, tape, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(a.data()[0], -0.001);
  EXPECT_DOUBLE_EQ(b.data()[0], -0.1);
  EXPECT_DOUBLE_EQ(a.data()[0] / b.data()[0], 0.01);
}

TEST(CheckpointIo, BundleRoundTripPreservesEverything) {
  const fs::path dir = fresh_dir("bundle_rt");
  tn::ThumbNetBundle<double> bundle = toy_bundle(21);
  bundle.channel_mean = {0.4, 0.5, 0.6};
  bundle.channel_std = {0.2, 0.25, 0.3};
  const std::uint64_t sums[4] = {
      tn::graph_checksum(bundle.teacher), tn::graph_checksum(bundle.student),
      tn::graph_checksum(bundle.downscaler), tn::graph_checksum(bundle.decoder)};

  const std::string path = (dir / "b.tnck").string();
  tn::save_checkpoint(path, tn::bundle_checkpoint(bundle, {{"epochs_done", 3}}));
  tn::Checkpoint ck = tn::load_checkpoint(path);
  tn::ThumbNetBundle<double> back = tn::bundle_from_checkpoint<double>(ck);

  EXPECT_EQ(tn::graph_checksum(back.teacher), sums[0]);
  EXPECT_EQ(tn::graph_checksum(back.student), sums[1]);
  EXPECT_EQ(tn::graph_checksum(back.downscaler), sums[2]);
  EXPECT_EQ(tn::graph_checksum(back.decoder), sums[3]);
  EXPECT_EQ(back.factor, 2u);
  EXPECT_TRUE(back.teacher.frozen());
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(double(back.channel_mean[c]), double(bundle.channel_mean[c]));
    EXPECT_DOUBLE_EQ(double(back.channel_std[c]), double(bundle.channel_std[c]));
  }
  const nlohmann::json meta = nlohmann::json::parse(ck.meta_json);
  EXPECT_EQ(meta.at("progress").at("epochs_done").get<int>(), 3);
}

TEST(CheckpointIo, ClassifierRoundTripAndKindChecks) {
  const fs::path dir = fresh_dir("clf_rt");
  tn::Rng rng(5);
  Graph net = toy_teacher(4, 16, true, rng);
  tn::DatasetStats stats;
  stats.mean = {0.1, 0.2, 0.3};
  stats.stddev = {0.4, 0.5, 0.6};
  const std::uint64_t sum = tn::graph_checksum(net);

  const std::string path = (dir / "c.tnck").string();
  tn::save_checkpoint(path, tn::classifier_checkpoint(net, stats));
  tn::Checkpoint ck = tn::load_checkpoint(path);
  auto [back, back_stats] = tn::classifier_from_checkpoint<double>(ck);
  EXPECT_EQ(tn::graph_checksum(back), sum);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_DOUBLE_EQ(back_stats.mean[c], stats.mean[c]);
    EXPECT_DOUBLE_EQ(back_stats.stddev[c], stats.stddev[c]);
  }
  EXPECT_THROW(tn::bundle_from_checkpoint<double>(ck), tn::DataFormatError);

  tn::ThumbNetBundle<double> bundle = toy_bundle(9);
  tn::Checkpoint bck = tn::bundle_checkpoint(bundle);
  EXPECT_THROW(tn::classifier_from_checkpoint<double>(bck), tn::DataFormatError);
}

TEST(AblationPresets, MethodTableAndValidation) {
  tn::AblationConfig b = tn::ablation_for_method('b');
  EXPECT_FALSE(b.use_supervised_downscaler);
  EXPECT_FALSE(b.use_distillation);
  EXPECT_FALSE(b.use_feature_mapping);
  tn::AblationConfig c = tn::ablation_for_method('c');
  EXPECT_TRUE(c.use_supervised_downscaler);
  EXPECT_FALSE(c.use_distillation);
  tn::AblationConfig d = tn::ablation_for_method('d');
  EXPECT_FALSE(d.use_supervised_downscaler);
  EXPECT_TRUE(d.use_distillation);
  tn::AblationConfig e = tn::ablation_for_method('e');
  EXPECT_TRUE(e.use_supervised_downscaler);
  EXPECT_TRUE(e.use_distillation);
  EXPECT_FALSE(e.use_feature_mapping);
  tn::AblationConfig f = tn::ablation_for_method('f');
  EXPECT_TRUE(f.use_feature_mapping);
  EXPECT_THROW(tn::ablation_for_method('a'), tn::UsageError);
  EXPECT_THROW(tn::ablation_for_method('x'), tn::UsageError);

  tn::AblationConfig bad{false, false, true, true};
  EXPECT_THROW(bad.validate(), tn::UsageError);
  EXPECT_EQ(tn::inference_mode(f), tn::DownscaleMode::learned);
  EXPECT_EQ(tn::inference_mode(b), tn::DownscaleMode::bicubic);
}

TEST(PretrainStage, ZeroLearningRateIsANoop) {
  tn::TrainState<double> state{toy_bundle(31), tn::Hyperparams{}, tn::ablation_for_method('f')};
  state.hp.base_lr = 0.0;
  // Batchnorm running statistics still update on a forward pass; the
  // invariant is that no trainable parameter moves.
  std::vector<D> before;
  auto snapshot = [&](Graph& g) {
    for (const auto& e : g.param_set()) before.push_back(e.tensor->detached());
  };
  snapshot(state.bundle.downscaler);
  snapshot(state.bundle.student);
  snapshot(state.bundle.decoder);

  tn::ImageDataset ds = toy_data(16, 4, 16, 7);
  tn::TrainOptions opts;
  opts.pretrain_epochs = 1;
  opts.batch_size = 16;
  opts.augment = false;
  tn::StageReport rep = tn::pretrain_stage(state, ds, opts);
  EXPECT_EQ(rep.steps.size(), 1u);

  std::size_t i = 0;
  auto compare = [&](Graph& g) {
    for (const auto& e : g.param_set()) {
      for (std::size_t k = 0; k < e.tensor->numel(); ++k)
        ASSERT_DOUBLE_EQ(e.tensor->data()[k], before[i].data()[k]) << e.name;
      ++i;
    }
  };
  compare(state.bundle.downscaler);
  compare(state.bundle.student);
  compare(state.bundle.decoder);
}

TEST(PretrainStage, AlphaZeroLeavesOnlyDecayOnTheDecoder) {
  tn::TrainState<double> state{toy_bundle(33), tn::Hyperparams{}, tn::ablation_for_method('f')};
  state.hp.alpha = 0.0;
  state.hp.momentum = 0.0;
  state.hp.base_lr = 1e-3;
  std::vector<std::pair<tn::ParamRole, D>> before;
  for (const auto& e : state.bundle.decoder.param_set())
    before.emplace_back(e.role, e.tensor->detached());

  tn::ImageDataset ds = toy_data(8, 4, 16, 5);
  tn::TrainOptions opts;
  opts.pretrain_epochs = 1;
  opts.batch_size = 8;
  opts.augment = false;
  tn::pretrain_stage(state, ds, opts);

  const double shrink = 1.0 - state.hp.base_lr * state.hp.theta;
  std::size_t i = 0;
  for (const auto& e : state.bundle.decoder.param_set()) {
    const D& w0 = before[i].second;
    for (std::size_t k = 0; k < w0.numel(); ++k) {
      const double expected =
          before[i].first == tn::ParamRole::weight ? w0.data()[k] * shrink : w0.data()[k];
      EXPECT_NEAR(e.tensor->data()[k], expected, std::abs(w0.data()[k]) * 1e-12 + 1e-15);
    }
    ++i;
  }
}

TEST(PretrainStage, ObjectiveDecreasesOverTheRun) {
  tn::TrainState<double> state{toy_bundle(41), tn::Hyperparams{}, tn::ablation_for_method('f')};
  state.hp.base_lr = 0.05;
  tn::ImageDataset ds = toy_data(64, 4, 16, 13);
  tn::TrainOptions opts;
  opts.pretrain_epochs = 200;
  opts.batch_size = 64;
  opts.augment = false;
  tn::StageReport rep = tn::pretrain_stage(state, ds, opts);
  ASSERT_EQ(rep.steps.size(), 200u);
  for (std::size_t i = 0; i + 50 < rep.steps.size(); ++i)
    EXPECT_LT(rep.steps[i + 50].loss, rep.steps[i].loss) << "window starting at step " << i;
  EXPECT_LT(rep.epochs.back().loss, rep.epochs.front().loss);
}

TEST(PretrainStage, RejectsBadConfigurations) {
  tn::TrainState<double> state{toy_bundle(43), tn::Hyperparams{}, tn::ablation_for_method('e')};
  tn::ImageDataset ds = toy_data(8, 4, 16, 5);
  tn::TrainOptions opts;
  opts.pretrain_epochs = 1;
  EXPECT_THROW(tn::pretrain_stage(state, ds, opts), tn::UsageError);

  tn::TrainState<double> frozen{toy_bundle(44), tn::Hyperparams{}, tn::ablation_for_method('f')};
  frozen.bundle.downscaler.set_frozen(true);
  EXPECT_THROW(tn::pretrain_stage(frozen, ds, opts), tn::UsageError);

  tn::TrainState<double> thawed{toy_bundle(45), tn::Hyperparams{}, tn::ablation_for_method('f')};
  thawed.bundle.teacher.set_frozen(false);
  EXPECT_THROW(tn::pretrain_stage(thawed, ds, opts), tn::UsageError);
}

TEST(FinetuneStage, WithoutDistillationLossIsClPlusDecay) {
  tn::TrainState<double> state{toy_bundle(51), tn::Hyperparams{}, tn::ablation_for_method('c')};
  state.ablation.use_moment_matching = false;
  tn::ImageDataset ds = toy_data(64, 4, 16, 17);
  tn::TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 32;
  opts.augment = false;
  tn::StageReport rep = tn::finetune_stage(state, ds, ds, opts);
  ASSERT_EQ(rep.steps.size(), 4u);
  for (const tn::StepRecord& s : rep.steps) {
    EXPECT_DOUBLE_EQ(s.kd, 0.0);
    EXPECT_DOUBLE_EQ(s.mm, 0.0);
    EXPECT_NEAR(s.loss, s.cl + 0.5 * state.hp.theta * s.reg, 1e-12);
  }
}

TEST(FinetuneStage, MomentTermAppearsOnlyForLearnedSingleStageRuns) {
  tn::ImageDataset ds = toy_data(32, 4, 16, 19);
  tn::TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 32;
  opts.augment = false;

  tn::TrainState<double> c{toy_bundle(52), tn::Hyperparams{}, tn::ablation_for_method('c')};
  tn::StageReport rep_c = tn::finetune_stage(c, ds, ds, opts);
  EXPECT_GT(rep_c.steps.at(0).mm, 0.0);
  EXPECT_NEAR(rep_c.steps.at(0).loss,
              rep_c.steps.at(0).cl + rep_c.steps.at(0).mm +
                  0.5 * c.hp.theta * rep_c.steps.at(0).reg,
              1e-12);

  tn::TrainState<double> b{toy_bundle(53), tn::Hyperparams{}, tn::ablation_for_method('b')};
  const std::uint64_t dsum = tn::graph_checksum(b.bundle.downscaler);
  tn::StageReport rep_b = tn::finetune_stage(b, ds, ds, opts);
  EXPECT_DOUBLE_EQ(rep_b.steps.at(0).mm, 0.0);
  EXPECT_EQ(tn::graph_checksum(b.bundle.downscaler), dsum);
}

TEST(FinetuneStage, DistillationAtTheMinimumEqualsSoftenedEntropy) {
  tn::Rng rng(61);
  Graph teacher = toy_teacher(4, 16, false, rng);
  tn::ThumbNetBundle<double> b;
  b.factor = 1;
  b.student = teacher;
  b.teacher = teacher;
  b.teacher.set_frozen(true);
  b.downscaler = tn::build_avgpool_downscaler<double>(1, 16, 16);

  tn::ImageDataset ds = toy_data(16, 4, 16, 23);
  tn::TrainState<double> state{std::move(b), tn::Hyperparams{}, tn::ablation_for_method('e')};
  state.ablation.use_moment_matching = false;
  state.hp.base_lr = 0.0;
  tn::TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 16;
  opts.augment = false;
  tn::StageReport rep = tn::finetune_stage(state, ds, ds, opts);
  ASSERT_EQ(rep.steps.size(), 1u);

  tn::BatchOptions bo;
  bo.batch_size = 16;
  bo.shuffle = false;
  tn::BatchStream<double> stream(ds, bo);
  stream.start_epoch(0);
  auto batch = stream.next();
  ASSERT_TRUE(batch.has_value());
  D logits = state.bundle.teacher.forward(
      tn::standardize(batch->images, state.bundle.channel_mean, state.bundle.channel_std),
      tn::RunMode::eval);
  EXPECT_NEAR(rep.steps.at(0).kd, softened_entropy(logits, state.hp.tau), 1e-9);
}

TEST(FinetuneStage, FrozenDownscalerIsTransferredNotTrained) {
  tn::TrainState<double> state{toy_bundle(71), tn::Hyperparams{}, tn::ablation_for_method('e')};
  state.bundle.downscaler.set_frozen(true);
  const std::uint64_t dsum = tn::graph_checksum(state.bundle.downscaler);
  const std::uint64_t ssum = tn::graph_checksum(state.bundle.student);
  tn::ImageDataset ds = toy_data(32, 4, 16, 29);
  tn::TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 16;
  opts.augment = false;
  tn::StageReport rep = tn::finetune_stage(state, ds, ds, opts);
  EXPECT_EQ(tn::graph_checksum(state.bundle.downscaler), dsum);
  EXPECT_NE(tn::graph_checksum(state.bundle.student), ssum);
  for (const tn::StepRecord& s : rep.steps) EXPECT_DOUBLE_EQ(s.mm, 0.0);
}

TEST(TrainThumbnet, FullMethodRunDecomposesAndPreservesTheTeacher) {
  const fs::path dir = fresh_dir("full_f");
  tn::TrainState<double> state{toy_bundle(81), tn::Hyperparams{}, tn::ablation_for_method('f')};
  const std::uint64_t tsum = tn::graph_checksum(state.bundle.teacher);
  tn::ImageDataset train = toy_data(64, 4, 16, 31);
  tn::ImageDataset val = toy_data(16, 4, 16, 37);
  tn::TrainOptions opts;
  opts.epochs = 2;
  opts.pretrain_epochs = 2;
  opts.batch_size = 32;
  opts.augment = false;
  opts.out_dir = dir.string();
  opts.tag = "toy_f";
  tn::TrainRunResult<double> run = tn::train_thumbnet(state, train, val, opts);

  ASSERT_EQ(run.stage_a.steps.size(), 4u);
  ASSERT_EQ(run.stage_b.steps.size(), 4u);
  const double theta = state.hp.theta;
  for (const tn::StepRecord& s : run.stage_a.steps) {
    EXPECT_NEAR(s.loss, s.mm + state.hp.alpha * s.fm + 0.5 * theta * s.reg, 1e-9);
    EXPECT_DOUBLE_EQ(s.cl, 0.0);
    EXPECT_DOUBLE_EQ(s.kd, 0.0);
  }
  for (const tn::StepRecord& s : run.stage_b.steps) {
    EXPECT_NEAR(s.loss, s.cl + state.hp.beta * s.kd + 0.5 * theta * s.reg, 1e-9);
    EXPECT_DOUBLE_EQ(s.mm, 0.0) << "two-stage runs keep the moment term out of fine-tuning";
    EXPECT_GT(s.kd, 0.0);
  }
  EXPECT_EQ(tn::graph_checksum(state.bundle.teacher), tsum);

  EXPECT_TRUE(fs::exists(run.final_checkpoint));
  EXPECT_TRUE(fs::exists(run.metrics_csv));
  tn::ThumbNetBundle<double> back =
      tn::bundle_from_checkpoint<double>(tn::load_checkpoint(run.final_checkpoint));
  EXPECT_EQ(tn::graph_checksum(back.student), tn::graph_checksum(state.bundle.student));

  std::ifstream csv(run.metrics_csv);
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "stage,epoch,step,lr,loss,mm,fm,cl,kd,reg,val_loss,val_top1,val_top5");
  std::size_t rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 4u);
  EXPECT_GE(run.final_eval.count, 16u);
}

TEST(TrainThumbnet, PretrainedGroupsStepAtTheReducedRate) {
  tn::TrainState<double> state{toy_bundle(83), tn::Hyperparams{}, tn::ablation_for_method('f')};
  state.hp.momentum = 0.0;
  state.hp.theta = 0.0;
  tn::ImageDataset ds = toy_data(16, 4, 16, 41);
  tn::TrainOptions opts;
  opts.epochs = 1;
  opts.pretrain_epochs = 0;
  opts.batch_size = 16;
  opts.augment = false;

  // Two fine-tuning runs from the same weights, one marked as pretrained
  // (method f semantics) and one not: with momentum off and decay off the
  // downscaler update must shrink by exactly finetune_lr_factor.
  tn::TrainState<double> plain{state.bundle, state.hp, tn::ablation_for_method('e')};
  plain.ablation.use_moment_matching = false;

  std::vector<D> w0;
  for (const auto& e : state.bundle.downscaler.param_set()) w0.push_back(e.tensor->detached());

  tn::finetune_stage(state, ds, ds, opts);
  std::vector<D> w_pre;
  for (const auto& e : state.bundle.downscaler.param_set()) w_pre.push_back(e.tensor->detached());

  tn::finetune_stage(plain, ds, ds, opts);
  std::vector<D> w_full;
  for (const auto& e : plain.bundle.downscaler.param_set()) w_full.push_back(e.tensor->detached());

  double max_rel_err = 0.0;
  double largest_full_step = 0.0;
  for (std::size_t i = 0; i < w0.size(); ++i) {
    for (std::size_t k = 0; k < w0[i].numel(); ++k) {
      const double step_pre = w_pre[i].data()[k] - w0[i].data()[k];
      const double step_full = w_full[i].data()[k] - w0[i].data()[k];
      largest_full_step = std::max(largest_full_step, std::abs(step_full));
      if (std::abs(step_full) > 1e-12)
        max_rel_err = std::max(
            max_rel_err,
            std::abs(step_pre / step_full - state.hp.finetune_lr_factor) /
                state.hp.finetune_lr_factor);
    }
  }
  EXPECT_GT(largest_full_step, 0.0);
  EXPECT_LT(max_rel_err, 1e-9);
}

TEST(TrainThumbnet, IdenticalSeedsGiveIdenticalRuns) {
  tn::ThumbNetBundle<double> bundle = toy_bundle(91);
  tn::ImageDataset train = toy_data(64, 4, 16, 43);
  tn::ImageDataset val = toy_data(16, 4, 16, 47);
  tn::TrainOptions opts;
  opts.epochs = 1;
  opts.pretrain_epochs = 1;
  opts.batch_size = 32;
  opts.augment = true;
  opts.seed = 5;

  tn::TrainState<double> s1{bundle, tn::Hyperparams{}, tn::ablation_for_method('f')};
  tn::TrainState<double> s2{bundle, tn::Hyperparams{}, tn::ablation_for_method('f')};
  tn::TrainRunResult<double> r1 = tn::train_thumbnet(s1, train, val, opts);
  tn::TrainRunResult<double> r2 = tn::train_thumbnet(s2, train, val, opts);

  ASSERT_EQ(r1.stage_b.steps.size(), r2.stage_b.steps.size());
  for (std::size_t i = 0; i < r1.stage_a.steps.size(); ++i)
    EXPECT_NEAR(r1.stage_a.steps[i].loss, r2.stage_a.steps[i].loss, 1e-12);
  for (std::size_t i = 0; i < r1.stage_b.steps.size(); ++i)
    EXPECT_NEAR(r1.stage_b.steps[i].loss, r2.stage_b.steps[i].loss, 1e-12);
  EXPECT_DOUBLE_EQ(r1.final_eval.top1_error, r2.final_eval.top1_error);
  EXPECT_NEAR(r1.final_eval.mean_loss, r2.final_eval.mean_loss, 1e-12);
  EXPECT_EQ(tn::graph_checksum(s1.bundle.student), tn::graph_checksum(s2.bundle.student));
}

TEST(TrainThumbnet, DivergenceRaisesANumericFaultNamingTheCheckpoint) {
  const fs::path dir = fresh_dir("nan_fault");
  tn::TrainState<double> state{toy_bundle(93), tn::Hyperparams{}, tn::ablation_for_method('c')};
  tn::ImageDataset ds = toy_data(16, 4, 16, 51);
  tn::TrainOptions opts;
  opts.epochs = 1;
  opts.batch_size = 8;
  opts.augment = false;
  opts.out_dir = dir.string();
  opts.tag = "diverge";
  tn::finetune_stage(state, ds, ds, opts);
  ASSERT_FALSE(state.last_checkpoint.empty());

  state.hp.base_lr = 1e30;
  opts.epochs = 12;
  try {
    tn::finetune_stage(state, ds, ds, opts);
    FAIL() << "expected a NumericFault";
  } catch (const tn::NumericFault& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("last good checkpoint"), std::string::npos) << msg;
    EXPECT_NE(msg.find("diverge_final.tnck"), std::string::npos) << msg;
  }
}

TEST(TrainTeacher, TrainsEvaluatesAndCheckpoints) {
  const fs::path dir = fresh_dir("teacher");
  tn::Rng rng(97);
  Graph net = toy_teacher(4, 16, true, rng);
  tn::ImageDataset train = toy_data(64, 4, 16, 53);
  tn::ImageDataset val = toy_data(16, 4, 16, 59);
  tn::DatasetStats stats = train.compute_stats();
  tn::Hyperparams hp;
  hp.base_lr = 0.05;
  tn::TrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 32;
  opts.augment = false;
  opts.out_dir = dir.string();
  opts.tag = "tch";
  std::string final_path;
  tn::StageReport rep = tn::train_teacher(net, train, val, stats, hp, opts, &final_path);

  ASSERT_EQ(rep.epochs.size(), 2u);
  for (const tn::EpochRecord& e : rep.epochs) {
    EXPECT_GE(e.val_top1, 0.0);
    EXPECT_LE(e.val_top1, 1.0);
    EXPECT_GE(e.val_loss, 0.0);
  }
  for (const tn::StepRecord& s : rep.steps)
    EXPECT_NEAR(s.loss, s.cl + 0.5 * hp.theta * s.reg, 1e-12);
  ASSERT_TRUE(fs::exists(final_path));
  auto [back, back_stats] = tn::classifier_from_checkpoint<double>(tn::load_checkpoint(final_path));
  EXPECT_EQ(tn::graph_checksum(back), tn::graph_checksum(net));
  EXPECT_DOUBLE_EQ(back_stats.mean[0], stats.mean[0]);
}

TEST(TrainTeacher, ZeroEpochBudgetCheckpointsTheInitialization) {
  const fs::path dir = fresh_dir("teacher0");
  tn::Rng rng(101);
  Graph net = toy_teacher(4, 16, true, rng);
  const std::uint64_t sum = tn::graph_checksum(net);
  tn::ImageDataset train = toy_data(8, 4, 16, 61);
  tn::ImageDataset val(16, 16, 4);
  tn::TrainOptions opts;
  opts.epochs = 0;
  opts.out_dir = dir.string();
  opts.tag = "init";
  std::string final_path;
  tn::StageReport rep =
      tn::train_teacher(net, train, val, train.compute_stats(), tn::Hyperparams{}, opts, &final_path);
  EXPECT_TRUE(rep.steps.empty());
  EXPECT_TRUE(rep.epochs.empty());
  ASSERT_TRUE(fs::exists(final_path));
  auto [back, s2] = tn::classifier_from_checkpoint<double>(tn::load_checkpoint(final_path));
  EXPECT_EQ(tn::graph_checksum(back), sum);
}
