#include <gtest/gtest.h>

#include <set>

#include "ccl/harness.hpp"

using namespace ccl;

namespace {

struct World {
  Dataset all, basic;
  BackboneConfig backbone;
  PhaseConfig config;
  BasicResult result;
  SplitIndices split;
};

const World& world() {
  static const World w = [] {
    World w;
    auto sc = SynthConfig::standard();
    sc.per_class = 6;
    sc.subjects = 3;
    sc.image_size = 16;
    w.all = synth_generate(sc);
    w.basic = select_kind(w.all, ClassKind::kBasic);
    w.backbone.input_size = 16;
    w.backbone.block_channels = {4, 8, 8};
    w.backbone.hidden = 8;
    w.config.max_epochs = 2;
    w.config.patience = 1;
    w.config.batch_size = 8;
    w.config.lr_initial = w.config.lr_finetune = w.config.lr_continual = w.config.lr_fewshot = 1e-3;
    w.config.folds = 3;
    w.config.memory = 12;
    w.config.backend = Backend::kSerial;
    w.result = train_basic_phase(w.basic, subject_kfold(w.basic, 3, 5), w.backbone, w.config, 11);
    w.split = subject_indices(w.all, w.result.test_subjects);
    return w;
  }();
  return w;
}

std::vector<std::string> first_compounds(std::size_t n) {
  auto c = compound_classes(world().all, world().config);
  c.resize(n);
  return c;
}

}  // namespace

TEST(EarlyStop, PlateauStopsAtFirstBest) {
  const std::vector<double> h{0.5, 0.6, 0.6, 0.6};
  const auto d = early_stop(h, 2);
  EXPECT_TRUE(d.stop);
  EXPECT_EQ(d.best_epoch, 2u);
}

TEST(EarlyStop, ImprovementResetsCounter) {
  EXPECT_FALSE(early_stop(std::vector<double>{0.5, 0.4, 0.7}, 2).stop);
  EXPECT_EQ(early_stop(std::vector<double>{0.5, 0.4, 0.7}, 2).best_epoch, 3u);
  EXPECT_FALSE(early_stop(std::vector<double>{0.5, 0.4}, 2).stop);
  EXPECT_TRUE(early_stop(std::vector<double>{0.5, 0.4, 0.3}, 2).stop);
  EXPECT_FALSE(early_stop(std::vector<double>{0.9}, 1).stop);
  EXPECT_THROW(early_stop(std::vector<double>{}, 1), InvalidArgument);
}

TEST(PhaseConfig, RejectsBadValues) {
  PhaseConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PhaseConfig{};
  c.lr_continual = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = PhaseConfig{};
  c.folds = 1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(BasicPhase, RejectsCompoundSamples) {
  const auto& w = world();
  EXPECT_THROW(train_basic_phase(w.all, subject_kfold(w.all, 3, 5), w.backbone, w.config, 1), InvalidDataset);
}

TEST(BasicPhase, FoldStatistics) {
  const auto& r = world().result;
  ASSERT_EQ(r.fold_accuracy.size(), 3u);
  EXPECT_DOUBLE_EQ(r.max_accuracy, *std::max_element(r.fold_accuracy.begin(), r.fold_accuracy.end()));
  EXPECT_DOUBLE_EQ(r.fold_accuracy[r.best_fold], r.max_accuracy);
  EXPECT_GE(r.sd_accuracy, 0.0);
  EXPECT_EQ(r.model.width(), 6u);
  EXPECT_EQ(r.teacher.width(), 6u);
  EXPECT_EQ(r.test_subjects.size(), 1u);
  EXPECT_EQ(r.model.params.frozen_count(), 0u);
  for (const auto& e : r.epochs) EXPECT_TRUE(e.phase == "basic-initial" || e.phase == "basic-finetune");
}

TEST(TrainModel, DistillationRequiresTeacher) {
  const auto& w = world();
  ModelState m = w.result.model;
  const auto split = subject_indices(w.basic, w.result.test_subjects);
  TrainSpec spec{"continual", 1e-3, 0.1, nullptr, -1, 0, 1};
  EXPECT_THROW(train_model(m, w.basic, split.train, split.test, spec, w.config, 1), InvalidArgument);
}

TEST(TrainModel, RestoresBestEpoch) {
  const auto& w = world();
  ModelState m = w.result.model;
  auto cfg = w.config;
  cfg.max_epochs = 4;
  cfg.patience = 4;
  const auto split = subject_indices(w.basic, w.result.test_subjects);
  TrainSpec spec{"basic-finetune", 5e-3, 0.0, nullptr, -1, 0, 0};
  const auto r = train_model(m, w.basic, split.train, split.test, spec, cfg, 3);
  ASSERT_EQ(r.epochs.size(), 4u);
  double best = 0;
  for (const auto& e : r.epochs) best = std::max(best, e.test_accuracy);
  EXPECT_DOUBLE_EQ(r.best_accuracy, best);
  EXPECT_EQ(r.steps_per_epoch, (split.train.size() + 7) / 8);
  const auto truth = [&] {
    std::vector<int> t;
    for (auto i : split.test) t.push_back(w.basic.samples[i].label);
    return t;
  }();
  EXPECT_DOUBLE_EQ(step_accuracy(truth, predict(m, w.basic, split.test, Backend::kSerial)), best);
}

TEST(Continual, HeadGrowsAndGammaDecays) {
  const auto& w = world();
  const auto before = param_hash(w.result.model.params);
  const auto r = run_continual(w.result.model, w.result.teacher, w.all, w.split, first_compounds(3), w.config, 7);
  ASSERT_EQ(r.log.steps.size(), 4u);
  EXPECT_EQ(r.model.width(), 9u);
  for (std::size_t i = 0; i < r.log.steps.size(); ++i) EXPECT_EQ(r.log.steps[i].step, i);
  for (auto f : r.log.steps[0].is_new) EXPECT_EQ(f, 1);
  for (std::size_t i = 1; i < 4; ++i) {
    for (int t : r.log.steps[i].truth) EXPECT_LT(t, static_cast<int>(6 + i));
  }
  ASSERT_EQ(r.gamma.size(), 3u);
  EXPECT_DOUBLE_EQ(r.gamma[0], 0.1);
  EXPECT_NEAR(r.gamma[2], 0.1 * gamma_decay_factor() * gamma_decay_factor(), 1e-15);
  EXPECT_EQ(r.teacher_hash_start, r.teacher_hash_end);
  EXPECT_EQ(param_hash(w.result.model.params), before);
  for (auto m : r.memory_size) EXPECT_LE(m, 12u);
}

TEST(Continual, NoCompoundsLeavesOnlyStepZero) {
  const auto& w = world();
  const auto r = run_continual(w.result.model, w.result.teacher, w.all, w.split, {}, w.config, 7);
  ASSERT_EQ(r.log.steps.size(), 1u);
  EXPECT_EQ(r.model.width(), 6u);
}

TEST(Continual, AblationsZeroDistillationAndMemory) {
  const auto& w = world();
  auto cfg = w.config;
  cfg.distill = false;
  cfg.replay = ReplayMode::kNone;
  const auto r = run_continual(w.result.model, TeacherSnapshot{}, w.all, w.split, first_compounds(2), cfg, 7);
  for (const auto& e : r.epochs) {
    EXPECT_EQ(e.gamma, 0.0);
    EXPECT_EQ(e.distillation, 0.0);
    EXPECT_DOUBLE_EQ(e.loss, e.cross_entropy);
  }
  for (auto m : r.memory_size) EXPECT_EQ(m, 0u);
}

TEST(Continual, RejectsUnknownOrKnownLabels) {
  const auto& w = world();
  EXPECT_THROW(run_continual(w.result.model, w.result.teacher, w.all, w.split, {"nope"}, w.config, 1), ConfigError);
  EXPECT_THROW(run_continual(w.result.model, w.result.teacher, w.all, w.split, {"happy"}, w.config, 1), ConfigError);
  const auto c = first_compounds(1);
  EXPECT_THROW(run_continual(w.result.model, w.result.teacher, w.all, w.split, {c[0], c[0]}, w.config, 1),
               ConfigError);
}

TEST(Continual, SingularFilter) {
  auto cfg = world().config;
  EXPECT_EQ(compound_classes(world().all, cfg).size(), 15u);
  cfg.exclude_singular = true;
  const auto c = compound_classes(world().all, cfg);
  EXPECT_EQ(c.size(), 12u);
  for (const auto& l : c) EXPECT_TRUE(l != "hatred" && l != "appalled" && l != "awed");
}

TEST(Orderings, DistinctAndSeeded) {
  const std::vector<std::string> cls{"a", "b", "c", "d"};
  const auto o = make_orderings(cls, 10, 3);
  EXPECT_EQ(std::set<std::vector<std::string>>(o.begin(), o.end()).size(), 10u);
  EXPECT_EQ(o, make_orderings(cls, 10, 3));
  for (const auto& p : o) EXPECT_TRUE(std::is_permutation(p.begin(), p.end(), cls.begin()));
  EXPECT_EQ(make_orderings({"a", "b"}, 5, 1).size(), 5u);
  EXPECT_EQ(make_orderings({}, 2, 1).size(), 2u);
}

TEST(Battery, ParallelMatchesSerial) {
  const auto& w = world();
  auto cfg = w.config;
  auto sc = SynthConfig::standard();
  sc.per_class = 6;
  sc.subjects = 3;
  sc.image_size = 16;
  sc.compound.resize(2);
  const auto sub = synth_generate(sc);
  const auto split = subject_indices(sub, w.result.test_subjects);

  cfg.jobs = 1;
  const auto a = run_ordering_battery(w.result.model, w.result.teacher, sub, split, 2, cfg, 9);
  cfg.jobs = 2;
  const auto b = run_ordering_battery(w.result.model, w.result.teacher, sub, split, 2, cfg, 9);
  ASSERT_EQ(a.runs.size(), 2u);
  EXPECT_NE(a.runs[0].ordering, a.runs[1].ordering);
  for (std::size_t j = 0; j < 2; ++j) {
    EXPECT_EQ(a.runs[j].ordering, b.runs[j].ordering);
    ASSERT_EQ(a.runs[j].log.steps.size(), b.runs[j].log.steps.size());
    for (std::size_t s = 0; s < a.runs[j].log.steps.size(); ++s) {
      EXPECT_EQ(a.runs[j].log.steps[s].predicted, b.runs[j].log.steps[s].predicted);
    }
    EXPECT_EQ(param_hash(a.runs[j].model.params), param_hash(b.runs[j].model.params));
  }
  const auto one = run_ordering_battery(w.result.model, w.result.teacher, sub, split, 1, cfg, 9);
  EXPECT_EQ(one.runs.size(), 1u);
}

TEST(FewShot, IndependentOfRunOrder) {
  const auto& w = world();
  const auto c = first_compounds(2);
  const auto before = param_hash(w.result.model.params);
  const auto a1 = run_fewshot(w.result.model, w.result.teacher, w.all, w.split, c[0], 1, w.config, 4);
  const auto b1 = run_fewshot(w.result.model, w.result.teacher, w.all, w.split, c[1], 1, w.config, 4);
  const auto b2 = run_fewshot(w.result.model, w.result.teacher, w.all, w.split, c[1], 1, w.config, 4);
  const auto a2 = run_fewshot(w.result.model, w.result.teacher, w.all, w.split, c[0], 1, w.config, 4);
  EXPECT_EQ(a1.new_class_accuracy, a2.new_class_accuracy);
  EXPECT_EQ(a1.all_class_accuracy, a2.all_class_accuracy);
  EXPECT_EQ(b1.new_class_accuracy, b2.new_class_accuracy);
  EXPECT_EQ(param_hash(w.result.model.params), before);
  EXPECT_EQ(a1.steps, a1.epochs * 1);
}

TEST(FewShot, RejectsBadRequests) {
  const auto& w = world();
  const auto c = first_compounds(1);
  EXPECT_THROW(run_fewshot(w.result.model, w.result.teacher, w.all, w.split, c[0], 0, w.config, 1), InvalidArgument);
  EXPECT_THROW(run_fewshot(w.result.model, w.result.teacher, w.all, w.split, c[0], 1000, w.config, 1),
               InvalidArgument);
  EXPECT_THROW(run_fewshot(w.result.model, w.result.teacher, w.all, w.split, "happy", 1, w.config, 1),
               InvalidArgument);
}
