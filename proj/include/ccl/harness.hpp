#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccl/data.hpp"
#include "ccl/losses.hpp"
#include "ccl/metrics.hpp"
#include "ccl/model.hpp"
#include "ccl/replay.hpp"

namespace ccl {

struct PhaseConfig {
  std::size_t max_epochs = 1000;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  double lr_initial = 1e-4;
  double lr_finetune = 1e-6;
  double lr_continual = 1e-5;
  double lr_fewshot = 1e-5;
  LossConfig loss;
  bool distill = true;
  ReplayMode replay = ReplayMode::kPsmr;
  std::size_t memory = 120;
  bool growing_memory = false;
  AugmentConfig augment;
  std::size_t folds = 5;
  std::size_t orderings = 10;
  bool exclude_singular = false;
  std::vector<std::string> singular_labels{"hatred", "appalled", "awed"};
  std::size_t jobs = 1;
  Backend backend = Backend::kParallel;

  void validate() const;
};

struct EarlyStopDecision {
  bool stop = false;
  std::size_t best_epoch = 0;  // 1-based
};

/// Stops once `patience` consecutive epochs fail to strictly beat the best
/// value; the best epoch is the first one reaching the maximum.
EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience);

struct EpochRecord {
  std::string phase;
  std::size_t fold = 0;
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  double loss = 0;
  double cross_entropy = 0;
  double distillation = 0;
  double gamma = 0;
  double test_accuracy = 0;
  double new_class_accuracy = -1;  // negative when not applicable
  std::vector<double> per_class_accuracy;  // model class order; negative when a class has no test samples
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_accuracy = 0;
  std::size_t steps_per_epoch = 0;
  std::size_t steps_to_best() const { return best_epoch * steps_per_epoch; }
};

/// Maps dataset label ids to model class indices (-1 when unregistered).
std::vector<int> label_map(const Dataset& data, const ClassRegistry& registry);

/// Arg-max predictions of `model`, in model class indices.
std::vector<int> predict(const ModelState& model, const Dataset& data, std::span<const std::size_t> indices,
                         Backend backend = Backend::kParallel);

struct TrainSpec {
  std::string phase;
  double lr = 1e-4;
  double gamma = 0;
  const TeacherSnapshot* teacher = nullptr;  // required when gamma > 0
  int new_label = -1;                        // dataset label reported as new-class accuracy
  std::size_t fold = 0;
  std::size_t iteration = 0;
};

/// Adam training with per-epoch evaluation on `test` and early stopping on
/// all-class test accuracy; the best epoch's weights are restored.
TrainResult train_model(ModelState& model, const Dataset& data, std::span<const std::size_t> train,
                        std::span<const std::size_t> test, const TrainSpec& spec, const PhaseConfig& config,
                        std::uint64_t seed);

struct BasicResult {
  ModelState model;
  TeacherSnapshot teacher;
  std::vector<double> fold_accuracy;
  std::size_t best_fold = 0;
  double max_accuracy = 0, mean_accuracy = 0, sd_accuracy = 0;
  std::vector<std::string> test_subjects;  // held-out subjects of the best fold
  std::vector<int> test_truth, test_predicted;  // best fold, model class indices
  std::vector<EpochRecord> epochs;
};

/// Subject k-fold training; every fold runs a frozen-backbone stage and a
/// full fine-tune stage. Compound samples in `data` raise InvalidDataset.
BasicResult train_basic_phase(const Dataset& data, const FoldSplit& folds, const BackboneConfig& backbone,
                              const PhaseConfig& config, std::uint64_t seed);

struct ContinualResult {
  ExperimentLog log;
  std::vector<EpochRecord> epochs;
  std::vector<std::string> ordering;
  std::vector<double> gamma;          // value used at each iteration
  std::vector<std::size_t> memory_size;
  std::vector<std::size_t> steps;     // optimizer steps to the restored epoch
  std::vector<std::string> warnings;
  ModelState model;
  std::uint64_t teacher_hash_start = 0, teacher_hash_end = 0;
  double final_basic_accuracy = 0;   // basic test samples, full head
};

/// Compound classes eligible for the continual phase, honouring the
/// singular-label filter.
std::vector<std::string> compound_classes(const Dataset& data, const PhaseConfig& config);

/// One continual run over `ordering`. `split` separates training and test
/// subjects; step 0 records the basic model on the basic test samples.
ContinualResult run_continual(const ModelState& basic_model, const TeacherSnapshot& teacher, const Dataset& data,
                              const SplitIndices& split, const std::vector<std::string>& ordering,
                              const PhaseConfig& config, std::uint64_t seed, std::size_t ordering_id = 0);

/// `count` seeded permutations, distinct whenever enough exist.
std::vector<std::vector<std::string>> make_orderings(const std::vector<std::string>& classes, std::size_t count,
                                                     std::uint64_t seed);

struct BatteryResult {
  std::vector<ContinualResult> runs;
  std::vector<ExperimentLog> logs() const;
};

BatteryResult run_ordering_battery(const ModelState& basic_model, const TeacherSnapshot& teacher,
                                   const Dataset& data, const SplitIndices& split, std::size_t count,
                                   const PhaseConfig& config, std::uint64_t seed);

struct FewShotResult {
  std::string label;
  std::size_t shots = 0;
  bool skipped = false;
  std::string note;
  double new_class_accuracy = 0;
  double all_class_accuracy = 0;
  std::size_t steps = 0;
  std::size_t epochs = 0;
  std::vector<EpochRecord> log;
};

/// Learns one compound class from `shots` training samples, starting from a
/// fresh copy of the basic model. No replay memory is used.
FewShotResult run_fewshot(const ModelState& basic_model, const TeacherSnapshot& teacher, const Dataset& data,
                          const SplitIndices& split, const std::string& label, std::size_t shots,
                          const PhaseConfig& config, std::uint64_t seed);

}  // namespace ccl
