#include "ccl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <numeric>
#include <set>

namespace ccl {

void PhaseConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("epoch cap must be at least 1");
  if (patience < 1) throw ConfigError("patience must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  for (double lr : {lr_initial, lr_finetune, lr_continual, lr_fewshot}) {
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rates must be positive");
  }
  if (folds < 2) throw ConfigError("subject k-fold needs at least 2 folds");
  if (orderings < 1) throw ConfigError("at least one class ordering is required");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  loss.validate();
  augment.validate();
}

EarlyStopDecision early_stop(std::span<const double> history, std::size_t patience) {
  if (history.empty()) throw InvalidArgument("early stopping needs at least one epoch");
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i] > history[best]) best = i;
  }
  return {history.size() - 1 - best >= patience, best + 1};
}

std::vector<int> label_map(const Dataset& data, const ClassRegistry& registry) {
  std::vector<int> map(data.registry.size(), -1);
  for (std::size_t k = 0; k < data.registry.size(); ++k) {
    if (auto i = registry.find(data.registry[k].label)) map[k] = static_cast<int>(*i);
  }
  return map;
}

std::vector<int> predict(const ModelState& model, const Dataset& data, std::span<const std::size_t> indices,
                         Backend backend) {
  constexpr std::size_t kChunk = 128;
  const std::size_t k = model.width();
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto chunk = indices.subspan(start, std::min(kChunk, indices.size() - start));
    const auto logits = student_forward(model, stack_images(data, chunk), backend);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const float* row = logits.data() + i * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

namespace {

std::vector<int> mapped_labels(const Dataset& data, std::span<const std::size_t> indices, const std::vector<int>& map) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    const int l = map[static_cast<std::size_t>(data.samples.at(i).label)];
    if (l < 0) {
      throw InvalidArgument("sample " + std::to_string(i) + " has class '" +
                            data.registry[static_cast<std::size_t>(data.samples[i].label)].label +
                            "' which the model does not know");
    }
    out.push_back(l);
  }
  return out;
}

std::vector<std::size_t> filter(const Dataset& data, std::span<const std::size_t> indices,
                                const std::function<bool(int)>& keep) {
  std::vector<std::size_t> out;
  for (auto i : indices) {
    if (keep(data.samples.at(i).label)) out.push_back(i);
  }
  return out;
}

struct Evaluation {
  double all = 0;
  double fresh = -1;
  std::vector<double> per_class;
  std::vector<int> truth, predicted;
};

Evaluation evaluate(const ModelState& model, const Dataset& data, std::span<const std::size_t> test,
                    const std::vector<int>& map, int new_model_label, Backend backend) {
  Evaluation ev;
  ev.truth = mapped_labels(data, test, map);
  ev.predicted = predict(model, data, test, backend);
  ev.all = step_accuracy(ev.truth, ev.predicted);
  std::vector<std::size_t> hits(model.width(), 0), totals(model.width(), 0);
  for (std::size_t i = 0; i < ev.truth.size(); ++i) {
    ++totals[static_cast<std::size_t>(ev.truth[i])];
    hits[static_cast<std::size_t>(ev.truth[i])] += ev.truth[i] == ev.predicted[i];
  }
  for (std::size_t c = 0; c < model.width(); ++c) {
    ev.per_class.push_back(totals[c] ? static_cast<double>(hits[c]) / static_cast<double>(totals[c]) : -1.0);
  }
  if (new_model_label >= 0) ev.fresh = ev.per_class[static_cast<std::size_t>(new_model_label)];
  return ev;
}

}  // namespace

TrainResult train_model(ModelState& model, const Dataset& data, std::span<const std::size_t> train,
                        std::span<const std::size_t> test, const TrainSpec& spec, const PhaseConfig& config,
                        std::uint64_t seed) {
  if (train.empty()) throw InvalidArgument("training set is empty");
  if (test.empty()) throw InvalidArgument("test set is empty");
  if (spec.gamma > 0 && (spec.teacher == nullptr || !spec.teacher->valid())) {
    throw InvalidArgument("distillation requires a teacher snapshot");
  }
  model.check();
  const auto map = label_map(data, model.registry);
  const auto train_labels = mapped_labels(data, train, map);
  const int new_model_label = spec.new_label >= 0 ? map.at(static_cast<std::size_t>(spec.new_label)) : -1;
  const std::size_t n = train.size(), bs = config.batch_size, s = data.image_size, per = s * s * 3;

  model.params.reset_optimizer_state();
  TrainResult res;
  res.steps_per_epoch = (n + bs - 1) / bs;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng(derive_seed(seed, "order"));
  ParamSet<float> best_params = model.params;
  std::vector<double> history;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0, ce_sum = 0, dist_sum = 0;
    for (std::size_t start = 0; start < n; start += bs) {
      const std::size_t b = std::min(bs, n - start);
      Tensor batch({b, s, s, 3});
      std::vector<int> labels(b);
      for (std::size_t j = 0; j < b; ++j) {
        const std::size_t pos = order[start + j];
        const auto img = augment(data.samples[train[pos]].image, derive_seed(seed, "augment", epoch, pos), config.augment);
        std::copy_n(img.data(), per, batch.data() + j * per);
        labels[j] = train_labels[pos];
      }
      auto fwd = forward(model.params, model.spec, batch, config.backend);
      Tensor teacher_logits;
      if (spec.gamma > 0) teacher_logits = spec.teacher->forward(batch, config.backend);
      const auto loss = combined_loss_batch(fwd.logits, labels, spec.gamma > 0 ? &teacher_logits : nullptr,
                                            config.loss.temperature, spec.gamma);
      BackwardOptions opts;
      opts.backend = config.backend;
      const auto grads = backward(fwd.tape, model.params, model.spec, loss.gradient, opts);
      adam_step(model.params, grads, spec.lr);
      loss_sum += loss.total * static_cast<double>(b);
      ce_sum += loss.cross_entropy * static_cast<double>(b);
      dist_sum += loss.distillation * static_cast<double>(b);
    }
    const auto ev = evaluate(model, data, test, map, new_model_label, config.backend);
    EpochRecord rec;
    rec.phase = spec.phase;
    rec.fold = spec.fold;
    rec.iteration = spec.iteration;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(n);
    rec.cross_entropy = ce_sum / static_cast<double>(n);
    rec.distillation = dist_sum / static_cast<double>(n);
    rec.gamma = spec.gamma;
    rec.test_accuracy = ev.all;
    rec.new_class_accuracy = ev.fresh;
    rec.per_class_accuracy = ev.per_class;
    res.epochs.push_back(rec);

    if (history.empty() || ev.all > *std::max_element(history.begin(), history.end())) best_params = model.params;
    history.push_back(ev.all);
    const auto decision = early_stop(history, config.patience);
    res.best_epoch = decision.best_epoch;
    res.best_accuracy = history[decision.best_epoch - 1];
    if (decision.stop) break;
  }
  const auto stale = model.params.version();
  model.params = std::move(best_params);
  while (model.params.version() <= stale) model.params.touch();
  return res;
}

BasicResult train_basic_phase(const Dataset& data, const FoldSplit& folds, const BackboneConfig& backbone,
                              const PhaseConfig& config, std::uint64_t seed) {
  config.validate();
  if (data.empty() || data.registry.empty()) throw EmptyDataset("basic phase needs samples");
  for (const auto& s : data.samples) {
    if (data.registry[static_cast<std::size_t>(s.label)].kind != ClassKind::kBasic) {
      throw InvalidDataset("basic phase data holds compound class '" +
                           data.registry[static_cast<std::size_t>(s.label)].label + "'");
    }
  }
  if (folds.size() < 2) throw InvalidArgument("basic phase needs at least two folds");

  BasicResult res;
  double best = -1;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto split = fold_indices(data, folds, f);
    if (split.train.empty() || split.test.empty()) {
      throw InvalidDataset("fold " + std::to_string(f) + " leaves an empty training or test side");
    }
    ModelState model = make_model(backbone, data.registry, derive_seed(seed, "init", f));

    apply_freezing(model, Phase::kBasicInitial);
    TrainSpec stage1{"basic-initial", config.lr_initial, 0.0, nullptr, -1, f, 0};
    auto r1 = train_model(model, data, split.train, split.test, stage1, config, derive_seed(seed, "basic-initial", f));

    apply_freezing(model, Phase::kBasicFinetune);
    TrainSpec stage2{"basic-finetune", config.lr_finetune, 0.0, nullptr, -1, f, 0};
    auto r2 = train_model(model, data, split.train, split.test, stage2, config, derive_seed(seed, "basic-finetune", f));

    res.epochs.insert(res.epochs.end(), r1.epochs.begin(), r1.epochs.end());
    res.epochs.insert(res.epochs.end(), r2.epochs.begin(), r2.epochs.end());
    const auto map = label_map(data, model.registry);
    const auto ev = evaluate(model, data, split.test, map, -1, config.backend);
    res.fold_accuracy.push_back(ev.all);
    if (ev.all > best) {
      best = ev.all;
      res.best_fold = f;
      res.model = model;
      res.test_subjects = folds.folds[f];
      res.test_truth = ev.truth;
      res.test_predicted = ev.predicted;
    }
  }
  const auto& acc = res.fold_accuracy;
  const double n = static_cast<double>(acc.size());
  res.max_accuracy = *std::max_element(acc.begin(), acc.end());
  res.mean_accuracy = std::accumulate(acc.begin(), acc.end(), 0.0) / n;
  double ss = 0;
  for (double a : acc) ss += (a - res.mean_accuracy) * (a - res.mean_accuracy);
  res.sd_accuracy = acc.size() > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  apply_freezing(res.model, Phase::kBasicFinetune);
  res.teacher = TeacherSnapshot(res.model);
  return res;
}

std::vector<std::string> compound_classes(const Dataset& data, const PhaseConfig& config) {
  const std::set<std::string> singular(config.singular_labels.begin(), config.singular_labels.end());
  std::vector<std::string> out;
  for (const auto& c : data.registry.classes()) {
    if (c.kind != ClassKind::kCompound) continue;
    if (config.exclude_singular && singular.count(c.label)) continue;
    out.push_back(c.label);
  }
  return out;
}

ContinualResult run_continual(const ModelState& basic_model, const TeacherSnapshot& teacher, const Dataset& data,
                              const SplitIndices& split, const std::vector<std::string>& ordering,
                              const PhaseConfig& config, std::uint64_t seed, std::size_t ordering_id) {
  config.validate();
  std::set<std::string> seen;
  for (const auto& label : ordering) {
    const auto idx = data.registry.find(label);
    if (!idx || data.registry[*idx].kind != ClassKind::kCompound) {
      throw ConfigError("ordering references unknown compound class '" + label + "'");
    }
    if (basic_model.registry.find(label) || !seen.insert(label).second) {
      throw ConfigError("class '" + label + "' is already known or repeated in the ordering");
    }
  }
  const bool distill = config.distill && config.loss.gamma > 0;
  if (distill && !teacher.valid()) throw InvalidArgument("distillation requires a teacher snapshot");

  ContinualResult res;
  res.model = basic_model;
  res.ordering = ordering;
  res.log.ordering = ordering_id;
  if (teacher.valid()) res.teacher_hash_start = teacher.hash();

  auto known = [&](const ModelState& m) {
    const auto map = label_map(data, m.registry);
    return [map](int l) { return map[static_cast<std::size_t>(l)] >= 0; };
  };
  const auto basic_train = filter(data, split.train, known(basic_model));
  const auto basic_test = filter(data, split.test, known(basic_model));
  {
    const auto ev = evaluate(res.model, data, basic_test, label_map(data, res.model.registry), -1, config.backend);
    res.log.steps.push_back({0, ev.truth, ev.predicted, std::vector<std::uint8_t>(ev.truth.size(), 1)});
  }

  const std::size_t k_basic = basic_model.width();
  double gamma = distill ? config.loss.gamma : 0.0;
  ReplayMemory memory;
  std::vector<std::size_t> prev_pool;
  for (std::size_t i = 1; i <= ordering.size(); ++i) {
    const auto& label = ordering[i - 1];
    const int data_label = static_cast<int>(data.registry.index_of(label));
    expand_head(res.model, label, ClassKind::kCompound, derive_seed(seed, "expand", i));
    const std::size_t k_prev = k_basic + i - 1;
    const std::size_t cap = memory_capacity(config.memory, k_basic, k_prev, config.growing_memory);
    const auto map = label_map(data, res.model.registry);
    const std::uint64_t mem_seed = derive_seed(seed, "memory", i);
    switch (config.replay) {
      case ReplayMode::kNone:
        memory = ReplayMemory{};
        break;
      case ReplayMode::kRandom:
        memory = i == 1 ? init_memory(basic_train, cap, mem_seed) : random_select_baseline(prev_pool, cap, mem_seed);
        break;
      case ReplayMode::kPsmr:
        memory = i == 1 ? init_memory(basic_train, cap, mem_seed)
                        : (prev_pool.empty() ? ReplayMemory{} : psmr_select(data, prev_pool, res.model, cap, k_prev, map));
        break;
    }
    res.warnings.insert(res.warnings.end(), memory.warnings.begin(), memory.warnings.end());
    const auto fresh = filter(data, split.train, [&](int l) { return l == data_label; });
    if (fresh.empty()) throw InvalidDataset("no training samples for class '" + label + "'");
    const auto pool = merge_new_class(memory, fresh);
    const auto test = filter(data, split.test, [&](int l) { return map[static_cast<std::size_t>(l)] >= 0; });

    apply_freezing(res.model, Phase::kContinual);
    TrainSpec spec{"continual", config.lr_continual, gamma, distill ? &teacher : nullptr, data_label, 0, i};
    const auto tr = train_model(res.model, data, pool, test, spec, config, derive_seed(seed, "continual", i));
    res.epochs.insert(res.epochs.end(), tr.epochs.begin(), tr.epochs.end());

    const auto ev = evaluate(res.model, data, test, map, map[static_cast<std::size_t>(data_label)], config.backend);
    StepRecord rec{i, ev.truth, ev.predicted, {}};
    const int new_model_label = map[static_cast<std::size_t>(data_label)];
    for (int t : ev.truth) rec.is_new.push_back(t == new_model_label);
    res.log.steps.push_back(std::move(rec));
    res.gamma.push_back(gamma);
    res.memory_size.push_back(memory.size());
    res.steps.push_back(tr.steps_to_best());

    if (distill && config.loss.decay) gamma = gamma_decay(gamma);
    prev_pool = pool;
  }
  const auto final_map = label_map(data, res.model.registry);
  res.final_basic_accuracy = evaluate(res.model, data, basic_test, final_map, -1, config.backend).all;
  if (teacher.valid()) res.teacher_hash_end = teacher.hash();
  return res;
}

std::vector<std::vector<std::string>> make_orderings(const std::vector<std::string>& classes, std::size_t count,
                                                     std::uint64_t seed) {
  if (count == 0) throw InvalidArgument("ordering count must be positive");
  double perms = 1;
  for (std::size_t i = 2; i <= classes.size(); ++i) perms *= static_cast<double>(i);
  const bool distinct = perms >= static_cast<double>(count);
  Rng rng(seed);
  std::vector<std::vector<std::string>> out;
  std::set<std::vector<std::string>> used;
  while (out.size() < count) {
    auto p = classes;
    rng.shuffle(p);
    if (distinct && !used.insert(p).second) continue;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<ExperimentLog> BatteryResult::logs() const {
  std::vector<ExperimentLog> out;
  for (const auto& r : runs) out.push_back(r.log);
  return out;
}

BatteryResult run_ordering_battery(const ModelState& basic_model, const TeacherSnapshot& teacher,
                                   const Dataset& data, const SplitIndices& split, std::size_t count,
                                   const PhaseConfig& config, std::uint64_t seed) {
  config.validate();
  const auto orderings = make_orderings(compound_classes(data, config), count, derive_seed(seed, "orderings"));
  BatteryResult res;
  res.runs.resize(orderings.size());
  std::vector<std::exception_ptr> errors(orderings.size());
  const long n = static_cast<long>(orderings.size());
#pragma omp parallel for num_threads(static_cast<int>(config.jobs)) schedule(dynamic)
  for (long j = 0; j < n; ++j) {
    const auto u = static_cast<std::size_t>(j);
    try {
      res.runs[u] = run_continual(basic_model, teacher, data, split, orderings[u], config,
                                  derive_seed(seed, "ordering-run", u), u);
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return res;
}

FewShotResult run_fewshot(const ModelState& basic_model, const TeacherSnapshot& teacher, const Dataset& data,
                          const SplitIndices& split, const std::string& label, std::size_t shots,
                          const PhaseConfig& config, std::uint64_t seed) {
  config.validate();
  if (shots == 0) throw InvalidArgument("few-shot experiments need at least one shot");
  const auto idx = data.registry.find(label);
  if (!idx || data.registry[*idx].kind != ClassKind::kCompound) {
    throw InvalidArgument("'" + label + "' is not a compound class of the dataset");
  }
  if (basic_model.registry.find(label)) throw InvalidArgument("class '" + label + "' is already known");
  const int data_label = static_cast<int>(*idx);
  const auto candidates = filter(data, split.train, [&](int l) { return l == data_label; });
  if (candidates.size() < shots) {
    throw InvalidArgument("class '" + label + "' has " + std::to_string(candidates.size()) +
                          " training samples, fewer than " + std::to_string(shots) + " shots");
  }
  const bool distill = config.distill && config.loss.gamma > 0;
  if (distill && !teacher.valid()) throw InvalidArgument("distillation requires a teacher snapshot");

  ModelState model = basic_model;
  expand_head(model, label, ClassKind::kCompound, derive_seed(seed, "expand"));
  apply_freezing(model, Phase::kFewShot);
  const auto chosen = random_select(candidates, shots, derive_seed(seed, "shots")).items;
  const auto map = label_map(data, model.registry);
  const auto test = filter(data, split.test, [&](int l) { return map[static_cast<std::size_t>(l)] >= 0; });

  TrainSpec spec{"fewshot", config.lr_fewshot, distill ? config.loss.gamma : 0.0, distill ? &teacher : nullptr,
                 data_label, 0, 1};
  const auto tr = train_model(model, data, chosen, test, spec, config, derive_seed(seed, "fewshot"));
  const auto ev = evaluate(model, data, test, map, map[static_cast<std::size_t>(data_label)], config.backend);

  FewShotResult res;
  res.label = label;
  res.shots = shots;
  res.new_class_accuracy = ev.fresh;
  res.all_class_accuracy = ev.all;
  res.steps = tr.steps_to_best();
  res.epochs = tr.best_epoch;
  res.log = tr.epochs;
  return res;
}

}  // namespace ccl
