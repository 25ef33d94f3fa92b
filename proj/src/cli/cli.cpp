#include "ccl/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ccl/checkpoint.hpp"

namespace ccl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Input problems the user can fix (bad paths, unreadable data); exit code 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

template <typename T>
const char* type_name() {
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  else if constexpr (std::is_same_v<T, std::string>) return "a string";
  else if constexpr (std::is_integral_v<T>) return "a non-negative integer";
  else if constexpr (std::is_floating_point_v<T>) return "a number";
  else return "a list";
}

class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  bool get(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return false;
    bool ok = true;
    if constexpr (std::is_same_v<T, bool>) {
      ok = it->is_boolean();
    } else if constexpr (std::is_integral_v<T>) {
      ok = it->is_number_unsigned() || (it->is_number_integer() && it->template get<long long>() >= 0);
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = it->is_number();
    }
    if (ok) {
      try {
        out = it->template get<T>();
      } catch (const json::exception&) {
        ok = false;
      }
    }
    if (!ok) throw ConfigError(field(key) + ": expected " + type_name<T>() + ", got " + it->dump());
    return true;
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key '" + field(item.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const json kEmpty = json::object();

Backend parse_backend(const std::string& s) {
  if (s == "parallel") return Backend::kParallel;
  if (s == "serial") return Backend::kSerial;
  throw ConfigError("training.backend: expected 'parallel' or 'serial', got '" + s + "'");
}

std::string backend_name(Backend b) { return b == Backend::kSerial ? "serial" : "parallel"; }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string join(const std::vector<std::string>& v, char sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

}  // namespace

RunConfig parse_config(const json& doc) {
  RunConfig c;
  Fields top(doc, "");
  int version = -1;
  if (!top.get("schema_version", version)) throw ConfigError("schema_version: required");
  if (version != kConfigSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", got " +
                      std::to_string(version));
  }
  top.get("seed", c.seed);
  std::string out_dir;
  if (top.get("output_dir", out_dir)) c.output_dir = out_dir;

  if (const json* d = top.child("data")) {
    Fields f(*d, "data");
    std::string source = "synthetic";
    f.get("source", source);
    if (source == "synthetic") c.data.kind = DataSource::Kind::kSynthetic;
    else if (source == "manifest") c.data.kind = DataSource::Kind::kManifest;
    else throw ConfigError("data.source: expected 'synthetic' or 'manifest', got '" + source + "'");
    std::string path;
    if (f.get("manifest", path)) c.data.manifest = path;
    if (f.get("root", path)) c.data.root = path;
    f.get("image_size", c.data.image_size);
    f.get("basic_labels", c.data.basic_labels);
    if (const json* s = f.child("synthetic")) {
      Fields g(*s, "data.synthetic");
      g.get("per_class", c.data.synth.per_class);
      g.get("subjects", c.data.synth.subjects);
      g.get("noise", c.data.synth.noise);
      c.data.synth_seed_set = g.get("seed", c.data.synth.seed);
      std::vector<std::string> compound;
      if (g.get("compound", compound)) {
        std::vector<SynthCompound> keep;
        for (const auto& label : compound) {
          const auto it = std::find_if(c.data.synth.compound.begin(), c.data.synth.compound.end(),
                                       [&](const SynthCompound& sc) { return sc.label == label; });
          if (it == c.data.synth.compound.end()) {
            throw ConfigError("data.synthetic.compound: unknown synthetic class '" + label + "'");
          }
          keep.push_back(*it);
        }
        c.data.synth.compound = keep;
      }
      g.finish();
    }
    f.finish();
    if (c.data.kind == DataSource::Kind::kManifest && c.data.manifest.empty()) {
      throw ConfigError("data.manifest: required when data.source is 'manifest'");
    }
  }
  c.data.synth.image_size = c.data.image_size;
  c.backbone.input_size = c.data.image_size;

  if (const json* b = top.child("backbone")) {
    Fields f(*b, "backbone");
    f.get("block_channels", c.backbone.block_channels);
    f.get("kernel", c.backbone.kernel);
    f.get("hidden", c.backbone.hidden);
    f.finish();
  }
  if (const json* t = top.child("training")) {
    Fields f(*t, "training");
    f.get("max_epochs", c.phase.max_epochs);
    f.get("patience", c.phase.patience);
    f.get("batch_size", c.phase.batch_size);
    f.get("lr_initial", c.phase.lr_initial);
    f.get("lr_finetune", c.phase.lr_finetune);
    f.get("lr_continual", c.phase.lr_continual);
    f.get("lr_fewshot", c.phase.lr_fewshot);
    f.get("folds", c.phase.folds);
    f.get("jobs", c.phase.jobs);
    std::string backend;
    if (f.get("backend", backend)) c.phase.backend = parse_backend(backend);
    f.finish();
  }
  if (const json* l = top.child("loss")) {
    Fields f(*l, "loss");
    f.get("temperature", c.phase.loss.temperature);
    f.get("gamma", c.phase.loss.gamma);
    f.get("gamma_decay", c.phase.loss.decay);
    f.finish();
  }
  if (const json* a = top.child("augment")) {
    Fields f(*a, "augment");
    f.get("enabled", c.phase.augment.enabled);
    f.get("flip_probability", c.phase.augment.flip_probability);
    f.get("max_translate", c.phase.augment.max_translate);
    f.get("zoom_min", c.phase.augment.zoom_min);
    f.get("zoom_max", c.phase.augment.zoom_max);
    f.finish();
  }
  if (const json* k = top.child("continual")) {
    Fields f(*k, "continual");
    std::string replay;
    if (f.get("replay", replay)) {
      try {
        c.phase.replay = parse_replay_mode(replay);
      } catch (const ConfigError& e) {
        throw ConfigError(std::string("continual.replay: ") + e.what());
      }
    }
    f.get("memory", c.phase.memory);
    f.get("growing_memory", c.phase.growing_memory);
    f.get("distill", c.phase.distill);
    f.get("orderings", c.phase.orderings);
    f.get("exclude_singular", c.phase.exclude_singular);
    f.get("singular_labels", c.phase.singular_labels);
    f.get("include_step0", c.include_step0);
    f.get("classes", c.classes);
    f.finish();
  }
  if (const json* s = top.child("fewshot")) {
    Fields f(*s, "fewshot");
    f.get("shots", c.shots);
    f.finish();
  }
  top.finish();

  try {
    c.backbone.validate();
    c.phase.validate();
    if (c.data.kind == DataSource::Kind::kSynthetic) c.data.synth.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (c.shots.empty()) throw ConfigError("fewshot.shots: at least one shot count is required");
  for (auto s : c.shots) {
    if (s == 0) throw ConfigError("fewshot.shots: shot counts must be positive");
  }
  return c;
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return parse_config(doc);
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str(), path.string());
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.rfind(path.string(), 0) == 0 ? msg : path.string() + ": " + msg);
  }
}

json config_to_json(const RunConfig& c) {
  json synth_compound = json::array();
  for (const auto& sc : c.data.synth.compound) synth_compound.push_back(sc.label);
  json data{{"source", c.data.kind == DataSource::Kind::kSynthetic ? "synthetic" : "manifest"},
            {"image_size", c.data.image_size},
            {"basic_labels", c.data.basic_labels},
            {"synthetic",
             {{"per_class", c.data.synth.per_class},
              {"subjects", c.data.synth.subjects},
              {"noise", c.data.synth.noise},
              {"compound", synth_compound}}}};
  if (c.data.synth_seed_set) data["synthetic"]["seed"] = c.data.synth.seed;
  if (!c.data.manifest.empty()) data["manifest"] = c.data.manifest.string();
  if (!c.data.root.empty()) data["root"] = c.data.root.string();
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"data", data},
      {"backbone", {{"block_channels", c.backbone.block_channels}, {"kernel", c.backbone.kernel}, {"hidden", c.backbone.hidden}}},
      {"training",
       {{"max_epochs", c.phase.max_epochs},
        {"patience", c.phase.patience},
        {"batch_size", c.phase.batch_size},
        {"lr_initial", c.phase.lr_initial},
        {"lr_finetune", c.phase.lr_finetune},
        {"lr_continual", c.phase.lr_continual},
        {"lr_fewshot", c.phase.lr_fewshot},
        {"folds", c.phase.folds},
        {"jobs", c.phase.jobs},
        {"backend", backend_name(c.phase.backend)}}},
      {"loss", {{"temperature", c.phase.loss.temperature}, {"gamma", c.phase.loss.gamma}, {"gamma_decay", c.phase.loss.decay}}},
      {"augment",
       {{"enabled", c.phase.augment.enabled},
        {"flip_probability", c.phase.augment.flip_probability},
        {"max_translate", c.phase.augment.max_translate},
        {"zoom_min", c.phase.augment.zoom_min},
        {"zoom_max", c.phase.augment.zoom_max}}},
      {"continual",
       {{"replay", std::string(to_string(c.phase.replay))},
        {"memory", c.phase.memory},
        {"growing_memory", c.phase.growing_memory},
        {"distill", c.phase.distill},
        {"orderings", c.phase.orderings},
        {"exclude_singular", c.phase.exclude_singular},
        {"singular_labels", c.phase.singular_labels},
        {"include_step0", c.include_step0},
        {"classes", c.classes}}},
      {"fewshot", {{"shots", c.shots}}},
  };
}

fs::path resolve_output_dir(const RunConfig& config) {
  if (const char* env = std::getenv("CCL_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return config.output_dir;
}

Dataset restrict_compounds(const Dataset& data, const std::vector<std::string>& keep) {
  if (keep.empty()) return data;
  const std::set<std::string> wanted(keep.begin(), keep.end());
  for (const auto& label : wanted) {
    const auto i = data.registry.find(label);
    if (!i || data.registry[*i].kind != ClassKind::kCompound) {
      throw ConfigError("continual.classes: '" + label + "' is not a compound class of the dataset");
    }
  }
  Dataset out;
  out.image_size = data.image_size;
  std::vector<int> remap(data.registry.size(), -1);
  for (std::size_t k = 0; k < data.registry.size(); ++k) {
    const auto& c = data.registry[k];
    if (c.kind == ClassKind::kBasic || wanted.count(c.label)) remap[k] = static_cast<int>(out.registry.add(c.label, c.kind));
  }
  for (const auto& s : data.samples) {
    const int l = remap[static_cast<std::size_t>(s.label)];
    if (l >= 0) out.samples.push_back({s.image, l, s.subject});
  }
  return out;
}

Dataset load_data(const RunConfig& config) {
  Dataset data;
  try {
    if (config.data.kind == DataSource::Kind::kSynthetic) {
      auto sc = config.data.synth;
      if (!config.data.synth_seed_set) sc.seed = derive_seed(config.seed, "data");
      data = synth_generate(sc);
    } else {
      const fs::path root = config.data.root.empty() ? config.data.manifest.parent_path() : config.data.root;
      data = load_manifest(root, config.data.manifest, config.data.image_size, config.data.basic_labels);
    }
  } catch (const IoError& e) {
    throw UsageError(e.what());
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  } catch (const EmptyDataset& e) {
    throw UsageError(e.what());
  }
  return restrict_compounds(data, config.classes);
}

namespace {

json epoch_json(const EpochRecord& e) {
  json j{{"type", "epoch"},
         {"phase", e.phase},
         {"fold", e.fold},
         {"iteration", e.iteration},
         {"epoch", e.epoch},
         {"loss", e.loss},
         {"cross_entropy", e.cross_entropy},
         {"distillation", e.distillation},
         {"gamma", e.gamma},
         {"test_accuracy", e.test_accuracy},
         {"per_class_accuracy", e.per_class_accuracy}};
  if (e.new_class_accuracy >= 0) j["new_class_accuracy"] = e.new_class_accuracy;
  return j;
}

void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  write_text(path, text);
}

struct LoadedModel {
  ModelState model;
  TeacherSnapshot teacher;
  json extra;
};

LoadedModel load_basic(const fs::path& checkpoint, const fs::path& teacher_path) {
  if (!fs::is_regular_file(checkpoint)) throw UsageError("checkpoint '" + checkpoint.string() + "' not found");
  LoadedModel out;
  const auto ckpt = load_checkpoint(checkpoint);
  out.model = model_from_checkpoint(ckpt);
  out.extra = json::parse(checkpoint_extra(ckpt));
  fs::path tp = teacher_path;
  if (tp.empty() && fs::is_regular_file(checkpoint.parent_path() / "teacher.ckpt")) tp = checkpoint.parent_path() / "teacher.ckpt";
  if (!tp.empty()) {
    if (!fs::is_regular_file(tp)) throw UsageError("teacher checkpoint '" + tp.string() + "' not found");
    auto t = load_model(tp);
    if (t.registry != out.model.registry) throw VersionError("teacher and model checkpoints disagree on classes");
    out.teacher = TeacherSnapshot(t);
  } else {
    out.teacher = TeacherSnapshot(out.model);
  }
  return out;
}

std::vector<std::string> checkpoint_subjects(const json& extra) {
  if (!extra.contains("test_subjects") || !extra["test_subjects"].is_array()) {
    throw FormatError("checkpoint metadata lacks the held-out test subjects");
  }
  return extra["test_subjects"].get<std::vector<std::string>>();
}

void check_input_size(const ModelState& model, const Dataset& data) {
  if (model.backbone.input_size != data.image_size) {
    throw ConfigError("checkpoint expects " + std::to_string(model.backbone.input_size) + " px images but data.image_size is " +
                      std::to_string(data.image_size));
  }
}

// --- commands ---------------------------------------------------------------

void cmd_synth(const RunConfig& cfg) {
  if (cfg.data.kind != DataSource::Kind::kSynthetic) throw ConfigError("synth-gen needs data.source = 'synthetic'");
  const auto dir = resolve_output_dir(cfg) / "dataset";
  const auto data = load_data(cfg);
  ensure_dir(dir);
  write_dataset(data, dir);
  std::cout << "wrote " << data.size() << " images to " << dir.string() << "\n";
}

void cmd_train_basic(const RunConfig& cfg) {
  const auto all = load_data(cfg);
  const auto basic = select_kind(all, ClassKind::kBasic);
  if (basic.empty()) throw UsageError("dataset has no basic-class samples");
  const auto folds = subject_kfold(basic, cfg.phase.folds, derive_seed(cfg.seed, "folds"));
  const auto res = train_basic_phase(basic, folds, cfg.backbone, cfg.phase, derive_seed(cfg.seed, "basic"));

  const auto dir = resolve_output_dir(cfg) / "basic";
  ensure_dir(dir);
  json extra{{"test_subjects", res.test_subjects},
             {"best_fold", res.best_fold},
             {"fold_accuracy", res.fold_accuracy},
             {"seed", cfg.seed}};
  save_model(dir / "model.ckpt", res.model, extra.dump());
  save_model(dir / "teacher.ckpt", res.teacher.state(), extra.dump());

  std::string folds_csv = "fold,accuracy,test_subjects\n";
  for (std::size_t f = 0; f < res.fold_accuracy.size(); ++f) {
    folds_csv += std::to_string(f) + "," + format_metric(res.fold_accuracy[f]) + "," + join(folds.folds[f], ';') + "\n";
  }
  write_text(dir / "folds.csv", folds_csv);
  write_text(dir / "summary.csv", "folds,max_accuracy,mean_accuracy,sd_accuracy\n" + std::to_string(res.fold_accuracy.size()) +
                                      "," + format_metric(res.max_accuracy) + "," + format_metric(res.mean_accuracy) + "," +
                                      format_metric(res.sd_accuracy) + "\n");
  std::vector<json> log;
  for (const auto& e : res.epochs) log.push_back(epoch_json(e));
  write_jsonl(dir / "train_log.jsonl", log);
  write_confusion_csv(dir / "confusion.csv", confusion_matrix(res.test_truth, res.test_predicted, res.model.width()),
                      res.model.registry.labels());
  std::cout << "basic phase over " << res.fold_accuracy.size() << " folds: max " << format_metric(res.max_accuracy)
            << " mean " << format_metric(res.mean_accuracy) << " sd " << format_metric(res.sd_accuracy) << "\n"
            << "checkpoint " << (dir / "model.ckpt").string() << "\n";
}

std::vector<json> run_log_records(const ContinualResult& run, std::size_t id) {
  std::vector<json> out;
  out.push_back({{"type", "run"}, {"ordering_id", id}, {"ordering", run.ordering}, {"classes", run.model.registry.labels()}});
  for (const auto& e : run.epochs) out.push_back(epoch_json(e));
  for (const auto& s : run.log.steps) {
    json j{{"type", "step"},
           {"step", s.step},
           {"truth", s.truth},
           {"predicted", s.predicted},
           {"is_new", s.is_new},
           {"accuracy_all", step_accuracy(s, Scope::kAll)},
           {"accuracy_new", step_accuracy(s, Scope::kNew)}};
    if (s.step > 0) {
      j["label"] = run.ordering[s.step - 1];
      j["gamma"] = run.gamma[s.step - 1];
      j["memory_size"] = run.memory_size[s.step - 1];
      j["steps"] = run.steps[s.step - 1];
    }
    out.push_back(j);
  }
  return out;
}

void cmd_continual(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& teacher_path) {
  const auto out = resolve_output_dir(cfg);
  const auto basic = load_basic(checkpoint.empty() ? out / "basic" / "model.ckpt" : checkpoint, teacher_path);
  const auto data = load_data(cfg);
  check_input_size(basic.model, data);
  const auto split = subject_indices(data, checkpoint_subjects(basic.extra));
  const bool distill = cfg.phase.distill && cfg.phase.loss.gamma > 0;
  const auto hash_before = basic.teacher.hash();
  const auto battery = run_ordering_battery(basic.model, distill ? basic.teacher : TeacherSnapshot{}, data, split,
                                            cfg.phase.orderings, cfg.phase, derive_seed(cfg.seed, "continual"));
  if (basic.teacher.hash() != hash_before) throw InvalidState("teacher snapshot changed during the battery");

  const auto dir = out / "continual";
  ensure_dir(dir);
  std::size_t warnings = 0;
  std::string summary = "# orderings=" + std::to_string(battery.runs.size()) +
                        " include_step0=" + (cfg.include_step0 ? "true" : "false") + "\n" +
                        "ordering,classes,overall_new,overall_all,final_basic_accuracy\n";
  double basic_sum = 0;
  for (std::size_t j = 0; j < battery.runs.size(); ++j) {
    const auto& run = battery.runs[j];
    char name[32];
    std::snprintf(name, sizeof name, "run_%03zu.jsonl", j);
    write_jsonl(dir / name, run_log_records(run, j));
    const std::vector<ExperimentLog> one{run.log};
    summary += std::to_string(j) + "," + join(run.ordering, ';') + "," +
               format_metric(overall_accuracy(one, Scope::kNew, cfg.include_step0)) + "," +
               format_metric(overall_accuracy(one, Scope::kAll, cfg.include_step0)) + "," +
               format_metric(run.final_basic_accuracy) + "\n";
    basic_sum += run.final_basic_accuracy;
    for (const auto& w : run.warnings) std::cerr << "warning: ordering " << j << ": " << w << "\n";
    warnings += run.warnings.size();
  }
  const auto logs = battery.logs();
  const double overall_new = overall_accuracy(logs, Scope::kNew, cfg.include_step0);
  const double overall_all = overall_accuracy(logs, Scope::kAll, cfg.include_step0);
  const double basic_mean = basic_sum / static_cast<double>(battery.runs.size());
  summary += "mean,," + format_metric(overall_new) + "," + format_metric(overall_all) + "," + format_metric(basic_mean) + "\n";
  write_text(dir / "summary.csv", summary);
  write_metrics_csv(dir / "metrics.csv", logs, cfg.include_step0);
  const json summary_json{{"orderings", battery.runs.size()},
                          {"include_step0", cfg.include_step0},
                          {"overall_accuracy", {{"new", overall_new}, {"all", overall_all}}},
                          {"final_basic_accuracy", basic_mean},
                          {"replay", std::string(to_string(cfg.phase.replay))},
                          {"distill", distill},
                          {"warnings", warnings}};
  write_text(dir / "summary.json", summary_json.dump(2) + "\n");
  std::cout << "continual battery of " << battery.runs.size() << " orderings: overall accuracy (new, all) = ("
            << format_metric(overall_new) << ", " << format_metric(overall_all) << "), final basic accuracy "
            << format_metric(basic_mean) << "\n";
}

void cmd_fewshot(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& teacher_path) {
  const auto out = resolve_output_dir(cfg);
  const auto basic = load_basic(checkpoint.empty() ? out / "basic" / "model.ckpt" : checkpoint, teacher_path);
  const auto data = load_data(cfg);
  check_input_size(basic.model, data);
  const auto split = subject_indices(data, checkpoint_subjects(basic.extra));
  const auto labels = compound_classes(data, cfg.phase);
  for (auto s : cfg.shots) {
    if (s != 1 && s != 3 && s != 5) std::cerr << "warning: " << s << " shots is outside the usual 1/3/5 settings\n";
  }
  const bool distill = cfg.phase.distill && cfg.phase.loss.gamma > 0;
  const TeacherSnapshot teacher = distill ? basic.teacher : TeacherSnapshot{};

  struct Job {
    std::string label;
    std::size_t shots;
  };
  std::vector<Job> jobs;
  for (auto s : cfg.shots) {
    for (const auto& l : labels) jobs.push_back({l, s});
  }
  std::vector<FewShotResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  const long n = static_cast<long>(jobs.size());
#pragma omp parallel for num_threads(static_cast<int>(cfg.phase.jobs)) schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    const auto& job = jobs[u];
    try {
      results[u] = run_fewshot(basic.model, teacher, data, split, job.label, job.shots, cfg.phase,
                               derive_seed(cfg.seed, "fewshot", hash_name(job.label), job.shots));
    } catch (const InvalidArgument& e) {
      results[u].label = job.label;
      results[u].shots = job.shots;
      results[u].skipped = true;
      results[u].note = e.what();
    } catch (...) {
      errors[u] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const auto dir = out / "fewshot";
  ensure_dir(dir);
  std::string csv = "label,shots,status,new_class_accuracy,all_class_accuracy,steps,epochs\n";
  std::vector<json> log;
  std::size_t warnings = 0;
  for (const auto& r : results) {
    if (r.skipped) {
      csv += r.label + "," + std::to_string(r.shots) + ",skipped,,,,\n";
      std::cerr << "warning: skipped " << r.label << " at " << r.shots << " shots: " << r.note << "\n";
      ++warnings;
      continue;
    }
    csv += r.label + "," + std::to_string(r.shots) + ",ok," + format_metric(r.new_class_accuracy) + "," +
           format_metric(r.all_class_accuracy) + "," + std::to_string(r.steps) + "," + std::to_string(r.epochs) + "\n";
    for (const auto& e : r.log) {
      auto j = epoch_json(e);
      j["label"] = r.label;
      j["shots"] = r.shots;
      log.push_back(j);
    }
  }
  write_text(dir / "fewshot.csv", csv);
  write_jsonl(dir / "train_log.jsonl", log);
  std::cout << "few-shot: " << results.size() - warnings << " experiments, " << warnings << " skipped\n";
}

Image8 heat_gray(const Heatmap& h) {
  Image8 img{h.h, h.w, 1, std::vector<std::uint8_t>(h.h * h.w)};
  for (std::size_t i = 0; i < h.values.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(h.values[i], 0.0, 1.0) * 255.0));
  }
  return img;
}

Image8 heat_overlay(const Image8& base, const Heatmap& h) {
  Image8 img{h.h, h.w, 3, std::vector<std::uint8_t>(h.h * h.w * 3)};
  auto ramp = [](double v) { return std::clamp(1.5 - std::abs(v), 0.0, 1.0); };
  for (std::size_t p = 0; p < h.h * h.w; ++p) {
    const double v = std::clamp(h.values[p], 0.0, 1.0);
    const double colour[3] = {ramp(4 * v - 3), ramp(4 * v - 2), ramp(4 * v - 1)};
    for (std::size_t c = 0; c < 3; ++c) {
      const double src = base.pixels[p * base.c + (base.c == 3 ? c : 0)] / 255.0;
      img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround((0.5 * src + 0.5 * colour[c]) * 255.0));
    }
  }
  return img;
}

void cmd_gradcam(const RunConfig& cfg, const fs::path& checkpoint, const fs::path& image_path,
                 const std::string& label, const std::string& layer, const fs::path& out_path) {
  const auto outdir = resolve_output_dir(cfg);
  const fs::path ckpt_path = checkpoint.empty() ? outdir / "basic" / "model.ckpt" : checkpoint;
  if (!fs::is_regular_file(ckpt_path)) throw UsageError("checkpoint '" + ckpt_path.string() + "' not found");
  const auto model = load_model(ckpt_path);
  const std::size_t cls = model.registry.index_of(label);
  if (!fs::is_regular_file(image_path)) throw UsageError("image '" + image_path.string() + "' not found");
  Image8 img;
  try {
    img = resize_bilinear(read_image(image_path), model.backbone.input_size, model.backbone.input_size);
  } catch (const FormatError& e) {
    throw UsageError(e.what());
  }
  const auto heat = gradcam(model, normalize(img), cls, layer.empty() ? std::nullopt : std::optional<std::string>(layer));

  fs::path target = out_path;
  if (target.empty()) target = outdir / "gradcam" / (image_path.stem().string() + "_" + label + ".png");
  const std::string ext = target.extension().string();
  if (ext != ".png" && ext != ".pgm") throw InvalidArgument("heatmap output must end in .png or .pgm");
  if (target.has_parent_path()) ensure_dir(target.parent_path());
  write_image(target, heat_gray(heat));
  const fs::path overlay =
      target.parent_path() / (target.stem().string() + "_overlay" + (ext == ".pgm" ? ".ppm" : ".png"));
  write_image(overlay, heat_overlay(img, heat));
  std::cout << "heatmap " << target.string() << "\noverlay " << overlay.string() << "\n";
}

ExperimentLog read_run_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open run log '" + path.string() + "'");
  ExperimentLog log;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "run") {
        log.ordering = j.at("ordering_id").get<std::size_t>();
      } else if (type == "step") {
        StepRecord s;
        s.step = j.at("step").get<std::size_t>();
        s.truth = j.at("truth").get<std::vector<int>>();
        s.predicted = j.at("predicted").get<std::vector<int>>();
        s.is_new = j.at("is_new").get<std::vector<std::uint8_t>>();
        if (s.truth.size() != s.predicted.size() || s.truth.size() != s.is_new.size()) {
          throw FormatError("prediction and truth lengths differ");
        }
        log.steps.push_back(std::move(s));
      }
    } catch (const json::exception& e) {
      throw FormatError(path.string() + " line " + std::to_string(row) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + " line " + std::to_string(row) + ": " + e.what());
    }
  }
  std::sort(log.steps.begin(), log.steps.end(), [](const StepRecord& a, const StepRecord& b) { return a.step < b.step; });
  return log;
}

void cmd_eval(const fs::path& logs_dir, bool include_step0, const fs::path& out_path) {
  if (!fs::is_directory(logs_dir)) throw UsageError("log directory '" + logs_dir.string() + "' not found");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(logs_dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.rfind("run_", 0) == 0 && entry.path().extension() == ".jsonl") {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) throw UsageError("no run_*.jsonl logs in '" + logs_dir.string() + "'");
  std::sort(files.begin(), files.end());
  std::vector<ExperimentLog> logs;
  for (const auto& f : files) logs.push_back(read_run_log(f));
  const fs::path target = out_path.empty() ? logs_dir / "metrics_eval.csv" : out_path;
  write_metrics_csv(target, logs, include_step0);
  std::cout << "overall accuracy (new, all) = (" << format_metric(overall_accuracy(logs, Scope::kNew, include_step0))
            << ", " << format_metric(overall_accuracy(logs, Scope::kAll, include_step0)) << ") over " << logs.size()
            << " logs\nmetrics " << target.string() << "\n";
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Class-incremental expression learning with distillation and memory replay"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ccl 1.0");

  std::string config_path, checkpoint, teacher, image, label, layer, out_file, logs_dir;
  std::optional<std::size_t> orderings, jobs;
  std::optional<std::string> replay;
  std::vector<std::size_t> shots;
  bool exclude_singular = false, no_distill = false, no_replay = false, growing = false;
  std::optional<bool> include_step0;

  auto add_config = [&](CLI::App* sub) { sub->add_option("-c,--config", config_path, "JSON run config")->required(); };
  auto add_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", checkpoint, "basic-phase checkpoint (default <output>/basic/model.ckpt)");
    sub->add_option("--teacher", teacher, "teacher checkpoint (default teacher.ckpt next to the checkpoint)");
  };

  auto* synth = app.add_subcommand("synth-gen", "write the synthetic dataset as PNG files plus manifest.csv");
  add_config(synth);
  auto* basic = app.add_subcommand("train-basic", "subject k-fold training on the basic classes");
  add_config(basic);
  basic->add_option("--jobs", jobs, "worker threads");
  auto* cont = app.add_subcommand("continual", "randomised class-order battery over the compound classes");
  add_config(cont);
  add_checkpoint(cont);
  cont->add_option("--orderings", orderings, "number of class orderings");
  cont->add_flag("--exclude-singular", exclude_singular, "drop the singular compound labels");
  cont->add_flag("--no-distill", no_distill, "train without the distillation term");
  cont->add_flag("--no-replay", no_replay, "train without replay memory");
  cont->add_option("--replay", replay, "psmr, random or none")->check(CLI::IsMember({"psmr", "random", "none"}));
  cont->add_flag("--growing-memory", growing, "scale the memory with the number of known classes");
  cont->add_option("--include-step0", include_step0, "count step 0 in the overall accuracy");
  cont->add_option("--jobs", jobs, "orderings run in parallel");
  auto* few = app.add_subcommand("fewshot", "one experiment per compound class and shot count");
  add_config(few);
  add_checkpoint(few);
  few->add_option("--shots", shots, "shot counts, e.g. 5,3,1")->delimiter(',');
  few->add_flag("--exclude-singular", exclude_singular, "drop the singular compound labels");
  few->add_flag("--no-distill", no_distill, "train without the distillation term");
  few->add_option("--jobs", jobs, "experiments run in parallel");
  auto* cam = app.add_subcommand("gradcam", "class activation heatmap for one image");
  add_config(cam);
  cam->add_option("--checkpoint", checkpoint, "model checkpoint (default <output>/basic/model.ckpt)");
  cam->add_option("--image", image, "input image (PNG, PPM or PGM)")->required();
  cam->add_option("--class", label, "class label")->required();
  cam->add_option("--layer", layer, "target layer (default: last block's activation)");
  cam->add_option("--out", out_file, "heatmap path ending in .png or .pgm");
  auto* eval = app.add_subcommand("eval", "recompute metrics from continual run logs");
  eval->add_option("--logs", logs_dir, "directory holding run_*.jsonl")->required();
  eval->add_option("--include-step0", include_step0, "count step 0 in the overall accuracy");
  eval->add_option("--out", out_file, "metrics CSV path (default <logs>/metrics_eval.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (eval->parsed()) {
      cmd_eval(logs_dir, include_step0.value_or(true), out_file);
      return 0;
    }
    RunConfig cfg = load_config(config_path);
    if (jobs) cfg.phase.jobs = *jobs;
    if (orderings) cfg.phase.orderings = *orderings;
    if (exclude_singular) cfg.phase.exclude_singular = true;
    if (no_distill) cfg.phase.distill = false;
    if (replay) cfg.phase.replay = parse_replay_mode(*replay);
    if (no_replay) cfg.phase.replay = ReplayMode::kNone;
    if (growing) cfg.phase.growing_memory = true;
    if (include_step0) cfg.include_step0 = *include_step0;
    if (!shots.empty()) cfg.shots = shots;
    for (auto s : cfg.shots) {
      if (s == 0) throw InvalidArgument("shot counts must be positive");
    }
    cfg.phase.validate();

    if (synth->parsed()) cmd_synth(cfg);
    else if (basic->parsed()) cmd_train_basic(cfg);
    else if (cont->parsed()) cmd_continual(cfg, checkpoint, teacher);
    else if (few->parsed()) cmd_fewshot(cfg, checkpoint, teacher);
    else if (cam->parsed()) cmd_gradcam(cfg, checkpoint, image, label, layer, out_file);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("ccl");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace ccl
