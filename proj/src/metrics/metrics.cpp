#include "ccl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "ccl/error.hpp"

namespace ccl {

const StepRecord* ExperimentLog::find(std::size_t step) const {
  for (const auto& r : steps) {
    if (r.step == step) return &r;
  }
  return nullptr;
}

std::string_view to_string(Scope scope) { return scope == Scope::kAll ? "all" : "new"; }

double step_accuracy(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw InvalidArgument("truth and prediction lengths differ");
  if (truth.empty()) throw InvalidArgument("step accuracy of an empty test set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

double step_accuracy(const StepRecord& record, Scope scope) {
  if (scope == Scope::kAll) return step_accuracy(record.truth, record.predicted);
  if (record.is_new.size() != record.truth.size()) throw InvalidArgument("new-class mask length differs");
  std::vector<int> t, p;
  for (std::size_t i = 0; i < record.truth.size(); ++i) {
    if (record.is_new[i]) {
      t.push_back(record.truth[i]);
      p.push_back(record.predicted[i]);
    }
  }
  return step_accuracy(t, p);
}

double ave_sa(std::span<const ExperimentLog> logs, std::size_t step, Scope scope) {
  if (logs.empty()) throw IncompleteLog("no orderings to average");
  double sum = 0;
  for (const auto& log : logs) {
    const auto* r = log.find(step);
    if (!r) {
      throw IncompleteLog("ordering " + std::to_string(log.ordering) + " has no record for step " +
                          std::to_string(step));
    }
    sum += step_accuracy(*r, scope);
  }
  return sum / static_cast<double>(logs.size());
}

std::vector<std::size_t> common_steps(std::span<const ExperimentLog> logs) {
  if (logs.empty()) throw IncompleteLog("no orderings");
  auto steps_of = [](const ExperimentLog& l) {
    std::vector<std::size_t> s;
    for (const auto& r : l.steps) s.push_back(r.step);
    std::sort(s.begin(), s.end());
    return s;
  };
  const auto first = steps_of(logs[0]);
  for (const auto& log : logs) {
    if (steps_of(log) != first) {
      throw IncompleteLog("ordering " + std::to_string(log.ordering) + " records a different set of steps");
    }
  }
  if (first.empty()) throw IncompleteLog("logs hold no steps");
  return first;
}

double overall_accuracy(std::span<const ExperimentLog> logs, Scope scope, bool include_step0) {
  double sum = 0;
  std::size_t n = 0;
  for (auto step : common_steps(logs)) {
    if (step == 0 && !include_step0) continue;
    sum += ave_sa(logs, step, scope);
    ++n;
  }
  if (n == 0) throw IncompleteLog("no steps left to average");
  return sum / static_cast<double>(n);
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t k) {
  if (truth.size() != predicted.size()) throw InvalidArgument("truth and prediction lengths differ");
  ConfusionMatrix m(k, std::vector<std::size_t>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || predicted[i] < 0 || static_cast<std::size_t>(truth[i]) >= k ||
        static_cast<std::size_t>(predicted[i]) >= k) {
      throw InvalidArgument("label out of range at position " + std::to_string(i));
    }
    ++m[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(predicted[i])];
  }
  return m;
}

std::string format_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const ExperimentLog> logs, bool include_step0) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "# include_step0=" << (include_step0 ? "true" : "false") << " orderings=" << logs.size() << '\n';
  out << "step,ave_sa_new,ave_sa_all\n";
  for (auto step : common_steps(logs)) {
    out << step << ',' << format_metric(ave_sa(logs, step, Scope::kNew)) << ','
        << format_metric(ave_sa(logs, step, Scope::kAll)) << '\n';
  }
  out << "overall," << format_metric(overall_accuracy(logs, Scope::kNew, include_step0)) << ','
      << format_metric(overall_accuracy(logs, Scope::kAll, include_step0)) << '\n';
}

void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& m,
                         const std::vector<std::string>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "truth\\predicted";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (std::size_t a = 0; a < m.size(); ++a) {
    out << (a < labels.size() ? labels[a] : std::to_string(a));
    for (auto v : m[a]) out << ',' << v;
    out << '\n';
  }
}

}  // namespace ccl
