#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ccl {

// Test-set predictions after one step. Step 0 is the basic phase.
struct StepRecord {
  std::size_t step = 0;
  std::vector<int> truth;
  std::vector<int> predicted;
  std::vector<std::uint8_t> is_new;  // 1 for samples of the class(es) introduced at this step
};

struct ExperimentLog {
  std::size_t ordering = 0;
  std::vector<StepRecord> steps;

  const StepRecord* find(std::size_t step) const;
};

enum class Scope { kAll, kNew };

std::string_view to_string(Scope scope);

double step_accuracy(std::span<const int> truth, std::span<const int> predicted);
/// kNew restricts to the is_new samples.
double step_accuracy(const StepRecord& record, Scope scope);

/// Mean step accuracy over orderings; IncompleteLog if one lacks `step`.
double ave_sa(std::span<const ExperimentLog> logs, std::size_t step, Scope scope);

/// Steps shared by every log, ascending; IncompleteLog if the logs are ragged.
std::vector<std::size_t> common_steps(std::span<const ExperimentLog> logs);

/// Mean of ave_sa over every recorded step, optionally skipping step 0.
double overall_accuracy(std::span<const ExperimentLog> logs, Scope scope, bool include_step0 = true);

using ConfusionMatrix = std::vector<std::vector<std::size_t>>;
ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t k);

/// Rows `step,ave_sa_new,ave_sa_all`, preceded by a `# include_step0=` header line.
void write_metrics_csv(const std::filesystem::path& path, std::span<const ExperimentLog> logs, bool include_step0);
void write_confusion_csv(const std::filesystem::path& path, const ConfusionMatrix& m,
                         const std::vector<std::string>& labels);
/// Fixed-precision decimal used in every report.
std::string format_metric(double v);

}  // namespace ccl
