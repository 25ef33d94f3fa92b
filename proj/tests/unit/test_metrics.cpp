#include <gtest/gtest.h>

#include <algorithm>

#include "ccl/error.hpp"
#include "ccl/metrics.hpp"
#include "ccl/rng.hpp"

namespace ccl {
namespace {

StepRecord record(std::size_t step, std::vector<int> truth, std::vector<int> pred, std::vector<std::uint8_t> fresh = {}) {
  if (fresh.empty()) fresh.assign(truth.size(), 1);
  return {step, std::move(truth), std::move(pred), std::move(fresh)};
}

TEST(StepAccuracy, Cases) {
  EXPECT_EQ(step_accuracy(std::vector<int>{1, 2, 3}, std::vector<int>{1, 2, 3}), 1.0);
  EXPECT_EQ(step_accuracy(std::vector<int>{1, 2}, std::vector<int>{0, 0}), 0.0);
  EXPECT_EQ(step_accuracy(std::vector<int>{0, 1, 2, 3}, std::vector<int>{0, 1, 2, 0}), 0.75);
  EXPECT_THROW(step_accuracy(std::vector<int>{}, std::vector<int>{}), InvalidArgument);
  EXPECT_THROW(step_accuracy(std::vector<int>{1}, std::vector<int>{1, 2}), InvalidArgument);
}

TEST(StepAccuracy, NewScopeUsesMask) {
  const auto r = record(1, {0, 0, 6, 6}, {0, 1, 6, 0}, {0, 0, 1, 1});
  EXPECT_EQ(step_accuracy(r, Scope::kNew), 0.5);
  EXPECT_EQ(step_accuracy(r, Scope::kAll), 0.5);
}

TEST(AveSa, Cases) {
  std::vector<ExperimentLog> one{{0, {record(1, {0, 1, 2, 3}, {0, 1, 2, 0})}}};
  EXPECT_EQ(ave_sa(one, 1, Scope::kAll), 0.75);
  std::vector<ExperimentLog> two{{0, {record(1, {0, 1, 2, 3}, {0, 1, 2, 0})}}, {1, {record(1, {0, 1, 2, 3}, {0, 1, 0, 0})}}};
  EXPECT_EQ(ave_sa(two, 1, Scope::kAll), 0.625);
  std::vector<ExperimentLog> dup(5, one[0]);
  EXPECT_EQ(ave_sa(dup, 1, Scope::kAll), 0.75);
  EXPECT_THROW(ave_sa(two, 2, Scope::kAll), IncompleteLog);
}

TEST(Overall, Cases) {
  std::vector<ExperimentLog> logs{{0, {record(0, {1, 1}, {1, 1}), record(1, {1, 1}, {1, 0})}}};
  EXPECT_EQ(overall_accuracy(logs, Scope::kAll), 0.75);
  EXPECT_EQ(overall_accuracy(logs, Scope::kAll, false), 0.5);
  logs.push_back({1, {record(0, {1}, {1})}});
  EXPECT_THROW(overall_accuracy(logs, Scope::kAll), IncompleteLog);
}

TEST(Overall, ConstantAcrossSteps) {
  ExperimentLog log{0, {}};
  for (std::size_t s = 0; s < 5; ++s) log.steps.push_back(record(s, {0, 1, 2, 3}, {0, 1, 2, 9}));
  std::vector<ExperimentLog> logs{log};
  EXPECT_EQ(overall_accuracy(logs, Scope::kAll), 0.75);
}

TEST(Confusion, Cases) {
  const auto m = confusion_matrix(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 2);
  EXPECT_EQ(m, (ConfusionMatrix{{1, 1}, {0, 1}}));
  const auto d = confusion_matrix(std::vector<int>{0, 1, 2}, std::vector<int>{0, 1, 2}, 3);
  EXPECT_EQ(d, (ConfusionMatrix{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  EXPECT_THROW(confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3), InvalidArgument);
}

ExperimentLog random_log(Rng& rng, std::size_t ordering, std::size_t steps, std::size_t n) {
  ExperimentLog log{ordering, {}};
  for (std::size_t s = 0; s < steps; ++s) {
    StepRecord r;
    r.step = s;
    for (std::size_t i = 0; i < n; ++i) {
      r.truth.push_back(static_cast<int>(rng.below(4)));
      r.predicted.push_back(static_cast<int>(rng.below(4)));
      r.is_new.push_back(i % 3 == 0);
    }
    log.steps.push_back(r);
  }
  return log;
}

TEST(MetricsProperty, PermutationInvariantAndMonotone) {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ExperimentLog> logs;
    for (std::size_t c = 0; c < 3; ++c) logs.push_back(random_log(rng, c, 4, 12));
    const double base = overall_accuracy(logs, Scope::kAll);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
    auto shuffled = logs;
    for (auto& log : shuffled) {
      for (auto& r : log.steps) {
        std::vector<std::size_t> perm(r.truth.size());
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        rng.shuffle(perm);
        StepRecord p = r;
        for (std::size_t i = 0; i < perm.size(); ++i) {
          p.truth[i] = r.truth[perm[i]];
          p.predicted[i] = r.predicted[perm[i]];
          p.is_new[i] = r.is_new[perm[i]];
        }
        r = p;
      }
    }
    EXPECT_NEAR(overall_accuracy(shuffled, Scope::kAll), base, 1e-15);
    EXPECT_NEAR(overall_accuracy(shuffled, Scope::kNew), overall_accuracy(logs, Scope::kNew), 1e-15);
    auto better = logs;
    auto& r = better[rng.below(3)].steps[rng.below(4)];
    const std::size_t i = rng.below(r.truth.size());
    const double before = ave_sa(better, r.step, Scope::kAll);
    r.predicted[i] = r.truth[i];
    EXPECT_GE(ave_sa(better, r.step, Scope::kAll), before);
  }
}

}  // namespace
}  // namespace ccl
