#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ccl/data.hpp"
#include "ccl/model.hpp"

namespace ccl {

enum class ReplayMode { kPsmr, kRandom, kNone };

std::string_view to_string(ReplayMode mode);
ReplayMode parse_replay_mode(std::string_view s);

// Exemplar store. Items index into the training Dataset.
struct ReplayMemory {
  std::size_t capacity = 0;
  std::size_t quota = 0;  // per-class slots used by the last selection
  std::vector<std::size_t> items;
  std::vector<std::string> warnings;

  std::size_t size() const { return items.size(); }
};

/// Core of the predictive sorting selection. `labels[i]` and
/// `own_probability[i]` describe pool entry i. For every class present, in
/// ascending label order, keeps the floor(capacity / known_classes) entries
/// with the highest own-class probability; equal scores keep pool order.
/// Returns pool positions.
std::vector<std::size_t> psmr_rank(std::span<const int> labels, std::span<const double> own_probability,
                                   std::size_t capacity, std::size_t known_classes);

/// Softmax probability the model assigns to each pool sample's own label.
/// `label_map` translates dataset labels to model classes (identity if empty).
std::vector<double> own_class_probabilities(const ModelState& model, const Dataset& data,
                                            std::span<const std::size_t> pool, std::span<const int> label_map = {});

/// Scores the pool with `model` and applies psmr_rank. Returns dataset indices.
ReplayMemory psmr_select(const Dataset& data, std::span<const std::size_t> pool, const ModelState& model,
                         std::size_t capacity, std::size_t known_classes, std::span<const int> label_map = {});

/// Uniform sample of `capacity` pool entries without replacement, in pool
/// order. When the pool is smaller everything is kept and a warning recorded.
ReplayMemory random_select(std::span<const std::size_t> pool, std::size_t capacity, std::uint64_t seed);

inline ReplayMemory init_memory(std::span<const std::size_t> basic_pool, std::size_t capacity, std::uint64_t seed) {
  return random_select(basic_pool, capacity, seed);
}

inline ReplayMemory random_select_baseline(std::span<const std::size_t> pool, std::size_t capacity,
                                           std::uint64_t seed) {
  return random_select(pool, capacity, seed);
}

/// Memory items followed by the new-class samples.
std::vector<std::size_t> merge_new_class(const ReplayMemory& memory, std::span<const std::size_t> new_samples);

/// Capacity for the selection that precedes iteration i (known_classes =
/// k_{i-1}). Fixed mode returns `capacity`; growing mode scales it by
/// known_classes / basic_classes.
std::size_t memory_capacity(std::size_t capacity, std::size_t basic_classes, std::size_t known_classes,
                            bool growing);

/// CSV with header `sample,label,subject`.
void write_memory_manifest(const std::filesystem::path& path, const Dataset& data, const ReplayMemory& memory);

}  // namespace ccl
