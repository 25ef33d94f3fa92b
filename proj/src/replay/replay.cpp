#include "ccl/replay.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "ccl/losses.hpp"

namespace ccl {

std::string_view to_string(ReplayMode mode) {
  switch (mode) {
    case ReplayMode::kPsmr: return "psmr";
    case ReplayMode::kRandom: return "random";
    case ReplayMode::kNone: return "none";
  }
  return "unknown";
}

ReplayMode parse_replay_mode(std::string_view s) {
  if (s == "psmr") return ReplayMode::kPsmr;
  if (s == "random") return ReplayMode::kRandom;
  if (s == "none") return ReplayMode::kNone;
  throw ConfigError("replay mode must be psmr, random or none, got '" + std::string(s) + "'");
}

std::vector<std::size_t> psmr_rank(std::span<const int> labels, std::span<const double> own_probability,
                                   std::size_t capacity, std::size_t known_classes) {
  if (known_classes == 0) throw InvalidArgument("known class count must be positive");
  if (labels.size() != own_probability.size()) throw ShapeError("one score per pool entry required");
  const std::size_t quota = capacity / known_classes;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() > known_classes) {
    throw InvalidArgument("pool holds " + std::to_string(by_class.size()) + " classes but only " +
                          std::to_string(known_classes) + " are known");
  }
  std::vector<std::size_t> out;
  for (auto& [label, members] : by_class) {
    std::stable_sort(members.begin(), members.end(),
                     [&](std::size_t a, std::size_t b) { return own_probability[a] > own_probability[b]; });
    members.resize(std::min(quota, members.size()));
    out.insert(out.end(), members.begin(), members.end());
  }
  return out;
}

namespace {

int model_label(const Dataset& data, std::size_t index, std::span<const int> label_map) {
  const int l = data.samples.at(index).label;
  return label_map.empty() ? l : label_map[static_cast<std::size_t>(l)];
}

}  // namespace

std::vector<double> own_class_probabilities(const ModelState& model, const Dataset& data,
                                            std::span<const std::size_t> pool, std::span<const int> label_map) {
  constexpr std::size_t batch_size = 64;
  std::vector<double> out;
  out.reserve(pool.size());
  const std::size_t k = model.width();
  for (std::size_t start = 0; start < pool.size(); start += batch_size) {
    const auto chunk = pool.subspan(start, std::min(batch_size, pool.size() - start));
    const auto logits = student_forward(model, stack_images(data, chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const int label = model_label(data, chunk[i], label_map);
      if (label < 0 || static_cast<std::size_t>(label) >= k) {
        throw InvalidArgument("pool label " + std::to_string(label) + " is outside the model head");
      }
      std::vector<double> z(logits.data() + i * k, logits.data() + (i + 1) * k);
      out.push_back(softmax_with_temperature(z, 1.0)[static_cast<std::size_t>(label)]);
    }
  }
  return out;
}

ReplayMemory psmr_select(const Dataset& data, std::span<const std::size_t> pool, const ModelState& model,
                         std::size_t capacity, std::size_t known_classes, std::span<const int> label_map) {
  if (pool.empty()) throw InvalidArgument("selection pool is empty");
  const auto scores = own_class_probabilities(model, data, pool, label_map);
  std::vector<int> labels;
  for (auto i : pool) labels.push_back(model_label(data, i, label_map));
  ReplayMemory mem;
  mem.capacity = capacity;
  mem.quota = capacity / known_classes;
  for (auto pos : psmr_rank(labels, scores, capacity, known_classes)) mem.items.push_back(pool[pos]);
  return mem;
}

ReplayMemory random_select(std::span<const std::size_t> pool, std::size_t capacity, std::uint64_t seed) {
  ReplayMemory mem;
  mem.capacity = capacity;
  if (capacity >= pool.size()) {
    mem.items.assign(pool.begin(), pool.end());
    if (capacity > pool.size()) {
      mem.warnings.push_back("memory capacity " + std::to_string(capacity) + " exceeds pool of " +
                             std::to_string(pool.size()) + "; keeping every sample");
    }
    return mem;
  }
  std::vector<std::size_t> pos(pool.size());
  std::iota(pos.begin(), pos.end(), 0);
  Rng rng(seed);
  rng.shuffle(pos);
  pos.resize(capacity);
  std::sort(pos.begin(), pos.end());
  for (auto p : pos) mem.items.push_back(pool[p]);
  return mem;
}

std::vector<std::size_t> merge_new_class(const ReplayMemory& memory, std::span<const std::size_t> new_samples) {
  std::vector<std::size_t> out = memory.items;
  out.insert(out.end(), new_samples.begin(), new_samples.end());
  return out;
}

std::size_t memory_capacity(std::size_t capacity, std::size_t basic_classes, std::size_t known_classes,
                            bool growing) {
  if (!growing) return capacity;
  if (basic_classes == 0) throw InvalidArgument("basic class count must be positive");
  return capacity / basic_classes * known_classes;
}

void write_memory_manifest(const std::filesystem::path& path, const Dataset& data, const ReplayMemory& memory) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "sample,label,subject\n";
  for (auto i : memory.items) {
    const auto& s = data.samples.at(i);
    out << i << ',' << data.registry[static_cast<std::size_t>(s.label)].label << ',' << s.subject << '\n';
  }
}

}  // namespace ccl
