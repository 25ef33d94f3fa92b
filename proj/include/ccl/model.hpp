#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccl/checkpoint.hpp"
#include "ccl/network.hpp"

namespace ccl {

enum class ClassKind { kBasic, kCompound };

std::string_view to_string(ClassKind kind);

struct ClassInfo {
  std::string label;
  ClassKind kind = ClassKind::kBasic;
};

// Ordered, append-only list of class labels. Index = logit column.
class ClassRegistry {
 public:
  /// Appends `label`; throws AlreadyRegistered on duplicates.
  std::size_t add(std::string label, ClassKind kind);
  std::optional<std::size_t> find(std::string_view label) const;
  std::size_t index_of(std::string_view label) const;  // InvalidArgument if unknown

  std::size_t size() const { return classes_.size(); }
  bool empty() const { return classes_.empty(); }
  const ClassInfo& operator[](std::size_t i) const { return classes_.at(i); }
  const std::vector<ClassInfo>& classes() const { return classes_; }
  std::size_t count(ClassKind kind) const;
  std::vector<std::string> labels() const;

  friend bool operator==(const ClassRegistry&, const ClassRegistry&);

 private:
  std::vector<ClassInfo> classes_;
};

inline bool operator==(const ClassInfo& a, const ClassInfo& b) { return a.label == b.label && a.kind == b.kind; }
inline bool operator==(const ClassRegistry& a, const ClassRegistry& b) { return a.classes_ == b.classes_; }

struct BackboneConfig {
  std::size_t input_size = 32;
  std::size_t input_channels = 3;
  std::vector<std::size_t> block_channels{8, 16, 32};
  std::size_t kernel = 3;
  std::size_t hidden = 32;

  void validate() const;
};

/// conv -> relu -> 2x2 average pool per block, then global average pooling,
/// one hidden dense layer with relu, and the dense head.
/// Layers are named block<b>.conv / block<b>.relu / block<b>.pool, gap,
/// dense1, dense1.relu, head.
LayerSpec make_backbone(const BackboneConfig& config, std::size_t classes);

struct ModelState {
  BackboneConfig backbone;
  LayerSpec spec;
  ParamSet<float> params;
  ClassRegistry registry;

  std::size_t width() const { return registry.size(); }
  /// Throws InvalidState if the head width and registry disagree.
  void check() const;
};

ModelState make_model(const BackboneConfig& backbone, ClassRegistry registry, std::uint64_t seed);

/// Logits over every registered class. Inputs must already be normalized
/// to [-1, 1]; anything else raises InvalidArgument.
Tensor student_forward(const ModelState& model, const Tensor& batch, Backend backend = Backend::kParallel);

/// Read-only copy of a model taken at the end of the basic phase.
class TeacherSnapshot {
 public:
  TeacherSnapshot() = default;
  explicit TeacherSnapshot(const ModelState& model);

  bool valid() const { return state_ != nullptr; }
  /// Logits over the snapshot's own classes only.
  Tensor forward(const Tensor& batch, Backend backend = Backend::kParallel) const;
  std::size_t width() const;
  std::uint64_t hash() const;
  const ModelState& state() const;

 private:
  std::shared_ptr<const ModelState> state_;
};

/// Adds one head column initialized Glorot-uniform with (fan_in = hidden
/// width, fan_out = 1) and a zero bias. Existing weights are untouched.
/// Returns the new class index.
std::size_t expand_head(ModelState& model, const std::string& label, ClassKind kind, std::uint64_t seed);

enum class Phase { kBasicInitial, kBasicFinetune, kContinual, kFewShot };

std::string_view to_string(Phase phase);

/// basic-initial: every conv block frozen; basic-finetune: nothing frozen;
/// continual / few-shot: blocks 1 and 2 frozen.
void apply_freezing(ModelState& model, Phase phase);

// Heatmap in [0, 1], row-major h x w.
struct Heatmap {
  std::size_t h = 0, w = 0;
  std::vector<double> values;

  double at(std::size_t y, std::size_t x) const { return values[y * w + x]; }
};

/// Name of the default Grad-CAM layer: the rectified output of the last block.
std::string default_gradcam_layer(const ModelState& model);

/// `image` is 1 x H x W x C (or H x W x C). Throws InvalidArgument when the
/// target layer has no spatial output or the class index is out of range.
Heatmap gradcam(const ModelState& model, const Tensor& image, std::size_t class_index,
                std::optional<std::string> target_layer = std::nullopt);

/// Input pixels covered by one cell of the target layer.
std::size_t gradcam_cell_size(const ModelState& model, const std::string& target_layer);

inline constexpr int kModelSchemaVersion = 1;

/// Model checkpoint; `extra` is merged into the metadata object as "extra".
Checkpoint model_checkpoint(const ModelState& model, const std::string& extra_json = "{}",
                            const std::string& rng_state = {});
ModelState model_from_checkpoint(const Checkpoint& ckpt);
/// The "extra" metadata object as serialized JSON.
std::string checkpoint_extra(const Checkpoint& ckpt);

void save_model(const std::filesystem::path& path, const ModelState& model, const std::string& extra_json = "{}");
ModelState load_model(const std::filesystem::path& path);

}  // namespace ccl
