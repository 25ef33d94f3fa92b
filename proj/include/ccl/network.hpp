#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccl/tensor.hpp"

namespace ccl {

enum class LayerKind { kConv2D, kDense, kReLU, kAvgPool2, kGlobalAvgPool };

std::string_view to_string(LayerKind kind);

struct LayerDesc {
  LayerKind kind = LayerKind::kReLU;
  std::string name;
  std::size_t units = 0;   // output channels (conv) or output width (dense)
  std::size_t kernel = 0;  // conv only
  std::size_t stride = 1;  // conv only
  int block = -1;          // convolution block this layer belongs to, 1-based; -1 for the top
};

/// Activation geometry between layers. Spatial tensors have h, w > 0;
/// flat vectors have h == w == 0.
struct ActShape {
  std::size_t h = 0, w = 0, c = 0;
  bool spatial() const { return h > 0 && w > 0; }
  std::size_t size() const { return spatial() ? h * w * c : c; }
  friend bool operator==(const ActShape&, const ActShape&) = default;
};

// Sequential network description. Input is NHWC.
struct LayerSpec {
  ActShape input;
  std::vector<LayerDesc> layers;

  /// Output shapes of every layer; throws ShapeError on incompatible chains
  /// or when the last layer is not the dense logit layer.
  std::vector<ActShape> validate() const;
  std::size_t output_width() const;
  std::optional<std::size_t> find(std::string_view name) const;
  /// Index of the final dense layer (the classification head).
  std::size_t head_index() const;
};

template <typename T>
struct Param {
  std::string name;
  BasicTensor<T> value;
  bool frozen = false;
  BasicTensor<T> first_moment;
  BasicTensor<T> second_moment;
  std::uint64_t step = 0;
};

// Named parameter tensors plus Adam state. Every mutation bumps version(),
// which tapes use to detect that they were recorded against older weights.
template <typename T>
class ParamSet {
 public:
  std::size_t size() const { return params_.size(); }
  const Param<T>& operator[](std::size_t i) const { return params_[i]; }
  const std::vector<Param<T>>& params() const { return params_; }

  /// Mutable access; invalidates outstanding tapes.
  Param<T>& mutate(std::size_t i) {
    ++version_;
    return params_[i];
  }

  void add(std::string name, BasicTensor<T> value, bool frozen = false);
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  void set_frozen(std::size_t i, bool frozen) {
    ++version_;
    params_[i].frozen = frozen;
  }
  std::size_t frozen_count() const;
  void reset_optimizer_state();

  std::uint64_t version() const { return version_; }
  void touch() { ++version_; }

 private:
  std::vector<Param<T>> params_;
  std::uint64_t version_ = 0;
};

/// Gradients aligned index-for-index with a ParamSet.
template <typename T>
struct Gradients {
  std::vector<BasicTensor<T>> params;
  /// Gradient w.r.t. the output of BackwardOptions::capture_layer.
  std::optional<BasicTensor<T>> captured;
  /// Gradient w.r.t. the network input, when requested.
  std::optional<BasicTensor<T>> input;
};

// Activation record of one forward pass.
template <typename T>
struct Tape {
  std::uint64_t params_version = 0;
  std::size_t batch = 0;
  std::vector<ActShape> shapes;             // output shape per layer
  std::vector<BasicTensor<T>> activations;  // [0] = input, [l + 1] = output of layer l
};

enum class Backend { kSerial, kParallel };

template <typename T>
struct ForwardResult {
  BasicTensor<T> logits;
  Tape<T> tape;
};

struct BackwardOptions {
  std::optional<std::size_t> capture_layer;
  bool input_gradient = false;
  Backend backend = Backend::kParallel;
};

/// Parameters for `spec` with Glorot-uniform weights and zero biases.
template <typename T>
ParamSet<T> init_params(const LayerSpec& spec, std::uint64_t seed);

/// Shape of the parameters of layer `desc` given its input shape
/// ({weight, bias}); empty for parameterless layers.
std::vector<Shape> param_shapes(const LayerDesc& desc, const ActShape& in);

template <typename T>
ForwardResult<T> forward(const ParamSet<T>& params, const LayerSpec& spec, const BasicTensor<T>& batch,
                         Backend backend = Backend::kParallel);

/// Forward pass without keeping activations.
template <typename T>
BasicTensor<T> infer(const ParamSet<T>& params, const LayerSpec& spec, const BasicTensor<T>& batch,
                     Backend backend = Backend::kParallel);

template <typename T>
Gradients<T> backward(const Tape<T>& tape, const ParamSet<T>& params, const LayerSpec& spec,
                      const BasicTensor<T>& loss_gradient, const BackwardOptions& options = {});

template <typename T>
BasicTensor<T> glorot_uniform_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed,
                                   Shape shape = {});

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
void adam_step(ParamSet<T>& params, const Gradients<T>& grads, double lr, const AdamConfig& config = {});

/// FNV-1a over names, shapes, frozen flags and raw value bytes.
template <typename T>
std::uint64_t param_hash(const ParamSet<T>& params);

}  // namespace ccl
