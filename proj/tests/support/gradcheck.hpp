#pragma once

// Finite-difference gradient oracle. Evaluates losses only through
// ccl::infer (never through backward), so it is independent of the
// analytic gradient path it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ccl/network.hpp"
#include "ccl/rng.hpp"

namespace ccl::testing {

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose perturbation crossed a ReLU kink
  double max_rel_error = 0;
  std::string worst;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Signs of every ReLU input, used to detect kink crossings.
inline std::vector<bool> relu_pattern(const ParamSet<double>& params, const LayerSpec& spec,
                                      const Tensor64& batch) {
  std::vector<bool> pattern;
  auto fr = forward(params, spec, batch, Backend::kSerial);
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    if (spec.layers[l].kind != LayerKind::kReLU) continue;
    for (double v : fr.tape.activations[l].values()) pattern.push_back(v > 0);
  }
  return pattern;
}

/// Loss = sum(coeff * logits); dL/dlogits = coeff.
inline double linear_readout(const ParamSet<double>& params, const LayerSpec& spec, const Tensor64& batch,
                             const Tensor64& coeff) {
  const auto logits = infer(params, spec, batch, Backend::kSerial);
  double s = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += coeff[i] * logits[i];
  return s;
}

/// Compares backward() against central differences for every unfrozen
/// parameter entry of a double-precision network.
inline GradCheckReport check_network_gradients(ParamSet<double> params, const LayerSpec& spec,
                                               const Tensor64& batch, const Tensor64& coeff, double eps = 1e-3) {
  GradCheckReport rep;
  const auto fr = forward(params, spec, batch, Backend::kSerial);
  BackwardOptions opts;
  opts.backend = Backend::kSerial;
  const auto grads = backward(fr.tape, params, spec, coeff, opts);
  const auto base_pattern = relu_pattern(params, spec, batch);
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (params[p].frozen) continue;
    for (std::size_t k = 0; k < params[p].value.size(); ++k) {
      const double orig = params[p].value[k];
      params.mutate(p).value[k] = orig + eps;
      const double up = linear_readout(params, spec, batch, coeff);
      const bool kink_up = relu_pattern(params, spec, batch) != base_pattern;
      params.mutate(p).value[k] = orig - eps;
      const double down = linear_readout(params, spec, batch, coeff);
      const bool kink_down = relu_pattern(params, spec, batch) != base_pattern;
      params.mutate(p).value[k] = orig;
      if (kink_up || kink_down) {
        ++rep.skipped;
        continue;
      }
      const double numeric = (up - down) / (2 * eps);
      const double err = relative_error(grads.params[p][k], numeric);
      ++rep.checked;
      if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst = params[p].name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return rep;
}

/// Small random network exercising `focus` (conv, dense, relu, pool or gap).
inline LayerSpec random_small_spec(Rng& rng, LayerKind focus) {
  LayerSpec spec;
  const std::size_t side = 3 + rng.below(3);
  const std::size_t ch = 1 + rng.below(2);
  const std::size_t classes = 2 + rng.below(2);
  switch (focus) {
    case LayerKind::kConv2D: {
      spec.input = {side + 1, side + 1, ch};
      const std::size_t stride = 1 + rng.below(2);
      const std::size_t kernel = rng.bernoulli(0.5) ? 3 : 1;
      spec.layers = {{LayerKind::kConv2D, "conv", 1 + rng.below(2), kernel, stride, 1},
                     {LayerKind::kGlobalAvgPool, "gap"},
                     {LayerKind::kDense, "head", classes}};
      break;
    }
    case LayerKind::kDense:
      spec.input = {0, 0, 2 + rng.below(3)};
      spec.layers = {{LayerKind::kDense, "head", classes}};
      break;
    case LayerKind::kReLU:
      spec.input = {0, 0, 2 + rng.below(2)};
      spec.layers = {{LayerKind::kDense, "hidden", 2 + rng.below(2)},
                     {LayerKind::kReLU, "relu"},
                     {LayerKind::kDense, "head", classes}};
      break;
    case LayerKind::kAvgPool2:
      spec.input = {2 * (1 + rng.below(2)), 2 * (1 + rng.below(2)), ch};
      spec.layers = {{LayerKind::kConv2D, "conv", 1 + rng.below(2), 1, 1, 1},
                     {LayerKind::kAvgPool2, "pool"},
                     {LayerKind::kGlobalAvgPool, "gap"},
                     {LayerKind::kDense, "head", classes}};
      break;
    case LayerKind::kGlobalAvgPool:
      spec.input = {side, side, ch};
      spec.layers = {{LayerKind::kGlobalAvgPool, "gap"}, {LayerKind::kDense, "head", classes}};
      break;
  }
  return spec;
}

inline Tensor64 random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline Shape batch_shape(const LayerSpec& spec, std::size_t n) {
  return spec.input.spatial() ? Shape{n, spec.input.h, spec.input.w, spec.input.c} : Shape{n, spec.input.c};
}

/// Randomizes every parameter (biases included) so gradients are generic.
inline void randomize(ParamSet<double>& params, Rng& rng) {
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (auto& v : params.mutate(p).value.values()) v = rng.uniform(-1.0, 1.0);
  }
}

}  // namespace ccl::testing
