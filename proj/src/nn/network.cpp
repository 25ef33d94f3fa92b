#include "ccl/network.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "ccl/kernels.hpp"
#include "ccl/rng.hpp"

namespace ccl {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kConv2D: return "conv2d";
    case LayerKind::kDense: return "dense";
    case LayerKind::kReLU: return "relu";
    case LayerKind::kAvgPool2: return "avgpool2";
    case LayerKind::kGlobalAvgPool: return "global_avgpool";
  }
  return "unknown";
}

namespace {

std::string act_string(const ActShape& s) {
  return s.spatial() ? shape_string({s.h, s.w, s.c}) : shape_string({s.c});
}

ActShape output_shape(const LayerDesc& d, const ActShape& in) {
  switch (d.kind) {
    case LayerKind::kConv2D: {
      if (!in.spatial()) throw ShapeError("conv layer '" + d.name + "' needs a spatial input, got " + act_string(in));
      if (d.kernel == 0 || d.stride == 0 || d.units == 0) throw ShapeError("conv layer '" + d.name + "' has zero extent");
      const std::size_t pad = d.kernel / 2;
      if (in.h + 2 * pad < d.kernel || in.w + 2 * pad < d.kernel) {
        throw ShapeError("conv layer '" + d.name + "' kernel larger than input");
      }
      return {(in.h + 2 * pad - d.kernel) / d.stride + 1, (in.w + 2 * pad - d.kernel) / d.stride + 1, d.units};
    }
    case LayerKind::kDense:
      if (in.spatial()) throw ShapeError("dense layer '" + d.name + "' needs a flat input, got " + act_string(in));
      if (d.units == 0 || in.c == 0) throw ShapeError("dense layer '" + d.name + "' has zero extent");
      return {0, 0, d.units};
    case LayerKind::kReLU:
      return in;
    case LayerKind::kAvgPool2:
      if (!in.spatial() || in.h < 2 || in.w < 2) {
        throw ShapeError("pool layer '" + d.name + "' needs a spatial input of at least 2x2");
      }
      return {in.h / 2, in.w / 2, in.c};
    case LayerKind::kGlobalAvgPool:
      if (!in.spatial()) throw ShapeError("global pool '" + d.name + "' needs a spatial input");
      return {0, 0, in.c};
  }
  throw ShapeError("unknown layer kind");
}

bool has_params(LayerKind k) { return k == LayerKind::kConv2D || k == LayerKind::kDense; }

}  // namespace

std::vector<ActShape> LayerSpec::validate() const {
  if (layers.empty()) throw ShapeError("network has no layers");
  if (input.c == 0) throw ShapeError("network input has zero channels");
  std::vector<ActShape> shapes;
  shapes.reserve(layers.size());
  ActShape cur = input;
  for (const auto& d : layers) {
    cur = output_shape(d, cur);
    shapes.push_back(cur);
  }
  if (layers.back().kind != LayerKind::kDense) {
    throw ShapeError("last layer must be the dense logit layer");
  }
  return shapes;
}

std::size_t LayerSpec::output_width() const { return validate().back().c; }

std::optional<std::size_t> LayerSpec::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t LayerSpec::head_index() const {
  for (std::size_t i = layers.size(); i-- > 0;) {
    if (layers[i].kind == LayerKind::kDense) return i;
  }
  throw ShapeError("network has no dense head");
}

std::vector<Shape> param_shapes(const LayerDesc& desc, const ActShape& in) {
  switch (desc.kind) {
    case LayerKind::kConv2D:
      return {{desc.kernel, desc.kernel, in.c, desc.units}, {desc.units}};
    case LayerKind::kDense:
      return {{in.c, desc.units}, {desc.units}};
    default:
      return {};
  }
}

template <typename T>
void ParamSet<T>::add(std::string name, BasicTensor<T> value, bool frozen) {
  if (find(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  Param<T> p;
  p.name = std::move(name);
  p.first_moment = BasicTensor<T>(value.shape());
  p.second_moment = BasicTensor<T>(value.shape());
  p.value = std::move(value);
  p.frozen = frozen;
  params_.push_back(std::move(p));
  ++version_;
}

template <typename T>
std::optional<std::size_t> ParamSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename T>
std::size_t ParamSet<T>::index_of(std::string_view name) const {
  if (auto i = find(name)) return *i;
  throw InvalidArgument("no parameter named '" + std::string(name) + "'");
}

template <typename T>
std::size_t ParamSet<T>::frozen_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.frozen ? 1 : 0;
  return n;
}

template <typename T>
void ParamSet<T>::reset_optimizer_state() {
  for (auto& p : params_) {
    p.first_moment = BasicTensor<T>(p.value.shape());
    p.second_moment = BasicTensor<T>(p.value.shape());
    p.step = 0;
  }
  ++version_;
}

template <typename T>
BasicTensor<T> glorot_uniform_init(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed, Shape shape) {
  if (fan_in == 0 || fan_out == 0) throw InvalidArgument("glorot init needs positive fan counts");
  if (shape.empty()) shape = {fan_in, fan_out};
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  BasicTensor<T> t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.values()) {
    const double x = limit * (2.0 * rng.uniform() - 1.0);
    v = static_cast<T>(std::clamp(x, -limit, limit));
  }
  return t;
}

template <typename T>
ParamSet<T> init_params(const LayerSpec& spec, std::uint64_t seed) {
  const auto shapes = spec.validate();
  ParamSet<T> params;
  ActShape in = spec.input;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& d = spec.layers[l];
    if (has_params(d.kind)) {
      const auto ps = param_shapes(d, in);
      std::size_t fan_in = 0, fan_out = 0;
      if (d.kind == LayerKind::kConv2D) {
        fan_in = d.kernel * d.kernel * in.c;
        fan_out = d.kernel * d.kernel * d.units;
      } else {
        fan_in = in.c;
        fan_out = d.units;
      }
      params.add(d.name + ".weight", glorot_uniform_init<T>(fan_in, fan_out, derive_seed(seed, d.name), ps[0]));
      params.add(d.name + ".bias", BasicTensor<T>(ps[1]));
    }
    in = shapes[l];
  }
  return params;
}

namespace {

#define CCL_DISPATCH(fn, ...)                         \
  do {                                                \
    if (backend == Backend::kSerial) {                \
      kernels::serial::fn<T>(__VA_ARGS__);            \
    } else {                                          \
      kernels::omp::fn<T>(__VA_ARGS__);               \
    }                                                 \
  } while (false)

template <typename T>
std::span<const T> cspan(const BasicTensor<T>& t) {
  return t.values();
}

kernels::ConvGeometry conv_geometry(const LayerDesc& d, const ActShape& in, std::size_t batch) {
  kernels::ConvGeometry g;
  g.batch = batch;
  g.in_h = in.h;
  g.in_w = in.w;
  g.in_c = in.c;
  g.out_c = d.units;
  g.kernel = d.kernel;
  g.stride = d.stride;
  g.pad = d.kernel / 2;
  return g;
}

Shape tensor_shape(const ActShape& s, std::size_t batch) {
  return s.spatial() ? Shape{batch, s.h, s.w, s.c} : Shape{batch, s.c};
}

std::size_t check_batch(const LayerSpec& spec, const Shape& shape) {
  const Shape expect_tail = spec.input.spatial() ? Shape{spec.input.h, spec.input.w, spec.input.c}
                                                 : Shape{spec.input.c};
  if (shape.size() != expect_tail.size() + 1 || !std::equal(expect_tail.begin(), expect_tail.end(), shape.begin() + 1)) {
    throw ShapeError("batch shape " + shape_string(shape) + " does not match network input " +
                     shape_string(expect_tail));
  }
  if (shape[0] == 0) throw ShapeError("empty batch");
  return shape[0];
}

template <typename T>
BasicTensor<T> layer_forward(const LayerDesc& d, const ActShape& in, const ActShape& out, std::size_t batch,
                             const BasicTensor<T>& x, const ParamSet<T>& params, Backend backend) {
  BasicTensor<T> y(tensor_shape(out, batch));
  switch (d.kind) {
    case LayerKind::kConv2D: {
      const auto& w = params[params.index_of(d.name + ".weight")].value;
      const auto& b = params[params.index_of(d.name + ".bias")].value;
      const auto g = conv_geometry(d, in, batch);
      CCL_DISPATCH(conv2d_forward, g, cspan(x), cspan(w), cspan(b), y.values());
      break;
    }
    case LayerKind::kDense: {
      const auto& w = params[params.index_of(d.name + ".weight")].value;
      const auto& b = params[params.index_of(d.name + ".bias")].value;
      if (w.shape() != Shape{in.c, d.units}) {
        throw ShapeError("parameter '" + d.name + ".weight' has shape " + shape_string(w.shape()));
      }
      const kernels::DenseGeometry g{batch, in.c, d.units};
      CCL_DISPATCH(dense_forward, g, cspan(x), cspan(w), cspan(b), y.values());
      break;
    }
    case LayerKind::kReLU:
      CCL_DISPATCH(relu_forward, cspan(x), y.values());
      break;
    case LayerKind::kAvgPool2: {
      const kernels::PoolGeometry g{batch, in.h, in.w, in.c};
      CCL_DISPATCH(avgpool2_forward, g, cspan(x), y.values());
      break;
    }
    case LayerKind::kGlobalAvgPool:
      CCL_DISPATCH(global_avgpool_forward, batch, in.h * in.w, in.c, cspan(x), y.values());
      break;
  }
  return y;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const ParamSet<T>& params, const LayerSpec& spec, const BasicTensor<T>& batch,
                         Backend backend) {
  const auto shapes = spec.validate();
  const std::size_t n = check_batch(spec, batch.shape());
  ForwardResult<T> r;
  r.tape.params_version = params.version();
  r.tape.batch = n;
  r.tape.shapes = shapes;
  r.tape.activations.reserve(spec.layers.size() + 1);
  r.tape.activations.push_back(batch);
  ActShape in = spec.input;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    r.tape.activations.push_back(
        layer_forward(spec.layers[l], in, shapes[l], n, r.tape.activations.back(), params, backend));
    in = shapes[l];
  }
  r.logits = r.tape.activations.back();
  return r;
}

template <typename T>
BasicTensor<T> infer(const ParamSet<T>& params, const LayerSpec& spec, const BasicTensor<T>& batch,
                     Backend backend) {
  const auto shapes = spec.validate();
  const std::size_t n = check_batch(spec, batch.shape());
  BasicTensor<T> cur = batch;
  ActShape in = spec.input;
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    cur = layer_forward(spec.layers[l], in, shapes[l], n, cur, params, backend);
    in = shapes[l];
  }
  return cur;
}

template <typename T>
Gradients<T> backward(const Tape<T>& tape, const ParamSet<T>& params, const LayerSpec& spec,
                      const BasicTensor<T>& loss_gradient, const BackwardOptions& options) {
  if (tape.params_version != params.version()) {
    throw InvalidState("tape was recorded against different parameter values");
  }
  if (tape.activations.size() != spec.layers.size() + 1) {
    throw InvalidState("tape does not belong to this network");
  }
  const Backend backend = options.backend;
  const std::size_t n = tape.batch;
  if (loss_gradient.shape() != tape.activations.back().shape()) {
    throw ShapeError("loss gradient shape " + shape_string(loss_gradient.shape()) + " does not match logits " +
                     shape_string(tape.activations.back().shape()));
  }

  Gradients<T> grads;
  grads.params.reserve(params.size());
  for (const auto& p : params.params()) grads.params.emplace_back(p.value.shape());

  // Lowest layer whose input gradient or parameters are needed.
  std::size_t lowest = spec.layers.size();
  for (std::size_t l = 0; l < spec.layers.size(); ++l) {
    const auto& d = spec.layers[l];
    if (!has_params(d.kind)) continue;
    const bool trainable = !params[params.index_of(d.name + ".weight")].frozen ||
                           !params[params.index_of(d.name + ".bias")].frozen;
    if (trainable) {
      lowest = l;
      break;
    }
  }
  if (options.capture_layer) {
    if (*options.capture_layer >= spec.layers.size()) throw InvalidArgument("capture layer out of range");
    lowest = std::min(lowest, *options.capture_layer);
  }
  if (options.input_gradient) lowest = 0;

  BasicTensor<T> dcur = loss_gradient;
  for (std::size_t l = spec.layers.size(); l-- > 0;) {
    if (l < lowest) break;
    if (options.capture_layer && *options.capture_layer == l) grads.captured = dcur;
    const auto& d = spec.layers[l];
    const ActShape in = l == 0 ? spec.input : tape.shapes[l - 1];
    const auto& x = tape.activations[l];
    const bool need_input = l > lowest || (l == 0 && options.input_gradient) ||
                            (options.capture_layer && *options.capture_layer < l);
    BasicTensor<T> din;
    if (need_input) din = BasicTensor<T>(tensor_shape(in, n));
    switch (d.kind) {
      case LayerKind::kConv2D: {
        const std::size_t wi = params.index_of(d.name + ".weight");
        const std::size_t bi = params.index_of(d.name + ".bias");
        const auto g = conv_geometry(d, in, n);
        if (!params[wi].frozen || !params[bi].frozen) {
          CCL_DISPATCH(conv2d_backward_params, g, cspan(x), cspan(dcur), grads.params[wi].values(),
                       grads.params[bi].values());
          if (params[wi].frozen) grads.params[wi].fill(T{0});
          if (params[bi].frozen) grads.params[bi].fill(T{0});
        }
        if (need_input) CCL_DISPATCH(conv2d_backward_input, g, cspan(dcur), cspan(params[wi].value), din.values());
        break;
      }
      case LayerKind::kDense: {
        const std::size_t wi = params.index_of(d.name + ".weight");
        const std::size_t bi = params.index_of(d.name + ".bias");
        const kernels::DenseGeometry g{n, in.c, d.units};
        if (!params[wi].frozen || !params[bi].frozen) {
          CCL_DISPATCH(dense_backward_params, g, cspan(x), cspan(dcur), grads.params[wi].values(),
                       grads.params[bi].values());
          if (params[wi].frozen) grads.params[wi].fill(T{0});
          if (params[bi].frozen) grads.params[bi].fill(T{0});
        }
        if (need_input) CCL_DISPATCH(dense_backward_input, g, cspan(dcur), cspan(params[wi].value), din.values());
        break;
      }
      case LayerKind::kReLU:
        if (need_input) CCL_DISPATCH(relu_backward, cspan(x), cspan(dcur), din.values());
        break;
      case LayerKind::kAvgPool2:
        if (need_input) {
          const kernels::PoolGeometry g{n, in.h, in.w, in.c};
          CCL_DISPATCH(avgpool2_backward, g, cspan(dcur), din.values());
        }
        break;
      case LayerKind::kGlobalAvgPool:
        if (need_input) CCL_DISPATCH(global_avgpool_backward, n, in.h * in.w, in.c, cspan(dcur), din.values());
        break;
    }
    if (!need_input) break;
    dcur = std::move(din);
  }
  if (options.input_gradient) grads.input = std::move(dcur);
  return grads;
}

#undef CCL_DISPATCH

template <typename T>
void adam_step(ParamSet<T>& params, const Gradients<T>& grads, double lr, const AdamConfig& config) {
  if (grads.params.size() != params.size()) {
    throw ShapeError("gradient count " + std::to_string(grads.params.size()) + " does not match parameter count " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads.params[i].shape() != params[i].value.shape()) {
      throw ShapeError("gradient for '" + params[i].name + "' has shape " + shape_string(grads.params[i].shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].frozen) continue;
    Param<T>& p = params.mutate(i);
    if (p.first_moment.shape() != p.value.shape()) p.first_moment = BasicTensor<T>(p.value.shape());
    if (p.second_moment.shape() != p.value.shape()) p.second_moment = BasicTensor<T>(p.value.shape());
    p.step += 1;
    const double t = static_cast<double>(p.step);
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T c1 = static_cast<T>(1.0 / (1.0 - std::pow(config.beta1, t)));
    const T c2 = static_cast<T>(1.0 / (1.0 - std::pow(config.beta2, t)));
    const T step = static_cast<T>(lr);
    const T eps = static_cast<T>(config.epsilon);
    const auto g = grads.params[i].values();
    auto v = p.value.values();
    auto m1 = p.first_moment.values();
    auto m2 = p.second_moment.values();
    for (std::size_t k = 0; k < v.size(); ++k) {
      m1[k] = b1 * m1[k] + (T(1) - b1) * g[k];
      m2[k] = b2 * m2[k] + (T(1) - b2) * g[k] * g[k];
      const T mhat = m1[k] * c1;
      const T vhat = m2[k] * c2;
      v[k] -= step * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template <typename T>
std::uint64_t param_hash(const ParamSet<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& p : params.params()) {
    feed(p.name.data(), p.name.size());
    for (std::size_t d : p.value.shape()) {
      const std::uint64_t v = d;
      feed(&v, sizeof v);
    }
    const unsigned char f = p.frozen ? 1 : 0;
    feed(&f, 1);
    feed(p.value.data(), p.value.size() * sizeof(T));
  }
  return h;
}

#define CCL_INSTANTIATE(T)                                                                                 \
  template class ParamSet<T>;                                                                              \
  template BasicTensor<T> glorot_uniform_init<T>(std::size_t, std::size_t, std::uint64_t, Shape);          \
  template ParamSet<T> init_params<T>(const LayerSpec&, std::uint64_t);                                    \
  template ForwardResult<T> forward<T>(const ParamSet<T>&, const LayerSpec&, const BasicTensor<T>&, Backend); \
  template BasicTensor<T> infer<T>(const ParamSet<T>&, const LayerSpec&, const BasicTensor<T>&, Backend);    \
  template Gradients<T> backward<T>(const Tape<T>&, const ParamSet<T>&, const LayerSpec&, const BasicTensor<T>&, \
                                    const BackwardOptions&);                                               \
  template void adam_step<T>(ParamSet<T>&, const Gradients<T>&, double, const AdamConfig&);                \
  template std::uint64_t param_hash<T>(const ParamSet<T>&);

CCL_INSTANTIATE(float)
CCL_INSTANTIATE(double)

#undef CCL_INSTANTIATE

}  // namespace ccl
