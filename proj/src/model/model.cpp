#include "ccl/model.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace ccl {

using nlohmann::json;

std::string_view to_string(ClassKind kind) { return kind == ClassKind::kBasic ? "basic" : "compound"; }

std::size_t ClassRegistry::add(std::string label, ClassKind kind) {
  if (label.empty()) throw InvalidArgument("class label is empty");
  if (find(label)) throw AlreadyRegistered("class '" + label + "' is already registered");
  classes_.push_back({std::move(label), kind});
  return classes_.size() - 1;
}

std::optional<std::size_t> ClassRegistry::find(std::string_view label) const {
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    if (classes_[i].label == label) return i;
  }
  return std::nullopt;
}

std::size_t ClassRegistry::index_of(std::string_view label) const {
  if (auto i = find(label)) return *i;
  std::string known;
  for (const auto& c : classes_) known += (known.empty() ? "" : ", ") + c.label;
  throw InvalidArgument("unknown class '" + std::string(label) + "'; registered: " + known);
}

std::size_t ClassRegistry::count(ClassKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(classes_.begin(), classes_.end(), [&](const ClassInfo& c) { return c.kind == kind; }));
}

std::vector<std::string> ClassRegistry::labels() const {
  std::vector<std::string> out;
  for (const auto& c : classes_) out.push_back(c.label);
  return out;
}

void BackboneConfig::validate() const {
  if (block_channels.size() < 2) throw ConfigError("backbone needs at least two convolution blocks");
  if (input_channels == 0 || hidden == 0 || kernel == 0 || kernel % 2 == 0) {
    throw ConfigError("backbone kernel must be odd and all widths positive");
  }
  if ((input_size >> block_channels.size()) == 0) {
    throw ConfigError("input size " + std::to_string(input_size) + " too small for " +
                      std::to_string(block_channels.size()) + " pooling blocks");
  }
  for (auto c : block_channels) {
    if (c == 0) throw ConfigError("backbone block with zero channels");
  }
}

LayerSpec make_backbone(const BackboneConfig& config, std::size_t classes) {
  config.validate();
  if (classes == 0) throw InvalidArgument("model needs at least one class");
  LayerSpec spec;
  spec.input = {config.input_size, config.input_size, config.input_channels};
  for (std::size_t b = 0; b < config.block_channels.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b + 1);
    const int block = static_cast<int>(b + 1);
    spec.layers.push_back({LayerKind::kConv2D, prefix + ".conv", config.block_channels[b], config.kernel, 1, block});
    spec.layers.push_back({LayerKind::kReLU, prefix + ".relu", 0, 0, 1, block});
    spec.layers.push_back({LayerKind::kAvgPool2, prefix + ".pool", 0, 0, 1, block});
  }
  spec.layers.push_back({LayerKind::kGlobalAvgPool, "gap"});
  spec.layers.push_back({LayerKind::kDense, "dense1", config.hidden});
  spec.layers.push_back({LayerKind::kReLU, "dense1.relu"});
  spec.layers.push_back({LayerKind::kDense, "head", classes});
  spec.validate();
  return spec;
}

void ModelState::check() const {
  if (spec.output_width() != registry.size()) {
    throw InvalidState("head width " + std::to_string(spec.output_width()) + " does not match " +
                       std::to_string(registry.size()) + " registered classes");
  }
}

ModelState make_model(const BackboneConfig& backbone, ClassRegistry registry, std::uint64_t seed) {
  ModelState m;
  m.backbone = backbone;
  m.spec = make_backbone(backbone, registry.size());
  m.params = init_params<float>(m.spec, seed);
  m.registry = std::move(registry);
  return m;
}

namespace {

void check_normalized(const Tensor& batch) {
  for (float v : batch.values()) {
    if (!(v >= -1.0f && v <= 1.0f)) {
      throw InvalidArgument("input value " + std::to_string(v) + " outside [-1, 1]; normalize images first");
    }
  }
}

}  // namespace

Tensor student_forward(const ModelState& model, const Tensor& batch, Backend backend) {
  model.check();
  check_normalized(batch);
  return infer(model.params, model.spec, batch, backend);
}

TeacherSnapshot::TeacherSnapshot(const ModelState& model) {
  model.check();
  auto copy = std::make_shared<ModelState>(model);
  copy->params.reset_optimizer_state();
  for (std::size_t i = 0; i < copy->params.size(); ++i) copy->params.set_frozen(i, true);
  state_ = std::move(copy);
}

const ModelState& TeacherSnapshot::state() const {
  if (!state_) throw InvalidState("teacher snapshot is empty");
  return *state_;
}

Tensor TeacherSnapshot::forward(const Tensor& batch, Backend backend) const {
  return student_forward(state(), batch, backend);
}

std::size_t TeacherSnapshot::width() const { return state().width(); }

std::uint64_t TeacherSnapshot::hash() const { return param_hash(state().params); }

std::size_t expand_head(ModelState& model, const std::string& label, ClassKind kind, std::uint64_t seed) {
  model.check();
  if (model.registry.find(label)) throw AlreadyRegistered("class '" + label + "' is already registered");
  const std::size_t wi = model.params.index_of("head.weight");
  const std::size_t bi = model.params.index_of("head.bias");
  const std::size_t k = model.registry.size();
  const std::size_t fan_in = model.params[wi].value.dim(0);

  const auto column = glorot_uniform_init<float>(fan_in, 1, seed, {fan_in});
  auto widen = [&](const Tensor& old, const float* fresh) {
    Tensor out({fan_in, k + 1});
    for (std::size_t r = 0; r < fan_in; ++r) {
      std::copy_n(old.data() + r * k, k, out.data() + r * (k + 1));
      out[r * (k + 1) + k] = fresh ? fresh[r] : 0.0f;
    }
    return out;
  };
  auto widen_bias = [&](const Tensor& old) {
    Tensor out({k + 1});
    std::copy_n(old.data(), k, out.data());
    return out;
  };

  auto& w = model.params.mutate(wi);
  w.value = widen(w.value, column.data());
  w.first_moment = widen(w.first_moment, nullptr);
  w.second_moment = widen(w.second_moment, nullptr);
  auto& b = model.params.mutate(bi);
  b.value = widen_bias(b.value);
  b.first_moment = widen_bias(b.first_moment);
  b.second_moment = widen_bias(b.second_moment);

  model.spec.layers[model.spec.head_index()].units = k + 1;
  return model.registry.add(label, kind);
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::kBasicInitial: return "basic-initial";
    case Phase::kBasicFinetune: return "basic-finetune";
    case Phase::kContinual: return "continual";
    case Phase::kFewShot: return "fewshot";
  }
  return "unknown";
}

void apply_freezing(ModelState& model, Phase phase) {
  const int blocks = static_cast<int>(model.backbone.block_channels.size());
  int frozen_through = 0;
  switch (phase) {
    case Phase::kBasicInitial: frozen_through = blocks; break;
    case Phase::kBasicFinetune: frozen_through = 0; break;
    case Phase::kContinual:
    case Phase::kFewShot: frozen_through = 2; break;
  }
  for (const auto& d : model.spec.layers) {
    if (d.kind != LayerKind::kConv2D && d.kind != LayerKind::kDense) continue;
    const bool frozen = d.block > 0 && d.block <= frozen_through;
    model.params.set_frozen(model.params.index_of(d.name + ".weight"), frozen);
    model.params.set_frozen(model.params.index_of(d.name + ".bias"), frozen);
  }
}

std::string default_gradcam_layer(const ModelState& model) {
  return "block" + std::to_string(model.backbone.block_channels.size()) + ".relu";
}

namespace {

std::size_t spatial_layer(const ModelState& model, const std::string& name, std::vector<ActShape>& shapes) {
  const auto idx = model.spec.find(name);
  if (!idx) throw InvalidArgument("no layer named '" + name + "'");
  shapes = model.spec.validate();
  const auto kind = model.spec.layers[*idx].kind;
  if (!shapes[*idx].spatial() ||
      (kind != LayerKind::kConv2D && kind != LayerKind::kReLU && kind != LayerKind::kAvgPool2)) {
    throw InvalidArgument("grad-cam target '" + name + "' is not a convolutional feature map");
  }
  return *idx;
}

// Half-pixel-centred bilinear resampling of an h x w map to H x W.
std::vector<double> upsample(const std::vector<double>& src, std::size_t h, std::size_t w, std::size_t H,
                             std::size_t W) {
  std::vector<double> out(H * W);
  auto coord = [](std::size_t dst, std::size_t n_src, std::size_t n_dst, std::size_t& i0, std::size_t& i1,
                  double& f) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(n_src) / static_cast<double>(n_dst) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(n_src - 1));
    i0 = static_cast<std::size_t>(s);
    i1 = std::min(i0 + 1, n_src - 1);
    f = s - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < H; ++y) {
    std::size_t y0, y1;
    double fy;
    coord(y, h, H, y0, y1, fy);
    for (std::size_t x = 0; x < W; ++x) {
      std::size_t x0, x1;
      double fx;
      coord(x, w, W, x0, x1, fx);
      const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
      const double bot = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
      out[y * W + x] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

}  // namespace

std::size_t gradcam_cell_size(const ModelState& model, const std::string& target_layer) {
  std::vector<ActShape> shapes;
  const std::size_t idx = spatial_layer(model, target_layer, shapes);
  return model.spec.input.h / shapes[idx].h;
}

Heatmap gradcam(const ModelState& model, const Tensor& image, std::size_t class_index,
                std::optional<std::string> target_layer) {
  model.check();
  if (class_index >= model.width()) {
    throw InvalidArgument("class index " + std::to_string(class_index) + " out of range for " +
                          std::to_string(model.width()) + " classes");
  }
  const std::string layer = target_layer.value_or(default_gradcam_layer(model));
  std::vector<ActShape> shapes;
  const std::size_t idx = spatial_layer(model, layer, shapes);

  Tensor batch = image;
  if (batch.rank() == 3) batch.reshape({1, batch.dim(0), batch.dim(1), batch.dim(2)});
  if (batch.rank() != 4 || batch.dim(0) != 1) throw ShapeError("grad-cam takes a single image");
  check_normalized(batch);

  auto fwd = forward(model.params, model.spec, batch);
  Tensor seed(fwd.logits.shape());
  seed[class_index] = 1.0f;
  BackwardOptions opts;
  opts.capture_layer = idx;
  const auto grads = backward(fwd.tape, model.params, model.spec, seed, opts);

  const ActShape s = shapes[idx];
  const Tensor& act = fwd.tape.activations[idx + 1];
  const Tensor& grad = *grads.captured;
  const std::size_t cells = s.h * s.w;
  std::vector<double> weights(s.c, 0.0);
  for (std::size_t p = 0; p < cells; ++p) {
    for (std::size_t c = 0; c < s.c; ++c) weights[c] += grad[p * s.c + c];
  }
  for (auto& wc : weights) wc /= static_cast<double>(cells);

  std::vector<double> cam(cells, 0.0);
  for (std::size_t p = 0; p < cells; ++p) {
    double v = 0;
    for (std::size_t c = 0; c < s.c; ++c) v += weights[c] * act[p * s.c + c];
    cam[p] = std::max(v, 0.0);
  }

  Heatmap hm;
  hm.h = model.spec.input.h;
  hm.w = model.spec.input.w;
  hm.values = upsample(cam, s.h, s.w, hm.h, hm.w);
  const double peak = *std::max_element(hm.values.begin(), hm.values.end());
  for (auto& v : hm.values) v = peak > 0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
  return hm;
}

Checkpoint model_checkpoint(const ModelState& model, const std::string& extra_json, const std::string& rng_state) {
  model.check();
  json meta;
  meta["format"] = "ccl-model";
  meta["schema_version"] = kModelSchemaVersion;
  meta["backbone"] = {{"input_size", model.backbone.input_size},
                      {"input_channels", model.backbone.input_channels},
                      {"block_channels", model.backbone.block_channels},
                      {"kernel", model.backbone.kernel},
                      {"hidden", model.backbone.hidden}};
  json classes = json::array();
  for (const auto& c : model.registry.classes()) classes.push_back({{"label", c.label}, {"kind", to_string(c.kind)}});
  meta["classes"] = classes;
  meta["extra"] = json::parse(extra_json);
  Checkpoint ck;
  ck.metadata = meta.dump();
  ck.params = model.params;
  ck.params.reset_optimizer_state();
  ck.rng_state = rng_state;
  return ck;
}

ModelState model_from_checkpoint(const Checkpoint& ckpt) {
  json meta;
  try {
    meta = json::parse(ckpt.metadata);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
  if (meta.value("format", "") != "ccl-model") throw FormatError("checkpoint does not hold a model");
  if (meta.value("schema_version", -1) != kModelSchemaVersion) {
    throw VersionError("model schema version " + meta.value("schema_version", json(-1)).dump() + " is not " +
                       std::to_string(kModelSchemaVersion));
  }
  try {
    ModelState m;
    const auto& bb = meta.at("backbone");
    m.backbone.input_size = bb.at("input_size");
    m.backbone.input_channels = bb.at("input_channels");
    m.backbone.block_channels = bb.at("block_channels").get<std::vector<std::size_t>>();
    m.backbone.kernel = bb.at("kernel");
    m.backbone.hidden = bb.at("hidden");
    for (const auto& c : meta.at("classes")) {
      m.registry.add(c.at("label"), c.at("kind") == "basic" ? ClassKind::kBasic : ClassKind::kCompound);
    }
    m.spec = make_backbone(m.backbone, m.registry.size());
    const auto expect = init_params<float>(m.spec, 0);
    if (expect.size() != ckpt.params.size()) throw VersionError("checkpoint tensors do not match the backbone");
    for (std::size_t i = 0; i < expect.size(); ++i) {
      if (expect[i].name != ckpt.params[i].name || expect[i].value.shape() != ckpt.params[i].value.shape()) {
        throw VersionError("checkpoint tensor '" + ckpt.params[i].name + "' does not match the backbone");
      }
    }
    m.params = ckpt.params;
    m.params.reset_optimizer_state();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model metadata: ") + e.what());
  }
}

std::string checkpoint_extra(const Checkpoint& ckpt) {
  try {
    return json::parse(ckpt.metadata).value("extra", json::object()).dump();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not JSON: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const ModelState& model, const std::string& extra_json) {
  save_checkpoint(path, model_checkpoint(model, extra_json));
}

ModelState load_model(const std::filesystem::path& path) { return model_from_checkpoint(load_checkpoint(path)); }

}  // namespace ccl
