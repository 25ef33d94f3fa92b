#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>

#include "ccl/data.hpp"

namespace ccl {

namespace {

struct Style {
  double dx, dy;       // pixels
  double thickness;    // multiplier
  double foreground;   // [0, 1]
  double background;   // [0, 1]
  double tint[3];
};

Style subject_style(std::uint64_t seed, const std::string& subject) {
  Rng rng(derive_seed(seed, "subject-style", hash_name(subject)));
  Style s;
  s.dx = rng.uniform(-2, 2);
  s.dy = rng.uniform(-2, 2);
  s.thickness = rng.uniform(0.8, 1.2);
  s.foreground = rng.uniform(0.65, 0.95);
  s.background = rng.uniform(0.05, 0.3);
  for (double& t : s.tint) t = rng.uniform(0.75, 1.0);
  return s;
}

double seg_dist(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double t = std::clamp(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  return std::hypot(px - ax - t * vx, py - ay - t * vy);
}

// Distance from (x, y), in unit coordinates, to the primitive's centre line
// and its half-thickness, also in unit coordinates.
struct Shape2 {
  double dist;
  double half;
};

Shape2 primitive_shape(const std::string& name, double x, double y) {
  if (name == "mouth_arc") {
    const double cx = 0.5, cy = 0.46, r = 0.27;
    const double ang = std::atan2(y - cy, x - cx);
    const double lo = 0.25 * M_PI, hi = 0.75 * M_PI;
    double d;
    if (ang >= lo && ang <= hi) {
      d = std::abs(std::hypot(x - cx, y - cy) - r);
    } else {
      d = std::min(std::hypot(x - (cx + r * std::cos(lo)), y - (cy + r * std::sin(lo))),
                   std::hypot(x - (cx + r * std::cos(hi)), y - (cy + r * std::sin(hi))));
    }
    return {d, 0.035};
  }
  if (name == "brow_bar") return {seg_dist(x, y, 0.27, 0.13, 0.73, 0.13), 0.04};
  if (name == "nose_bar") return {seg_dist(x, y, 0.5, 0.27, 0.5, 0.55), 0.04};
  if (name == "eye_blobs") {
    return {std::min(std::hypot(x - 0.23, y - 0.36), std::hypot(x - 0.77, y - 0.36)), 0.085};
  }
  if (name == "cheek_bars") {
    return {std::min(seg_dist(x, y, 0.07, 0.52, 0.07, 0.78), seg_dist(x, y, 0.93, 0.52, 0.93, 0.78)), 0.035};
  }
  if (name == "chin_dots") {
    return {std::min(std::hypot(x - 0.2, y - 0.9), std::hypot(x - 0.8, y - 0.9)), 0.065};
  }
  throw ConfigError("unknown primitive '" + name + "'");
}

// Nominal unit-coordinate extents [x0, y0, x1, y1] of each connected part.
using Extent = std::array<double, 4>;
const std::map<std::string, std::vector<Extent>>& primitive_extents() {
  static const std::map<std::string, std::vector<Extent>> e{
      {"mouth_arc", {{0.27, 0.61, 0.73, 0.77}}},
      {"brow_bar", {{0.23, 0.09, 0.77, 0.17}}},
      {"nose_bar", {{0.46, 0.23, 0.54, 0.59}}},
      {"eye_blobs", {{0.145, 0.275, 0.315, 0.445}, {0.685, 0.275, 0.855, 0.445}}},
      {"cheek_bars", {{0.035, 0.485, 0.105, 0.815}, {0.895, 0.485, 0.965, 0.815}}},
      {"chin_dots", {{0.135, 0.835, 0.265, 0.965}, {0.735, 0.835, 0.865, 0.965}}},
  };
  return e;
}

double gaussian(Rng& rng) {
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<double> render_mask(const std::string& name, std::size_t size, const Style& st) {
  const double n = static_cast<double>(size);
  std::vector<double> mask(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double ux = (static_cast<double>(x) + 0.5 - st.dx) / n;
      const double uy = (static_cast<double>(y) + 0.5 - st.dy) / n;
      const auto s = primitive_shape(name, ux, uy);
      // One-pixel linear edge.
      const double edge = (s.half * st.thickness - s.dist) * n + 0.5;
      mask[y * size + x] = std::clamp(edge, 0.0, 1.0);
    }
  }
  return mask;
}

}  // namespace

const std::vector<std::string>& primitive_names() {
  static const std::vector<std::string> names{"mouth_arc", "brow_bar", "nose_bar",
                                              "eye_blobs", "cheek_bars", "chin_dots"};
  return names;
}

std::vector<Box> primitive_boxes(const std::string& name, std::size_t image_size) {
  const auto it = primitive_extents().find(name);
  if (it == primitive_extents().end()) throw ConfigError("unknown primitive '" + name + "'");
  const double n = static_cast<double>(image_size);
  // Subject offset (2 px), thickness growth and the anti-aliased edge.
  const double half = primitive_shape(name, 0.5, 0.5).half;
  const double pad = 2.0 + 0.2 * half * n + 1.0;
  auto lo = [&](double u) { return static_cast<std::size_t>(std::max(0.0, std::floor(u * n - pad))); };
  auto hi = [&](double u) { return static_cast<std::size_t>(std::min(n, std::ceil(u * n + pad))); };
  std::vector<Box> out;
  for (const auto& [x0, y0, x1, y1] : it->second) out.push_back({lo(x0), lo(y0), hi(x1), hi(y1)});
  return out;
}

std::vector<double> render_primitive(const std::string& name, std::size_t image_size, std::uint64_t seed,
                                     const std::string& subject) {
  return render_mask(name, image_size, subject_style(seed, subject));
}

SynthConfig SynthConfig::standard() {
  SynthConfig c;
  c.basic = {{"happy", "mouth_arc"},      {"sad", "brow_bar"},        {"angry", "nose_bar"},
             {"surprised", "eye_blobs"}, {"disgusted", "cheek_bars"}, {"fearful", "chin_dots"}};
  c.compound = {
      {"happily_surprised", {"happy", "surprised"}},   {"happily_disgusted", {"happy", "disgusted"}},
      {"sadly_angry", {"sad", "angry"}},               {"angrily_disgusted", {"angry", "disgusted"}},
      {"appalled", {"happy", "sad"}},                  {"hatred", {"happy", "angry"}},
      {"angrily_surprised", {"angry", "surprised"}},   {"sadly_surprised", {"sad", "surprised"}},
      {"disgustedly_surprised", {"disgusted", "surprised"}},
      {"fearfully_surprised", {"fearful", "surprised"}}, {"awed", {"happy", "fearful"}},
      {"sadly_fearful", {"sad", "fearful"}},           {"fearfully_disgusted", {"fearful", "disgusted"}},
      {"fearfully_angry", {"fearful", "angry"}},       {"sadly_disgusted", {"sad", "disgusted"}},
  };
  return c;
}

void SynthConfig::validate() const {
  if (basic.empty()) throw ConfigError("synthetic config needs at least one basic class");
  if (per_class == 0 || subjects == 0) throw ConfigError("per-class count and subject count must be positive");
  if (image_size < 8) throw ConfigError("synthetic image size must be at least 8");
  if (noise < 0) throw ConfigError("noise level must be non-negative");
  std::set<std::string> labels, basics;
  for (const auto& b : basic) {
    if (!primitive_extents().count(b.primitive)) {
      throw ConfigError("basic class '" + b.label + "' uses unknown primitive '" + b.primitive + "'");
    }
    if (!labels.insert(b.label).second) throw ConfigError("duplicate class label '" + b.label + "'");
    basics.insert(b.label);
  }
  for (const auto& c : compound) {
    if (!labels.insert(c.label).second) throw ConfigError("duplicate class label '" + c.label + "'");
    if (c.parents.size() < 2) throw ConfigError("compound class '" + c.label + "' needs at least two parents");
    for (const auto& p : c.parents) {
      if (!basics.count(p)) throw ConfigError("compound class '" + c.label + "' references unknown primitive '" + p + "'");
    }
  }
}

Image8 synth_image(const SynthConfig& config, std::size_t class_index, const std::string& subject,
                   std::size_t replicate) {
  const std::size_t n = config.image_size;
  std::vector<std::string> prims;
  if (class_index < config.basic.size()) {
    prims.push_back(config.basic[class_index].primitive);
  } else {
    const auto& c = config.compound.at(class_index - config.basic.size());
    for (const auto& p : c.parents) {
      const auto it = std::find_if(config.basic.begin(), config.basic.end(),
                                   [&](const SynthBasic& b) { return b.label == p; });
      if (it == config.basic.end()) throw ConfigError("compound class '" + c.label + "' references unknown primitive '" + p + "'");
      prims.push_back(it->primitive);
    }
  }
  const Style st = subject_style(config.seed, subject);
  std::vector<double> mask(n * n, 0.0);
  for (const auto& p : prims) {
    const auto m = render_mask(p, n, st);
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = std::max(mask[i], m[i]);
  }
  Rng rng(derive_seed(config.seed, "synth-sample", hash_name(subject), class_index, replicate));
  const double gain = rng.uniform(0.9, 1.1);
  Image8 img{n, n, 3, std::vector<std::uint8_t>(n * n * 3)};
  for (std::size_t p = 0; p < n * n; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double fg = std::min(1.0, st.foreground * gain) * st.tint[c];
      double v = st.background + (fg - st.background) * mask[p];
      if (config.noise > 0) v += config.noise * gaussian(rng);
      img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

Dataset synth_generate(const SynthConfig& config) {
  config.validate();
  Dataset data;
  data.image_size = config.image_size;
  for (const auto& b : config.basic) data.registry.add(b.label, ClassKind::kBasic);
  for (const auto& c : config.compound) data.registry.add(c.label, ClassKind::kCompound);
  std::vector<std::string> subjects;
  for (std::size_t s = 0; s < config.subjects; ++s) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "s%03zu", s);
    subjects.emplace_back(buf);
  }
  for (std::size_t k = 0; k < data.registry.size(); ++k) {
    for (std::size_t r = 0; r < config.per_class; ++r) {
      const auto& subject = subjects[r % config.subjects];
      const std::size_t replicate = r / config.subjects;
      data.samples.push_back({normalize(synth_image(config, k, subject, replicate)), static_cast<int>(k), subject});
    }
  }
  return data;
}

}  // namespace ccl
