#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "ccl/data.hpp"

namespace ccl {

std::vector<std::string> Dataset::roster() const {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (seen.insert(s.subject).second) out.push_back(s.subject);
  }
  return out;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= registry.size()) {
      throw InvalidDataset("sample " + std::to_string(i) + " has unregistered label " + std::to_string(s.label));
    }
    if (s.image.shape() != Shape{image_size, image_size, 3}) {
      throw InvalidDataset("sample " + std::to_string(i) + " has image shape " + shape_string(s.image.shape()));
    }
    for (float v : s.image.values()) {
      if (!(v >= -1.0f && v <= 1.0f)) throw InvalidDataset("sample " + std::to_string(i) + " leaves [-1, 1]");
    }
  }
}

std::vector<std::size_t> Dataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].label == label) out.push_back(i);
  }
  return out;
}

Dataset select_kind(const Dataset& data, ClassKind kind) {
  Dataset out;
  out.image_size = data.image_size;
  std::vector<int> remap(data.registry.size(), -1);
  for (std::size_t k = 0; k < data.registry.size(); ++k) {
    if (data.registry[k].kind == kind) remap[k] = static_cast<int>(out.registry.add(data.registry[k].label, kind));
  }
  for (const auto& s : data.samples) {
    const int l = remap.at(static_cast<std::size_t>(s.label));
    if (l >= 0) out.samples.push_back({s.image, l, s.subject});
  }
  return out;
}

const std::vector<std::string>& default_basic_labels() {
  static const std::vector<std::string> labels{"happy", "sad", "angry", "surprised", "disgusted", "fearful"};
  return labels;
}

namespace {

std::string trim_cr(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Dataset load_manifest(const std::filesystem::path& root, const std::filesystem::path& manifest,
                      std::size_t image_size, const std::vector<std::string>& basic_labels) {
  if (image_size == 0) throw InvalidArgument("image size must be positive");
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest '" + manifest.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw EmptyDataset("manifest '" + manifest.string() + "' is empty");
  if (trim_cr(line) != "path,label,subject") {
    throw FormatError("manifest header must be 'path,label,subject', got '" + trim_cr(line) + "'");
  }
  const std::set<std::string> basic(basic_labels.begin(), basic_labels.end());
  Dataset data;
  data.image_size = image_size;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    line = trim_cr(line);
    if (line.empty()) continue;
    const auto fields = split_csv(line);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      throw FormatError("manifest row " + std::to_string(row) + ": expected 3 non-empty fields");
    }
    const auto path = root / fields[0];
    if (!std::filesystem::is_regular_file(path)) {
      throw IoError("manifest row " + std::to_string(row) + ": missing image '" + path.string() + "'");
    }
    Image8 img;
    try {
      img = read_image(path);
    } catch (const FormatError& e) {
      throw FormatError("manifest row " + std::to_string(row) + ": " + e.what());
    }
    auto label = data.registry.find(fields[1]);
    if (!label) label = data.registry.add(fields[1], basic.count(fields[1]) ? ClassKind::kBasic : ClassKind::kCompound);
    data.samples.push_back({normalize(resize_bilinear(img, image_size, image_size)), static_cast<int>(*label), fields[2]});
  }
  if (data.samples.empty()) throw EmptyDataset("manifest '" + manifest.string() + "' has no rows");
  return data;
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create '" + (dir / "images").string() + "': " + ec.message());
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw IoError("cannot write '" + (dir / "manifest.csv").string() + "'");
  manifest << "path,label,subject\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const auto& s = data.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    write_png(dir / "images" / name, to_image8(s.image));
    manifest << "images/" << name << ',' << data.registry[static_cast<std::size_t>(s.label)].label << ',' << s.subject
             << '\n';
  }
  if (!manifest) throw IoError("write to manifest failed");
}

Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices) {
  const std::size_t s = data.image_size;
  const std::size_t per = s * s * 3;
  Tensor out({indices.size(), s, s, 3});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& img = data.samples.at(indices[i]).image;
    std::copy_n(img.data(), per, out.data() + i * per);
  }
  return out;
}

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data.samples.at(i).label);
  return out;
}

void AugmentConfig::validate() const {
  if (flip_probability < 0 || flip_probability > 1) throw ConfigError("flip probability must lie in [0, 1]");
  if (max_translate < 0 || max_translate >= 1) throw ConfigError("max translate must lie in [0, 1)");
  if (zoom_min <= 0 || zoom_max < zoom_min) throw ConfigError("zoom range must satisfy 0 < min <= max");
}

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng) {
  AugmentDraw d;
  d.flip = rng.bernoulli(config.flip_probability);
  d.shift_x = rng.uniform(-config.max_translate, config.max_translate);
  d.shift_y = rng.uniform(-config.max_translate, config.max_translate);
  d.zoom = rng.uniform(config.zoom_min, config.zoom_max);
  return d;
}

Tensor apply_augment(const Tensor& image, const AugmentDraw& draw) {
  if (image.rank() != 3) throw ShapeError("augment expects H x W x C, got " + shape_string(image.shape()));
  const std::size_t H = image.dim(0), W = image.dim(1), C = image.dim(2);
  const double cy = (static_cast<double>(H) - 1) / 2, cx = (static_cast<double>(W) - 1) / 2;
  const double ty = draw.shift_y * static_cast<double>(H), tx = draw.shift_x * static_cast<double>(W);
  Tensor out(image.shape());
  auto pixel = [&](long y, long x, std::size_t c) -> double {
    if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) return 0.0;
    return image[(static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)) * C + c];
  };
  for (std::size_t y = 0; y < H; ++y) {
    const double sy = (static_cast<double>(y) - cy - ty) / draw.zoom + cy;
    const double fy0 = std::floor(sy);
    const double fy = sy - fy0;
    const long y0 = static_cast<long>(fy0);
    for (std::size_t x = 0; x < W; ++x) {
      const double xm = draw.flip ? static_cast<double>(W - 1 - x) : static_cast<double>(x);
      const double sx = (xm - cx - tx) / draw.zoom + cx;
      const double fx0 = std::floor(sx);
      const double fx = sx - fx0;
      const long x0 = static_cast<long>(fx0);
      for (std::size_t c = 0; c < C; ++c) {
        double v = pixel(y0, x0, c) * (1 - fx) * (1 - fy);
        if (fx > 0) v += pixel(y0, x0 + 1, c) * fx * (1 - fy);
        if (fy > 0) v += pixel(y0 + 1, x0, c) * (1 - fx) * fy;
        if (fx > 0 && fy > 0) v += pixel(y0 + 1, x0 + 1, c) * fx * fy;
        out[(y * W + x) * C + c] = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
    }
  }
  return out;
}

Tensor augment(const Tensor& image, std::uint64_t seed, const AugmentConfig& config) {
  if (!config.enabled) return image;
  Rng rng(seed);
  return apply_augment(image, draw_augment(config, rng));
}

FoldSplit subject_kfold(const std::vector<std::string>& roster, std::size_t folds, std::uint64_t seed) {
  if (folds == 0) throw InvalidArgument("fold count must be positive");
  if (folds > roster.size()) {
    throw InvalidArgument("cannot split " + std::to_string(roster.size()) + " subjects into " +
                          std::to_string(folds) + " folds");
  }
  if (std::set<std::string>(roster.begin(), roster.end()).size() != roster.size()) {
    throw InvalidArgument("subject roster has duplicates");
  }
  auto order = roster;
  Rng rng(seed);
  rng.shuffle(order);
  FoldSplit split;
  split.folds.resize(folds);
  const std::size_t base = order.size() / folds, extra = order.size() % folds;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t n = base + (f < extra ? 1 : 0);
    split.folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                          order.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
  }
  return split;
}

FoldSplit subject_kfold(const Dataset& data, std::size_t folds, std::uint64_t seed) {
  return subject_kfold(data.roster(), folds, seed);
}

SplitIndices subject_indices(const Dataset& data, const std::vector<std::string>& test_subjects) {
  const std::unordered_set<std::string> test(test_subjects.begin(), test_subjects.end());
  SplitIndices out;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    (test.count(data.samples[i].subject) ? out.test : out.train).push_back(i);
  }
  return out;
}

SplitIndices fold_indices(const Dataset& data, const FoldSplit& split, std::size_t test_fold) {
  if (test_fold >= split.size()) throw InvalidArgument("fold index out of range");
  return subject_indices(data, split.folds[test_fold]);
}

}  // namespace ccl
