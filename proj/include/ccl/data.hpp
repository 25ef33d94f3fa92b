#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ccl/model.hpp"
#include "ccl/rng.hpp"
#include "ccl/tensor.hpp"

namespace ccl {

// 8-bit interleaved image, 1 or 3 channels.
struct Image8 {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t ch) const { return pixels[(y * w + x) * c + ch]; }
  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Decodes PNG, binary PPM (P6) or binary PGM (P5) by content signature.
Image8 read_image(const std::filesystem::path& path);
Image8 decode_image(std::span<const std::uint8_t> bytes);
void write_png(const std::filesystem::path& path, const Image8& img);
void write_pnm(const std::filesystem::path& path, const Image8& img);
/// Format chosen by extension: .png, .ppm or .pgm.
void write_image(const std::filesystem::path& path, const Image8& img);

Image8 resize_bilinear(const Image8& img, std::size_t h, std::size_t w);

inline float normalize_pixel(std::uint8_t p) { return static_cast<float>(p / 127.5 - 1.0); }
inline std::uint8_t denormalize_pixel(float v) {
  const double p = (static_cast<double>(v) + 1.0) * 127.5;
  return static_cast<std::uint8_t>(p <= 0 ? 0 : p >= 255 ? 255 : static_cast<int>(p + 0.5));
}

/// H x W x 3 tensor in [-1, 1]; single-channel input is replicated.
Tensor normalize(const Image8& img);
Image8 to_image8(const Tensor& image);

struct Sample {
  Tensor image;  // H x W x 3, values in [-1, 1]
  int label = 0;
  std::string subject;
};

struct Dataset {
  std::size_t image_size = 0;
  std::vector<Sample> samples;
  ClassRegistry registry;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  /// Distinct subjects in first-appearance order.
  std::vector<std::string> roster() const;
  /// Throws InvalidDataset if a label is unregistered or a pixel leaves [-1, 1].
  void validate() const;
  std::vector<std::size_t> indices_of(int label) const;
};

/// Samples of the given kind, relabelled against a registry holding only
/// that kind (relative order kept).
Dataset select_kind(const Dataset& data, ClassKind kind);

/// The six basic expression labels.
const std::vector<std::string>& default_basic_labels();

/// CSV manifest with header `path,label,subject`. Paths are relative to
/// `root`. Labels listed in `basic_labels` register as basic classes, the
/// rest as compound. Images are resized to image_size x image_size.
Dataset load_manifest(const std::filesystem::path& root, const std::filesystem::path& manifest,
                      std::size_t image_size, const std::vector<std::string>& basic_labels = default_basic_labels());

/// Writes one PNG per sample plus manifest.csv under `dir`.
void write_dataset(const Dataset& data, const std::filesystem::path& dir);

/// Stacks the images of `indices` into an N x H x W x 3 batch.
Tensor stack_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> indices);

struct AugmentConfig {
  bool enabled = true;
  double flip_probability = 0.5;
  double max_translate = 0.1;  // fraction of the image extent, per axis
  double zoom_min = 0.9;
  double zoom_max = 1.1;

  void validate() const;
};

struct AugmentDraw {
  bool flip = false;
  double shift_x = 0, shift_y = 0;  // fractions of width / height
  double zoom = 1;
};

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng);
/// Mirror, shift and zoom about the image centre with bilinear sampling;
/// pixels mapped from outside the frame are 0.
Tensor apply_augment(const Tensor& image, const AugmentDraw& draw);
Tensor augment(const Tensor& image, std::uint64_t seed, const AugmentConfig& config = {});

struct FoldSplit {
  std::vector<std::vector<std::string>> folds;

  std::size_t size() const { return folds.size(); }
};

/// Shuffles the roster with `seed` and deals it into `folds` groups whose
/// sizes differ by at most one.
FoldSplit subject_kfold(const std::vector<std::string>& roster, std::size_t folds, std::uint64_t seed);
FoldSplit subject_kfold(const Dataset& data, std::size_t folds, std::uint64_t seed);

struct SplitIndices {
  std::vector<std::size_t> train, test;
};

/// Samples whose subject is in fold `test_fold` form the test side.
SplitIndices fold_indices(const Dataset& data, const FoldSplit& split, std::size_t test_fold);
SplitIndices subject_indices(const Dataset& data, const std::vector<std::string>& test_subjects);

// Synthetic compositional glyphs. Each basic class owns one horizontally
// symmetric primitive in its own region of the frame; compound classes draw
// the union of their parents' primitives.
struct SynthBasic {
  std::string label;
  std::string primitive;
};

struct SynthCompound {
  std::string label;
  std::vector<std::string> parents;  // basic labels
};

struct SynthConfig {
  std::vector<SynthBasic> basic;
  std::vector<SynthCompound> compound;
  std::size_t per_class = 40;
  std::size_t subjects = 10;
  std::size_t image_size = 32;
  double noise = 0.06;  // per-pixel noise standard deviation, fraction of full scale
  std::uint64_t seed = 1;

  /// Six basic classes and the fifteen compound classes.
  static SynthConfig standard();
  void validate() const;
};

const std::vector<std::string>& primitive_names();

/// Pixel box [x0, x1) x [y0, y1).
struct Box {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
  Box dilated(std::size_t r, std::size_t limit) const {
    return {x0 > r ? x0 - r : 0, y0 > r ? y0 - r : 0, std::min(x1 + r, limit), std::min(y1 + r, limit)};
  }
};

/// Boxes, one per connected part, that hold primitive `name` for any subject.
std::vector<Box> primitive_boxes(const std::string& name, std::size_t image_size);

/// Coverage mask in [0, 1] of a primitive for one subject's style.
std::vector<double> render_primitive(const std::string& name, std::size_t image_size, std::uint64_t seed,
                                     const std::string& subject);

Image8 synth_image(const SynthConfig& config, std::size_t class_index, const std::string& subject,
                   std::size_t replicate);

/// Class order: basic classes, then compound classes as configured.
/// Sample r of each class belongs to subject r mod subjects.
Dataset synth_generate(const SynthConfig& config);

}  // namespace ccl
