#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <set>

#include "ccl/data.hpp"

namespace ccl {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("ccl_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image8 gradient_image(std::size_t h, std::size_t w, std::size_t c) {
  Image8 img{h, w, c, std::vector<std::uint8_t>(h * w * c)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<std::uint8_t>((i * 37) % 256);
  return img;
}

Tensor random_image(Rng& rng, std::size_t h, std::size_t w) {
  Tensor t({h, w, 3});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

TEST(Normalize, Endpoints) {
  EXPECT_EQ(normalize_pixel(0), -1.0f);
  EXPECT_EQ(normalize_pixel(255), 1.0f);
  EXPECT_NEAR(normalize_pixel(127), -0.00392156862745098, 1e-7);
  EXPECT_NEAR(normalize_pixel(128), 0.00392156862745098, 1e-7);
  for (int p = 0; p < 256; ++p) EXPECT_EQ(denormalize_pixel(normalize_pixel(static_cast<std::uint8_t>(p))), p);
}

TEST(Normalize, GrayReplicatedToThreeChannels) {
  const auto t = normalize(gradient_image(2, 3, 1));
  ASSERT_EQ(t.shape(), (Shape{2, 3, 3}));
  for (std::size_t p = 0; p < 6; ++p) {
    EXPECT_EQ(t[p * 3], t[p * 3 + 1]);
    EXPECT_EQ(t[p * 3], t[p * 3 + 2]);
  }
}

TEST(ImageIo, RoundTripsAllFormats) {
  const auto dir = scratch_dir("imgio");
  const auto rgb = gradient_image(5, 7, 3), gray = gradient_image(4, 3, 1);
  write_png(dir / "a.png", rgb);
  write_png(dir / "g.png", gray);
  write_pnm(dir / "a.ppm", rgb);
  write_pnm(dir / "g.pgm", gray);
  EXPECT_EQ(read_image(dir / "a.png"), rgb);
  EXPECT_EQ(read_image(dir / "g.png"), gray);
  EXPECT_EQ(read_image(dir / "a.ppm"), rgb);
  EXPECT_EQ(read_image(dir / "g.pgm"), gray);
}

TEST(ImageIo, UnknownCodecAndMissingFile) {
  const auto dir = scratch_dir("imgio_err");
  std::ofstream(dir / "x.bmp") << "BM not really";
  EXPECT_THROW(read_image(dir / "x.bmp"), FormatError);
  EXPECT_THROW(read_image(dir / "none.png"), IoError);
}

TEST(Resize, ConstantImageStaysConstant) {
  Image8 img{3, 5, 3, std::vector<std::uint8_t>(45, 200)};
  const auto r = resize_bilinear(img, 8, 2);
  EXPECT_EQ(r.h, 8u);
  for (auto p : r.pixels) EXPECT_EQ(p, 200);
}

class ManifestTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = scratch_dir("manifest");
    write_png(dir_ / "a.png", gradient_image(10, 10, 3));
    write_pnm(dir_ / "b.pgm", gradient_image(6, 6, 1));
  }
  fs::path write(const std::string& body) {
    std::ofstream(dir_ / "m.csv") << body;
    return dir_ / "m.csv";
  }
  fs::path dir_;
};

TEST_F(ManifestTest, ThreeRowsTwoLabels) {
  const auto d = load_manifest(dir_, write("path,label,subject\na.png,happy,s1\nb.pgm,sad,s2\na.png,happy,s3\n"), 8);
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.registry.size(), 2u);
  EXPECT_EQ(d.registry[0].label, "happy");
  EXPECT_EQ(d.registry[0].kind, ClassKind::kBasic);
  EXPECT_EQ(d.samples[2].image.shape(), (Shape{8, 8, 3}));
  EXPECT_EQ(d.samples[0].image, d.samples[2].image);
  EXPECT_NO_THROW(d.validate());
}

TEST_F(ManifestTest, CompoundLabelsAndCrlf) {
  const auto d = load_manifest(dir_, write("path,label,subject\r\na.png,awed,s1\r\n"), 8);
  EXPECT_EQ(d.registry[0].kind, ClassKind::kCompound);
  EXPECT_EQ(d.samples[0].subject, "s1");
}

TEST_F(ManifestTest, Errors) {
  EXPECT_THROW(load_manifest(dir_, write("path,label,subject\n"), 8), EmptyDataset);
  EXPECT_THROW(load_manifest(dir_, write(""), 8), EmptyDataset);
  EXPECT_THROW(load_manifest(dir_, write("file,label\n"), 8), FormatError);
  try {
    load_manifest(dir_, write("path,label,subject\na.png,happy,s1\nmissing.png,sad,s2\n"), 8);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos) << e.what();
  }
  std::ofstream(dir_ / "bad.png") << "not an image";
  EXPECT_THROW(load_manifest(dir_, write("path,label,subject\nbad.png,sad,s2\n"), 8), FormatError);
  EXPECT_THROW(load_manifest(dir_, dir_ / "absent.csv", 8), IoError);
}

TEST(WriteDataset, ReloadsIdentically) {
  auto cfg = SynthConfig::standard();
  cfg.compound.resize(2);
  cfg.per_class = 3;
  cfg.subjects = 2;
  const auto d = synth_generate(cfg);
  const auto dir = scratch_dir("writeds");
  write_dataset(d, dir);
  const auto back = load_manifest(dir, dir / "manifest.csv", cfg.image_size);
  ASSERT_EQ(back.size(), d.size());
  EXPECT_EQ(back.registry, d.registry);
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.samples[i].image, d.samples[i].image);
    EXPECT_EQ(back.samples[i].subject, d.samples[i].subject);
  }
}

TEST(Augment, SeedDeterminism) {
  Rng rng(1);
  const auto img = random_image(rng, 12, 12);
  EXPECT_EQ(augment(img, 42), augment(img, 42));
  EXPECT_NE(augment(img, 42), augment(img, 43));
}

TEST(Augment, IdentityDraw) {
  Rng rng(2);
  const auto img = random_image(rng, 9, 12);
  EXPECT_EQ(apply_augment(img, AugmentDraw{}), img);
}

TEST(Augment, FlipOnlyMirrorsColumns) {
  Rng rng(3);
  const auto img = random_image(rng, 6, 7);
  AugmentDraw d;
  d.flip = true;
  const auto out = apply_augment(img, d);
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 0; x < 7; ++x) {
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out[(y * 7 + x) * 3 + c], img[(y * 7 + (6 - x)) * 3 + c]);
    }
  }
}

TEST(Augment, DisabledIsIdentity) {
  Rng rng(4);
  const auto img = random_image(rng, 8, 8);
  AugmentConfig cfg;
  cfg.enabled = false;
  EXPECT_EQ(augment(img, 5, cfg), img);
}

TEST(Augment, ShiftMovesContentAndFillsZero) {
  Tensor img({4, 4, 1}, 1.0f);
  AugmentDraw d;
  d.shift_x = 0.25;  // one pixel right
  const auto out = apply_augment(img, d);
  for (std::size_t y = 0; y < 4; ++y) {
    EXPECT_EQ(out[y * 4 + 0], 0.0f);
    EXPECT_EQ(out[y * 4 + 1], 1.0f);
  }
}

TEST(AugmentProperty, ShapeAndRangePreserved) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor img({3 + rng.below(12), 3 + rng.below(12), 3});
    for (auto& v : img.values()) v = rng.bernoulli(0.3) ? (rng.bernoulli(0.5) ? 1.0f : -1.0f) : static_cast<float>(rng.uniform(-1, 1));
    const auto out = augment(img, rng.next());
    ASSERT_EQ(out.shape(), img.shape());
    for (float v : out.values()) {
      EXPECT_GE(v, -1.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

std::vector<std::string> roster(std::size_t n) {
  std::vector<std::string> r;
  for (std::size_t i = 0; i < n; ++i) r.push_back("subj" + std::to_string(i));
  return r;
}

TEST(SubjectKFold, TenFoldsOfTwentyThree) {
  const auto split = subject_kfold(roster(230), 10, 7);
  ASSERT_EQ(split.size(), 10u);
  for (const auto& f : split.folds) EXPECT_EQ(f.size(), 23u);
}

TEST(SubjectKFold, TenFoldsOfOne) {
  const auto split = subject_kfold(roster(10), 10, 7);
  for (const auto& f : split.folds) EXPECT_EQ(f.size(), 1u);
}

TEST(SubjectKFold, Errors) {
  EXPECT_THROW(subject_kfold(roster(3), 4, 1), InvalidArgument);
  EXPECT_THROW(subject_kfold(roster(3), 0, 1), InvalidArgument);
}

TEST(SubjectKFoldProperty, PartitionAndNearEqual) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(60);
    const std::size_t f = 1 + rng.below(n);
    const auto r = roster(n);
    const auto split = subject_kfold(r, f, rng.next());
    std::multiset<std::string> all;
    std::size_t lo = n, hi = 0;
    for (const auto& fold : split.folds) {
      all.insert(fold.begin(), fold.end());
      lo = std::min(lo, fold.size());
      hi = std::max(hi, fold.size());
    }
    EXPECT_EQ(all, std::multiset<std::string>(r.begin(), r.end()));
    EXPECT_LE(hi - lo, 1u);
  }
}

TEST(SubjectKFold, TrainAndTestSubjectsDisjoint) {
  auto cfg = SynthConfig::standard();
  cfg.compound.clear();
  cfg.per_class = 10;
  const auto d = synth_generate(cfg);
  const auto split = subject_kfold(d, 5, 3);
  for (std::size_t f = 0; f < 5; ++f) {
    const auto s = fold_indices(d, split, f);
    EXPECT_EQ(s.train.size() + s.test.size(), d.size());
    std::set<std::string> train, test;
    for (auto i : s.train) train.insert(d.samples[i].subject);
    for (auto i : s.test) test.insert(d.samples[i].subject);
    for (const auto& t : test) EXPECT_EQ(train.count(t), 0u);
  }
}

TEST(Synth, CountsBasicOnly) {
  auto cfg = SynthConfig::standard();
  cfg.compound.clear();
  cfg.per_class = 10;
  const auto d = synth_generate(cfg);
  EXPECT_EQ(d.size(), 60u);
  EXPECT_EQ(d.registry.size(), 6u);
  EXPECT_NO_THROW(d.validate());
}

TEST(Synth, SameSubjectClassReplicateIsIdentical) {
  const auto cfg = SynthConfig::standard();
  EXPECT_EQ(synth_image(cfg, 7, "s001", 2), synth_image(cfg, 7, "s001", 2));
  EXPECT_NE(synth_image(cfg, 7, "s001", 2), synth_image(cfg, 7, "s002", 2));
  EXPECT_EQ(synth_generate(cfg).samples[100].image, synth_generate(cfg).samples[100].image);
}

TEST(Synth, CompoundContainsBothParents) {
  auto cfg = SynthConfig::standard();
  cfg.noise = 0;
  const std::size_t n = cfg.image_size;
  for (std::size_t c = 0; c < cfg.compound.size(); ++c) {
    const auto& comp = cfg.compound[c];
    const auto img = synth_image(cfg, cfg.basic.size() + c, "s004", 0);
    for (const auto& parent : comp.parents) {
      const auto it = std::find_if(cfg.basic.begin(), cfg.basic.end(), [&](const SynthBasic& b) { return b.label == parent; });
      const auto mask = render_primitive(it->primitive, n, cfg.seed, "s004");
      const auto alone = synth_image(cfg, static_cast<std::size_t>(it - cfg.basic.begin()), "s004", 0);
      std::size_t covered = 0;
      for (std::size_t p = 0; p < n * n; ++p) {
        if (mask[p] < 1.0) continue;
        ++covered;
        // Fully covered pixels carry the foreground colour in both images up to the per-sample gain.
        for (std::size_t ch = 0; ch < 3; ++ch) {
          EXPECT_NEAR(img.pixels[p * 3 + ch], alone.pixels[p * 3 + ch], 0.15 * 255) << comp.label;
        }
      }
      EXPECT_GT(covered, 0u) << parent;
    }
  }
}

TEST(Synth, PrimitivesStayInsideTheirBoxes) {
  const auto cfg = SynthConfig::standard();
  for (const auto& name : primitive_names()) {
    const auto boxes = primitive_boxes(name, cfg.image_size);
    for (int s = 0; s < 20; ++s) {
      const auto mask = render_primitive(name, cfg.image_size, cfg.seed, "s" + std::to_string(s));
      for (std::size_t y = 0; y < cfg.image_size; ++y) {
        for (std::size_t x = 0; x < cfg.image_size; ++x) {
          if (mask[y * cfg.image_size + x] == 0) continue;
          const bool inside = std::any_of(boxes.begin(), boxes.end(), [&](const Box& b) { return b.contains(x, y); });
          EXPECT_TRUE(inside) << name << " at " << x << "," << y;
        }
      }
    }
  }
}

TEST(Synth, PrimitiveRegionsAreDisjoint) {
  const auto& names = primitive_names();
  for (std::size_t a = 0; a < names.size(); ++a) {
    for (std::size_t b = a + 1; b < names.size(); ++b) {
      const auto ma = render_primitive(names[a], 32, 1, "s000");
      const auto mb = render_primitive(names[b], 32, 1, "s000");
      for (std::size_t p = 0; p < ma.size(); ++p) EXPECT_FALSE(ma[p] > 0.5 && mb[p] > 0.5) << names[a] << "/" << names[b];
    }
  }
}

TEST(Synth, ConfigErrors) {
  auto cfg = SynthConfig::standard();
  cfg.compound[0].parents = {"happy", "elated"};
  EXPECT_THROW(synth_generate(cfg), ConfigError);
  cfg = SynthConfig::standard();
  cfg.basic[0].primitive = "spiral";
  EXPECT_THROW(synth_generate(cfg), ConfigError);
  cfg = SynthConfig::standard();
  cfg.compound[0].parents = {"happy"};
  EXPECT_THROW(synth_generate(cfg), ConfigError);
}

}  // namespace
}  // namespace ccl
