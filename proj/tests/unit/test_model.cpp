#include <gtest/gtest.h>

#include <cmath>

#include "ccl/model.hpp"
#include "ccl/rng.hpp"
#include "support/gradcheck.hpp"

namespace ccl {
namespace {

ClassRegistry basic_registry(std::size_t k = 6) {
  ClassRegistry r;
  for (std::size_t i = 0; i < k; ++i) r.add("b" + std::to_string(i), ClassKind::kBasic);
  return r;
}

BackboneConfig small_backbone() {
  BackboneConfig b;
  b.input_size = 16;
  b.block_channels = {4, 6, 8};
  b.hidden = 12;
  return b;
}

Tensor random_images(Rng& rng, std::size_t n, std::size_t size) {
  Tensor t({n, size, size, 3});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

TEST(Registry, AppendOnlyAndDuplicates) {
  auto r = basic_registry(3);
  EXPECT_EQ(r.add("c", ClassKind::kCompound), 3u);
  EXPECT_EQ(r.index_of("b1"), 1u);
  EXPECT_THROW(r.add("b1", ClassKind::kBasic), AlreadyRegistered);
  EXPECT_THROW(r.index_of("nope"), InvalidArgument);
  EXPECT_EQ(r.count(ClassKind::kBasic), 3u);
}

TEST(Backbone, LayerNamesAndWidths) {
  const auto spec = make_backbone(BackboneConfig{}, 6);
  EXPECT_EQ(spec.output_width(), 6u);
  EXPECT_TRUE(spec.find("block3.relu"));
  EXPECT_EQ(spec.layers[spec.head_index()].name, "head");
  const auto shapes = spec.validate();
  EXPECT_EQ(shapes[*spec.find("block3.relu")], (ActShape{8, 8, 32}));
}

TEST(StudentForward, RejectsUnnormalizedInput) {
  const auto m = make_model(small_backbone(), basic_registry(), 1);
  Tensor x({1, 16, 16, 3}, 0.5f);
  EXPECT_NO_THROW(student_forward(m, x));
  x[7] = 3.0f;
  EXPECT_THROW(student_forward(m, x), InvalidArgument);
}

TEST(StudentForward, Deterministic) {
  Rng rng(3);
  const auto x = random_images(rng, 4, 16);
  const auto a = make_model(small_backbone(), basic_registry(), 9);
  const auto b = make_model(small_backbone(), basic_registry(), 9);
  EXPECT_EQ(student_forward(a, x), student_forward(b, x));
}

TEST(ExpandHead, OldLogitsBitIdentical) {
  Rng rng(4);
  auto m = make_model(small_backbone(), basic_registry(), 5);
  const auto x = random_images(rng, 10, 16);
  const auto before = student_forward(m, x);
  const auto fe_hash_before = m.params[0].value;
  EXPECT_EQ(expand_head(m, "new", ClassKind::kCompound, 77), 6u);
  const auto after = student_forward(m, x);
  ASSERT_EQ(after.dim(1), 7u);
  for (std::size_t n = 0; n < 10; ++n) {
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(before[n * 6 + j], after[n * 7 + j]);
  }
  EXPECT_EQ(m.params[0].value, fe_hash_before);
}

TEST(ExpandHead, NewColumnWithinGlorotBoundAndSeeded) {
  auto a = make_model(small_backbone(), basic_registry(), 5);
  auto b = a;
  expand_head(a, "new", ClassKind::kCompound, 11);
  expand_head(b, "new", ClassKind::kCompound, 11);
  const auto& w = a.params[a.params.index_of("head.weight")].value;
  const double bound = std::sqrt(6.0 / (12 + 1));
  for (std::size_t r = 0; r < 12; ++r) EXPECT_LE(std::abs(w[r * 7 + 6]), bound);
  EXPECT_EQ(a.params[a.params.index_of("head.bias")].value[6], 0.0f);
  EXPECT_EQ(param_hash(a.params), param_hash(b.params));
  EXPECT_THROW(expand_head(a, "new", ClassKind::kCompound, 1), AlreadyRegistered);
}

TEST(Freezing, PhasePolicy) {
  auto m = make_model(small_backbone(), basic_registry(), 5);
  auto frozen = [&](const std::string& n) { return m.params[m.params.index_of(n)].frozen; };
  apply_freezing(m, Phase::kContinual);
  EXPECT_TRUE(frozen("block1.conv.weight") && frozen("block2.conv.bias"));
  EXPECT_FALSE(frozen("block3.conv.weight") || frozen("head.weight") || frozen("dense1.weight"));
  apply_freezing(m, Phase::kBasicFinetune);
  EXPECT_EQ(m.params.frozen_count(), 0u);
  apply_freezing(m, Phase::kBasicInitial);
  EXPECT_TRUE(frozen("block3.conv.weight"));
  EXPECT_FALSE(frozen("dense1.weight"));
}

TEST(Freezing, ContinualStepLeavesFrozenTensorsIntact) {
  Rng rng(8);
  auto m = make_model(small_backbone(), basic_registry(), 5);
  apply_freezing(m, Phase::kContinual);
  const auto x = random_images(rng, 4, 16);
  const auto b1 = m.params[m.params.index_of("block1.conv.weight")].value;
  const auto b3 = m.params[m.params.index_of("block3.conv.weight")].value;
  auto fwd = forward(m.params, m.spec, x);
  Tensor seed(fwd.logits.shape(), 1.0f);
  adam_step(m.params, backward(fwd.tape, m.params, m.spec, seed), 1e-3);
  EXPECT_EQ(m.params[m.params.index_of("block1.conv.weight")].value, b1);
  EXPECT_NE(m.params[m.params.index_of("block3.conv.weight")].value, b3);
}

TEST(Teacher, StaticCopyOfBasicModel) {
  Rng rng(6);
  auto m = make_model(small_backbone(), basic_registry(), 5);
  const TeacherSnapshot teacher(m);
  const auto x = random_images(rng, 3, 16);
  const auto before = teacher.forward(x);
  EXPECT_EQ(before, student_forward(m, x));
  const auto hash = teacher.hash();
  expand_head(m, "new", ClassKind::kCompound, 3);
  m.params.mutate(0).value.fill(0.25f);
  EXPECT_EQ(teacher.width(), 6u);
  EXPECT_EQ(teacher.forward(x), before);
  EXPECT_EQ(teacher.hash(), hash);
}

TEST(GradCam, ShapeRangeAndErrors) {
  Rng rng(7);
  const auto m = make_model(small_backbone(), basic_registry(), 5);
  const auto x = random_images(rng, 1, 16);
  const auto hm = gradcam(m, x, 2);
  EXPECT_EQ(hm.h, 16u);
  EXPECT_EQ(hm.w, 16u);
  for (double v : hm.values) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(gradcam(m, x, 6), InvalidArgument);
  EXPECT_THROW(gradcam(m, x, 0, "dense1"), InvalidArgument);
  EXPECT_THROW(gradcam(m, x, 0, "gap"), InvalidArgument);
  EXPECT_NO_THROW(gradcam(m, x, 0, "block2.conv"));
  EXPECT_EQ(gradcam_cell_size(m, "block3.relu"), 4u);
}

TEST(GradCam, ZeroFeatureMapsGiveZeroHeatmap) {
  Rng rng(7);
  auto m = make_model(small_backbone(), basic_registry(), 5);
  for (const char* n : {"block3.conv.weight", "block3.conv.bias"}) m.params.mutate(m.params.index_of(n)).value.fill(0);
  const auto hm = gradcam(m, random_images(rng, 1, 16), 1);
  for (double v : hm.values) EXPECT_EQ(v, 0.0);
}

TEST(GradCam, PeakIsOne) {
  Rng rng(9);
  const auto m = make_model(small_backbone(), basic_registry(), 5);
  for (std::size_t c = 0; c < 6; ++c) {
    const auto hm = gradcam(m, random_images(rng, 1, 16), c);
    const double peak = *std::max_element(hm.values.begin(), hm.values.end());
    EXPECT_TRUE(peak == 0.0 || std::abs(peak - 1.0) < 1e-12);
  }
}

TEST(ModelCheckpoint, RoundTrip) {
  auto m = make_model(small_backbone(), basic_registry(), 5);
  expand_head(m, "mix", ClassKind::kCompound, 2);
  apply_freezing(m, Phase::kContinual);
  const auto ck = model_checkpoint(m, R"({"fold":3})");
  const auto back = model_from_checkpoint(decode_checkpoint(encode_checkpoint(ck)));
  EXPECT_EQ(back.registry, m.registry);
  EXPECT_EQ(param_hash(back.params), param_hash(m.params));
  EXPECT_EQ(checkpoint_extra(ck), R"({"fold":3})");
  EXPECT_EQ(encode_checkpoint(model_checkpoint(back, R"({"fold":3})")), encode_checkpoint(ck));
}

TEST(ModelCheckpoint, SchemaMismatchIsVersionError) {
  const auto m = make_model(small_backbone(), basic_registry(), 5);
  auto ck = model_checkpoint(m);
  auto pos = ck.metadata.find("\"schema_version\":1");
  ASSERT_NE(pos, std::string::npos);
  ck.metadata.replace(pos, 18, "\"schema_version\":9");
  EXPECT_THROW(model_from_checkpoint(ck), VersionError);
}

}  // namespace
}  // namespace ccl
