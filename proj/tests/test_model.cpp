#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <utility>

#include "mgst/model.hpp"
#include "test_util.hpp"

using namespace mgst;
using mgst::test::expect_code;
using mgst::test::random_tensor;
using mgst::test::TempDir;

namespace {

Tensor tiny_video(std::uint64_t seed, std::int64_t n = 1, std::int64_t t = 8) {
  Tensor v = random_tensor({n, 1, t, 32, 32}, seed, 0.5);
  for (auto& x : v.values()) x += Real(0.5);
  return v;
}

ModelConfig tiny(Ablation a = Ablation::kFull) {
  ModelConfig c = ModelConfig::preset_config("tiny");
  c.ablation = a;
  return c;
}

std::string config_error(const std::string& text) {
  try {
    ModelConfig::parse(text);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    return e.what();
  }
  ADD_FAILURE() << "config accepted: " << text;
  return {};
}

}  // namespace

TEST(ModelConfig, FullPresetCensus) {
  // Closed-form count of trainable weights, frozen from the first build.
  EXPECT_EQ(expected_parameter_count(ModelConfig::preset_config("full")), 62938580u);
  EXPECT_EQ(expected_parameter_count(ModelConfig::preset_config("tiny")), 97196u);
  EXPECT_EQ(expected_parameter_count(ModelConfig::preset_config("gradcheck")), 3443u);
}

TEST(ModelConfig, TextRoundTrip) {
  for (const char* name : {"full", "tiny", "gradcheck"}) {
    ModelConfig c = ModelConfig::preset_config(name);
    c.ablation = Ablation::kConcatFusion;
    c.fusion.bias = true;
    const std::string text = c.to_text();
    EXPECT_EQ(ModelConfig::parse(text).to_text(), text) << name;
  }
}

TEST(ModelConfig, PresetLineSelectsBaseAndKeysOverride) {
  const ModelConfig c = ModelConfig::parse("# comment\npreset = tiny\nrecurrent.hidden = 5\nablation = 2d-only\n");
  EXPECT_EQ(c.preset, "tiny");
  EXPECT_EQ(c.recurrent.hidden, 5);
  EXPECT_EQ(c.ablation, Ablation::k2dOnly);
  EXPECT_EQ(c.t, 8);
}

TEST(ModelConfig, ErrorsNameTheConstraint) {
  EXPECT_NE(config_error("bogus.key = 1").find("bogus.key"), std::string::npos);
  EXPECT_NE(config_error("preset = huge").find("huge"), std::string::npos);
  EXPECT_NE(config_error("ablation = 4d-only").find("4d-only"), std::string::npos);
  EXPECT_NE(config_error("branches.feat = 16").find("channel agreement"), std::string::npos);
  EXPECT_NE(config_error("recurrent.kernel = 2").find("recurrent.kernel"), std::string::npos);
  EXPECT_NE(config_error("head.k = 1").find("head.k"), std::string::npos);
  EXPECT_NE(config_error("input.t = x").find("input.t"), std::string::npos);
}

TEST(ModelBuild, BranchShapeDisagreementRejected) {
  ModelConfig c = tiny();
  c.res.strides = {1, 2, 1};  // residual ends at 4x4, dense at 2x2
  try {
    Model::build(c, 1);
    FAIL() << "built a model whose branches disagree";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("branch shape agreement"), std::string::npos) << e.what();
  }
}

TEST(ModelBuild, FullPresetChainAndCensus) {
  const Model m = Model::build(ModelConfig::preset_config("full"), 1);
  EXPECT_EQ(m.params().weight_count(), 62938580u);
  EXPECT_EQ(m.spatial_chain(), (std::vector<std::int64_t>{88, 22, 24, 12, 6, 3}));
  EXPECT_EQ(m.feature_extent(), 3);
}

TEST(ModelBuild, TinyPresetForwardShapes) {
  const Model m = Model::build(tiny(), 2);
  EXPECT_EQ(m.params().weight_count(), expected_parameter_count(tiny()));
  Tape tape(false);
  ShapeTrace trace;
  const ForwardResult r = m.forward(tape, tiny_video(3), Mode::kEval, {}, &trace);
  EXPECT_EQ(r.logits.shape(), (Shape{1, 8}));
  EXPECT_EQ(r.fused.shape(), (Shape{1, 32, 8, 2, 2}));
  EXPECT_EQ(r.s.shape(), r.t.shape());
  EXPECT_EQ(r.mask.shape(), r.t.shape());
  ASSERT_NE(trace.find("recurrent"), nullptr);
  EXPECT_EQ(*trace.find("recurrent"), (Shape{1, 16, 8, 2, 2}));
}

TEST(ModelBuild, SameSeedGivesIdenticalParameters) {
  const Model a = Model::build(tiny(), 7), b = Model::build(tiny(), 7), c = Model::build(tiny(), 8);
  const auto pa = a.params().all(), pb = b.params().all(), pc = c.params().all();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_TRUE(pa[i]->value.identical(pb[i]->value)) << pa[i]->name;
    any_diff = any_diff || !pa[i]->value.identical(pc[i]->value);
  }
  EXPECT_TRUE(any_diff);
}

TEST(ModelForward, ZeroVideoGivesFiniteLogits) {
  const Model m = Model::build(tiny(), 3);
  const Tensor logits = m.predict(Tensor::zeros({1, 8, 32, 32}));
  EXPECT_EQ(logits.shape(), (Shape{8}));
  EXPECT_TRUE(logits.all_finite());
}

TEST(ModelForward, EvalModeIsBitwiseDeterministic) {
  const Model m = Model::build(tiny(), 4);
  const Tensor v = tiny_video(5).reshaped({1, 8, 32, 32});
  EXPECT_TRUE(m.predict(v).identical(m.predict(v)));
}

TEST(ModelForward, EveryAblationModeRuns) {
  const Tensor v = tiny_video(6).reshaped({1, 8, 32, 32});
  for (Ablation a : all_ablations()) {
    const Model m = Model::build(tiny(a), 9);
    EXPECT_EQ(m.params().weight_count(), expected_parameter_count(tiny(a))) << ablation_name(a);
    const Tensor logits = m.predict(v);
    EXPECT_EQ(logits.shape(), (Shape{8})) << ablation_name(a);
    EXPECT_TRUE(logits.all_finite()) << ablation_name(a);
    EXPECT_EQ(m.has_2d(), a != Ablation::k3dOnly);
    EXPECT_EQ(m.has_3d(), a != Ablation::k2dOnly);
    EXPECT_EQ(m.has_fusion_mask(), a == Ablation::kFull || a == Ablation::kNoInputAttention ||
                                       a == Ablation::kPlainConvLSTM);
  }
}

TEST(ModelForward, AblationNamesRoundTrip) {
  for (Ablation a : all_ablations()) EXPECT_EQ(parse_ablation(ablation_name(a)), a);
  expect_code(ErrorCode::kConfig, [] { parse_ablation("nope"); });
}

TEST(ModelForward, TwoDOnlyWithoutRecurrenceIsFramePermutationInvariant) {
  // The shared 3D stem mixes neighbouring frames, so invariance needs a
  // per-frame stem kernel as well as the bypassed recurrence.
  ModelConfig c = tiny(Ablation::k2dOnly);
  c.bypass_recurrence = true;
  c.stem.kernel[0] = 1;
  c.stem.pad[0] = 0;
  const Model m = Model::build(c, 10);
  const Tensor v = tiny_video(11);
  const std::vector<std::int64_t> perm{7, 2, 5, 0, 3, 6, 1, 4};
  Tensor p(v.shape());
  const std::int64_t hw = 32 * 32;
  for (std::int64_t t = 0; t < 8; ++t) std::copy_n(v.data() + perm[t] * hw, hw, p.data() + t * hw);
  const Tensor a = m.predict(v.reshaped({1, 8, 32, 32})), b = m.predict(p.reshaped({1, 8, 32, 32}));
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5);
}

TEST(ModelForward, SharedStemBreaksFramePermutationInvariance) {
  ModelConfig c = tiny(Ablation::k2dOnly);
  c.bypass_recurrence = true;
  const Model m = Model::build(c, 10);
  const Tensor v = tiny_video(11);
  Tensor p(v.shape());
  const std::int64_t hw = 32 * 32;
  for (std::int64_t t = 0; t < 8; ++t) std::copy_n(v.data() + (7 - t) * hw, hw, p.data() + t * hw);
  EXPECT_FALSE(m.predict(v.reshaped({1, 8, 32, 32})).identical(m.predict(p.reshaped({1, 8, 32, 32}))));
}

TEST(ModelForward, SaturatedMaskMatchesThreeDOnly) {
  ModelConfig fc = tiny();
  fc.fusion.bias = true;
  Model full = Model::build(fc, 12);
  full.fusion()->weight->value.fill(0);
  full.fusion()->bias->value.fill(Real(60));  // mask == 1 to rounding
  ModelConfig tc = tiny(Ablation::k3dOnly);
  Model three = Model::build(tc, 13);
  three.copy_parameters_from(full);
  const Tensor v = tiny_video(14).reshaped({1, 8, 32, 32});
  const Tensor a = full.predict(v), b = three.predict(v);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5 * std::max(1.0, std::abs(double(b[k]))));
}

TEST(ModelForward, PaddedFramesMatchShortSequence) {
  // The per-frame branch keeps padding out of real frames end to end.
  const Model m = Model::build(tiny(Ablation::k2dOnly), 15);
  const Tensor short_v = tiny_video(16, 1, 5);
  Tensor padded = tiny_video(17, 1, 8);
  std::copy_n(short_v.data(), short_v.size(), padded.data());
  Tape tape(false);
  const Tensor a = m.forward(tape, short_v, Mode::kEval).logits.value();
  const Tensor b = m.forward(tape, padded, Mode::kEval, {5}).logits.value();
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1e-5);
}

TEST(ModelForward, BatchRowsMatchSingleSamples) {
  const Model m = Model::build(tiny(), 18);
  const Tensor v = tiny_video(19, 3);
  Tape tape(false);
  const Tensor batch = m.forward(tape, v, Mode::kEval).logits.value();
  for (std::int64_t b = 0; b < 3; ++b) {
    const Tensor one(Shape{1, 8, 32, 32},
                     std::vector<Real>(v.data() + b * 8 * 1024, v.data() + (b + 1) * 8 * 1024));
    const Tensor single = m.predict(one);
    for (std::int64_t k = 0; k < 8; ++k) EXPECT_NEAR(batch[static_cast<std::size_t>(b * 8 + k)], single[k], 1e-5);
  }
}

TEST(ModelForward, ShapeMismatchRejected) {
  const Model m = Model::build(tiny(), 20);
  expect_code(ErrorCode::kShapeMismatch, [&] { m.predict(Tensor::zeros({1, 8, 28, 28})); });
  Tape tape(false);
  expect_code(ErrorCode::kShapeMismatch, [&] { m.forward(tape, tiny_video(1, 2), Mode::kEval, {8}); });
}

TEST(ModelForward, RouteToMissingBranchRejected) {
  Model m = Model::build(tiny(Ablation::k2dOnly), 21);
  m.route = Route::k3d;
  expect_code(ErrorCode::kInvalidArgument, [&] { m.predict(Tensor::zeros({1, 8, 32, 32})); });
}

TEST(ModelParameters, ExportImportRoundTrip) {
  TempDir dir("params");
  const Model a = Model::build(tiny(), 22);
  a.export_parameters(dir.path());
  Model b = Model::build(tiny(), 23);
  b.import_parameters(dir.path());
  const auto pa = a.params().all();
  const auto pb = std::as_const(b).params().all();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (kRealIsDouble) continue;  // MGT1 stores f32
    EXPECT_TRUE(pa[i]->value.identical(pb[i]->value)) << pa[i]->name;
  }
  // A subset model finds every tensor it needs; another preset does not fit.
  Model two = Model::build(tiny(Ablation::k2dOnly), 24);
  two.import_parameters(dir.path());
  Model g = Model::build(ModelConfig::preset_config("gradcheck"), 1);
  expect_code(ErrorCode::kShapeMismatch, [&] { g.import_parameters(dir.path()); });
}

TEST(ModelParameters, CopyFromCountsSharedTensors) {
  const Model full = Model::build(tiny(), 25);
  Model two = Model::build(tiny(Ablation::k2dOnly), 26);
  const std::size_t n = two.copy_parameters_from(full);
  EXPECT_EQ(n, two.params().size());
  EXPECT_LT(n, full.params().size());
}
