// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "test_util.hpp"
#include "voxelser/block.hpp"
#include "voxelser/gradcheck.hpp"

namespace voxelser {
namespace {

using testing::random_array;
using testing::random_grid;

DiffArray weighted_sum(Tape& t, const DiffArray& a, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  return sum(t, mul(t, a, random_array(a.shape(), rng, -1, 1, false)));
}

void fill(const DiffArray& a, double v) {
  for (auto& x : a.value()) x = v;
}

// Forces a CMLN MLP to output the constant `v` regardless of context.
void make_constant(const Mlp& m, double v) {
  fill(m.weights.back(), 0.0);
  fill(m.biases.back(), v);
}

class Cmln : public ::testing::Test {
 protected:
  Rng rng{3};
  CmlnParams p = CmlnParams::init(6, 8, rng);
  DiffArray h = random_array({5, 6}, rng);
  DiffArray ctx = random_array({6}, rng);
};

TEST_F(Cmln, UnitGammaZeroBetaIsLayerNorm) {
  make_constant(p.gamma, 1.0);
  make_constant(p.beta, 0.0);
  Tape t = Tape::inference();
  const auto a = cmln(t, h, ctx, p);
  const auto b = layer_norm(t, h);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-14);
}

TEST_F(Cmln, ZeroGammaGivesBetaInEveryRow) {
  make_constant(p.gamma, 0.0);
  Tape t = Tape::inference();
  const auto out = cmln(t, h, ctx, p);
  const auto beta = p.beta.forward(t, reshape(t, ctx, {1, 6}));
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out.at(r, c), beta.value()[c], 1e-14);
  }
}

TEST_F(Cmln, InitIsCloseToLayerNorm) {
  Tape t = Tape::inference();
  const auto a = cmln(t, h, ctx, p);
  const auto b = layer_norm(t, h);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.value()[i] - b.value()[i]));
  EXPECT_LT(worst, 1.0);
}

TEST_F(Cmln, OutputDependsOnContext) {
  Tape t = Tape::inference();
  const auto a = cmln(t, h, ctx, p);
  const auto b = cmln(t, h, random_array({6}, rng), p);
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a.value()[i] - b.value()[i]);
  EXPECT_GT(diff, 1e-6);
}

TEST_F(Cmln, Gradcheck) {
  const auto rep = gradcheck([&](Tape& t) { return weighted_sum(t, cmln(t, h, ctx, p)); },
                             {h, ctx, p.gamma.weights[0], p.gamma.biases[1], p.beta.weights[1]});
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST_F(Cmln, ShapeErrors) {
  Tape t;
  EXPECT_THROW(cmln(t, h, DiffArray({5}), p), Error);
  EXPECT_THROW(cmln(t, DiffArray({6}), ctx, p), Error);
}

ModelConfig small_config() {
  ModelConfig c;
  c.input_channels = 4;
  c.num_classes = 3;
  c.channels = 4;
  c.heads = 2;
  c.group_size = 8;
  c.k_shifts = 4;
  c.blocks = 1;
  c.ffn_expansion = 2;
  c.cmln_hidden = 4;
  c.crpe_hidden = 4;
  return c;
}

TEST(ModelConfig, Validation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.channels = 5;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.k_shifts = 3;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidShiftConfig);
  }
  c = small_config();
  c.schedule.tau_min = 0.0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Model, ParameterNamesAreUnique) {
  Rng rng(1);
  auto cfg = small_config();
  cfg.blocks = 2;
  const auto m = Model::init(cfg, rng);
  const auto params = m.parameters();
  std::set<std::string> names;
  for (const auto& [name, p] : params) {
    EXPECT_TRUE(p.requires_grad()) << name;
    names.insert(name);
  }
  EXPECT_EQ(names.size(), params.size());
  EXPECT_TRUE(names.count("stem.w"));
  EXPECT_TRUE(names.count("block1.selector.logits"));
  EXPECT_TRUE(names.count("head.b"));
}

TEST(SceneContext, RejectsMismatchedFeatures) {
  const auto grid = random_grid({4, 4, 4}, 0.4, 1, 3);
  EXPECT_THROW(make_scene_context(grid, small_config()), Error);
}

class Block : public ::testing::Test {
 protected:
  ModelConfig cfg = small_config();
  VoxelGrid grid = random_grid({4, 4, 4}, 0.5, 21, 4);
  SceneContext ctx = make_scene_context(grid, cfg);
  Rng rng{5};
  BlockWeights w = BlockWeights::init(cfg, rng);
  DiffArray dense = random_array({64, 4}, rng);
};

TEST_F(Block, PreservesVolumeShape) {
  Tape t = Tape::inference();
  Rng noise(1);
  const auto out = block_forward(t, ctx, w, cfg, dense, 0, &noise);
  EXPECT_EQ(out.dense.shape(), (Shape{64, 4}));
  EXPECT_EQ(out.pre_conv.shape(), (Shape{64, 4}));
}

TEST_F(Block, EmptyVoxelsPassThroughBeforeConv) {
  Tape t = Tape::inference();
  const auto out = block_forward(t, ctx, w, cfg, dense, 0, nullptr);
  for (auto v : ctx.empty) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out.pre_conv.at(v, c), dense.at(v, c));
  }
}

TEST_F(Block, ZeroConvIsIdentityOnPreConv) {
  fill(w.conv_kernel, 0.0);
  fill(w.conv_bias, 0.0);
  Tape t = Tape::inference();
  const auto out = block_forward(t, ctx, w, cfg, dense, 0, nullptr);
  for (std::size_t i = 0; i < out.dense.size(); ++i) {
    EXPECT_EQ(out.dense.value()[i], out.pre_conv.value()[i]);
  }
}

TEST_F(Block, ZeroAttentionAndFfnReduceToNormalizedInput) {
  fill(w.attn.wo, 0.0);
  for (const auto& b : w.ffn.biases) fill(b, 0.0);
  fill(w.ffn.weights.back(), 0.0);
  make_constant(w.cmln.gamma, 1.0);
  make_constant(w.cmln.beta, 0.0);
  Tape t = Tape::inference();
  const auto out = block_forward(t, ctx, w, cfg, dense, 0, nullptr);
  const auto expect = layer_norm(t, gather_rows(t, dense, ctx.occupied));
  for (std::size_t i = 0; i < ctx.occupied.size(); ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(out.pre_conv.at(ctx.occupied[i], c), expect.at(i, c), 1e-12);
    }
  }
}

TEST_F(Block, DeterministicUnderFixedSeed) {
  Tape t1 = Tape::inference();
  Tape t2 = Tape::inference();
  Rng n1(9), n2(9);
  const auto a = block_forward(t1, ctx, w, cfg, dense, 3, &n1);
  const auto b = block_forward(t2, ctx, w, cfg, dense, 3, &n2);
  EXPECT_EQ(a.asa.index, b.asa.index);
  for (std::size_t i = 0; i < a.dense.size(); ++i) EXPECT_EQ(a.dense.value()[i], b.dense.value()[i]);
}

TEST_F(Block, GradcheckWithFrozenNoise) {
  const auto rep = gradcheck(
      [&](Tape& t) {
        return weighted_sum(t, block_forward(t, ctx, w, cfg, dense, 2, nullptr).dense);
      },
      {dense, w.attn.wq, w.attn.wo, w.crpe.mlp.weights[0], w.ffn.weights[1], w.cmln.gamma.weights[1],
       w.cmln.beta.biases[1], w.conv_kernel, w.conv_bias},
      1e-5, 1e-4, 24);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " input " << rep.worst_input;
}

TEST_F(Block, AblatedPartsReceiveNoGradient) {
  cfg.use_crpe = false;
  cfg.use_cmln = false;
  Tape t;
  t.backward(weighted_sum(t, block_forward(t, ctx, w, cfg, dense, 0, nullptr).dense));
  for (double g : w.crpe.mlp.weights[0].grad()) EXPECT_EQ(g, 0.0);
  for (double g : w.cmln.gamma.weights[1].grad()) EXPECT_EQ(g, 0.0);
  double norm = 0.0;
  for (double g : w.norm_gamma.grad()) norm += std::abs(g);
  EXPECT_GT(norm, 0.0);
}

TEST(ModelForward, LogitShapeAndDeterminism) {
  ModelConfig cfg = small_config();
  cfg.blocks = 2;
  const auto grid = random_grid({8, 8, 8}, 0.3, 4, 4);
  const auto ctx = make_scene_context(grid, cfg);
  Rng r1(2), r2(2);
  const auto m1 = Model::init(cfg, r1);
  const auto m2 = Model::init(cfg, r2);
  Tape t1 = Tape::inference();
  Tape t2 = Tape::inference();
  Rng n1(8), n2(8);
  const auto a = model_forward(t1, ctx, m1, 0, &n1);
  const auto b = model_forward(t2, ctx, m2, 0, &n2);
  EXPECT_EQ(a.logits.shape(), (Shape{512, 4}));
  EXPECT_EQ(a.shifts.size(), 2u);
  EXPECT_EQ(a.shifts, b.shifts);
  for (std::size_t i = 0; i < a.logits.size(); ++i) {
    ASSERT_TRUE(std::isfinite(a.logits.value()[i]));
    ASSERT_EQ(a.logits.value()[i], b.logits.value()[i]);
  }
}

TEST(ModelForward, GradcheckThroughDecoder) {
  ModelConfig cfg = small_config();
  const auto grid = random_grid({4, 4, 4}, 0.4, 6, 4);
  const auto ctx = make_scene_context(grid, cfg);
  Rng r(3);
  const auto m = Model::init(cfg, r);
  const auto rep = gradcheck(
      [&](Tape& t) { return weighted_sum(t, model_forward(t, ctx, m, 0, nullptr).logits); },
      {m.stem_w, m.blocks[0].attn.wv, m.dec1_kernel, m.dec2_bias, m.head_w}, 1e-5, 1e-4, 16);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " input " << rep.worst_input;
}

}  // namespace
}  // namespace voxelser
