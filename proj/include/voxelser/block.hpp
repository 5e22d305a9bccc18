// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Hybrid attention / convolution block and the small encoder-decoder built
 * from it.
 *
 *   tokens = occupied rows of the dense volume
 *   x1 = tokens + ASA(LN(tokens) [+ CRPE bias])
 *   x2 = x1 + FFN(LN(x1))
 *   h  = CMLN(x2 | mean(tokens))      gamma(ctx) * LN(x2) + beta(ctx)
 *   v  = scatter h back into the volume (empty voxels keep their features)
 *   out = v + relu(conv3x3x3(v))
 *
 * The decoder is two 3x3x3 conv + relu layers and a per-voxel linear head
 * over num_classes + 1 outputs (class 0 = empty).
 */

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "voxelser/asa.hpp"
#include "voxelser/crpe.hpp"
#include "voxelser/error.hpp"
#include "voxelser/grid.hpp"
#include "voxelser/layers.hpp"
#include "voxelser/numcore.hpp"

namespace voxelser {

struct ModelConfig {
  std::size_t input_channels = 4;
  std::size_t num_classes = 3;
  std::size_t channels = 16;
  std::size_t heads = 2;
  std::size_t group_size = 16;
  std::size_t k_shifts = 4;
  std::size_t blocks = 2;
  std::size_t ffn_expansion = 4;
  std::size_t cmln_hidden = 16;
  std::size_t crpe_hidden = 16;
  CurveKind curve = CurveKind::Hilbert;
  ShiftMode shift_mode = ShiftMode::Annealed;
  CandidateEval candidate_eval = CandidateEval::All;
  bool use_crpe = true;
  CenterMode crpe_center = CenterMode::Centroid;
  AngleMode crpe_angles = AngleMode::Relative;
  bool use_cmln = true;
  AnnealSchedule schedule;

  AttentionConfig attention() const {
    return {heads, channels / heads, group_size, curve};
  }

  void validate() const {
    require(channels > 0 && heads > 0 && channels % heads == 0, ErrorCode::BadConfig,
            "channels must be a positive multiple of heads");
    require(group_size >= 1, ErrorCode::InvalidGroupSize, "group_size must be >= 1");
    require(k_shifts >= 1 && group_size % k_shifts == 0, ErrorCode::InvalidShiftConfig,
            "group_size must be divisible by k_shifts");
    require(blocks >= 1, ErrorCode::BadConfig, "need at least one block");
    require(input_channels >= 1 && num_classes >= 1, ErrorCode::BadConfig,
            "input channels and class count must be positive");
    require(ffn_expansion >= 1 && cmln_hidden >= 1 && crpe_hidden >= 1, ErrorCode::BadConfig,
            "hidden widths must be positive");
    schedule.validate();
  }
};

struct CmlnParams {
  Mlp gamma;  // C -> hidden -> C
  Mlp beta;   // C -> hidden -> C

  static CmlnParams init(std::size_t channels, std::size_t hidden, Rng& rng) {
    return {Mlp::init({channels, hidden, channels}, rng, 0.1, 1.0),
            Mlp::init({channels, hidden, channels}, rng, 0.1, 0.0)};
  }
};

/// gamma(ctx) * (h - mean) / std + beta(ctx), statistics over each row of h.
inline DiffArray cmln(Tape& tape, const DiffArray& h, const DiffArray& ctx, const CmlnParams& p,
                      double eps = kLayerNormEps) {
  require(h.ndim() == 2 && ctx.size() == h.dim(1), ErrorCode::ShapeMismatch,
          "cmln: features " + shape_str(h.shape()) + " with context " + shape_str(ctx.shape()));
  require(p.gamma.in_dim() == h.dim(1) && p.gamma.out_dim() == h.dim(1) &&
              p.beta.in_dim() == h.dim(1) && p.beta.out_dim() == h.dim(1),
          ErrorCode::ShapeMismatch, "cmln MLPs must map C -> C");
  const DiffArray row = reshape(tape, ctx, {1, ctx.size()});
  const DiffArray gamma = reshape(tape, p.gamma.forward(tape, row), {h.dim(1)});
  const DiffArray beta = reshape(tape, p.beta.forward(tape, row), {h.dim(1)});
  return add_rowwise(tape, mul_rowwise(tape, layer_norm(tape, h, eps), gamma), beta);
}

struct BlockWeights {
  ShiftSelector selector;
  AttentionWeights attn;
  CrpeMlp crpe;
  Mlp ffn;
  CmlnParams cmln;
  DiffArray norm_gamma;  // plain affine norm used when CMLN is off
  DiffArray norm_beta;
  DiffArray conv_kernel;
  DiffArray conv_bias;

  static BlockWeights init(const ModelConfig& cfg, Rng& rng) {
    const std::size_t c = cfg.channels;
    BlockWeights b;
    b.selector = ShiftSelector(cfg.k_shifts, cfg.group_size);
    b.attn = AttentionWeights::init(c, rng);
    b.crpe = CrpeMlp::init(c, cfg.crpe_hidden, rng);
    b.ffn = Mlp::init({c, c * cfg.ffn_expansion, c}, rng, 0.5);
    b.cmln = CmlnParams::init(c, cfg.cmln_hidden, rng);
    b.norm_gamma = init_constant({c}, 1.0);
    b.norm_beta = init_constant({c}, 0.0);
    b.conv_kernel = init_normal({3, 3, 3, c, c}, 27 * c, rng, 0.5);
    b.conv_bias = init_constant({c}, 0.0);
    return b;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".selector.logits", selector.logits());
    attn.collect(prefix + ".attn", out);
    crpe.mlp.collect(prefix + ".crpe", out);
    ffn.collect(prefix + ".ffn", out);
    cmln.gamma.collect(prefix + ".cmln.gamma", out);
    cmln.beta.collect(prefix + ".cmln.beta", out);
    out.emplace_back(prefix + ".norm.gamma", norm_gamma);
    out.emplace_back(prefix + ".norm.beta", norm_beta);
    out.emplace_back(prefix + ".conv.kernel", conv_kernel);
    out.emplace_back(prefix + ".conv.bias", conv_bias);
  }
};

struct Model {
  ModelConfig config;
  DiffArray stem_w, stem_b;
  std::vector<BlockWeights> blocks;
  DiffArray dec1_kernel, dec1_bias, dec2_kernel, dec2_bias;
  DiffArray head_w, head_b;

  static Model init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t c = cfg.channels;
    Model m;
    m.config = cfg;
    m.stem_w = init_normal({cfg.input_channels, c}, cfg.input_channels, rng);
    m.stem_b = init_constant({c}, 0.0);
    for (std::size_t i = 0; i < cfg.blocks; ++i) m.blocks.push_back(BlockWeights::init(cfg, rng));
    m.dec1_kernel = init_normal({3, 3, 3, c, c}, 27 * c, rng, std::sqrt(2.0));
    m.dec1_bias = init_constant({c}, 0.0);
    m.dec2_kernel = init_normal({3, 3, 3, c, c}, 27 * c, rng, std::sqrt(2.0));
    m.dec2_bias = init_constant({c}, 0.0);
    m.head_w = init_normal({c, cfg.num_classes + 1}, c, rng);
    m.head_b = init_constant({cfg.num_classes + 1}, 0.0);
    return m;
  }

  ParamList parameters() const {
    ParamList out;
    out.emplace_back("stem.w", stem_w);
    out.emplace_back("stem.b", stem_b);
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect("block" + std::to_string(i), out);
    out.emplace_back("decoder.conv1.kernel", dec1_kernel);
    out.emplace_back("decoder.conv1.bias", dec1_bias);
    out.emplace_back("decoder.conv2.kernel", dec2_kernel);
    out.emplace_back("decoder.conv2.bias", dec2_bias);
    out.emplace_back("head.w", head_w);
    out.emplace_back("head.b", head_b);
    return out;
  }
};

/// Everything about a scene that stays fixed across training steps.
struct SceneContext {
  GridDims dims;
  std::vector<std::size_t> occupied;
  std::vector<std::size_t> empty;
  ShiftPlan plan;
  DiffArray deltas;          // [N x 2] CRPE inputs
  DiffArray input_features;  // [N x input_channels]
};

inline SceneContext make_scene_context(const VoxelGrid& grid, const ModelConfig& cfg) {
  require(grid.occupied_count() > 0, ErrorCode::EmptyScene, "grid has no occupied voxels");
  require(grid.feature_dim() == cfg.input_channels, ErrorCode::ShapeMismatch,
          "grid has " + std::to_string(grid.feature_dim()) + " feature channels, model expects " +
              std::to_string(cfg.input_channels));
  SceneContext ctx;
  ctx.dims = grid.dims();
  ctx.occupied.assign(grid.occupied().begin(), grid.occupied().end());
  for (std::size_t v = 0; v < grid.dims().volume(); ++v) {
    if (grid.label(v) == 0) ctx.empty.push_back(v);
  }
  const ShiftSelector probe(cfg.k_shifts, cfg.group_size);
  ctx.plan = make_shift_plan(grid, cfg.curve, cfg.group_size, probe.shifts());
  ctx.deltas = delta_features(
      angular_deltas(grid, reference_center(grid, cfg.crpe_center), cfg.crpe_angles));
  const auto f = grid.occupied_features();
  ctx.input_features =
      DiffArray({grid.occupied_count(), grid.feature_dim()}, std::vector<double>(f.begin(), f.end()));
  return ctx;
}

struct BlockOutput {
  DiffArray dense;     // [V x C]
  DiffArray pre_conv;  // [V x C], the scattered normalized tokens
  AsaOutput asa;
};

/// `rng` null means evaluation: Gumbel noise frozen at zero.
inline BlockOutput block_forward(Tape& tape, const SceneContext& ctx, const BlockWeights& w,
                                 const ModelConfig& cfg, const DiffArray& dense, long t, Rng* rng,
                                 AttentionStats* stats = nullptr) {
  const std::size_t volume = ctx.dims.volume();
  require(dense.ndim() == 2 && dense.dim(0) == volume && dense.dim(1) == cfg.channels,
          ErrorCode::ShapeMismatch, "block input " + shape_str(dense.shape()));
  const DiffArray tokens = gather_rows(tape, dense, ctx.occupied);
  const DiffArray context = mean_rows(tape, tokens);

  DiffArray bias;
  if (cfg.use_crpe) bias = crpe_bias(tape, ctx.deltas, w.crpe);
  BlockOutput out;
  out.asa = asa_forward(tape, layer_norm(tape, tokens), ctx.plan, w.selector, cfg.schedule, t,
                        cfg.attention(), w.attn, cfg.use_crpe ? &bias : nullptr, rng,
                        {cfg.shift_mode, cfg.candidate_eval}, stats);
  const DiffArray x1 = add(tape, tokens, out.asa.tokens);
  const DiffArray x2 = add(tape, x1, w.ffn.forward(tape, layer_norm(tape, x1)));
  const DiffArray h =
      cfg.use_cmln
          ? cmln(tape, x2, context, w.cmln)
          : add_rowwise(tape, mul_rowwise(tape, layer_norm(tape, x2), w.norm_gamma), w.norm_beta);

  out.pre_conv = scatter_rows(tape, h, ctx.occupied, volume);
  if (!ctx.empty.empty()) {
    out.pre_conv = add(tape, out.pre_conv,
                       scatter_rows(tape, gather_rows(tape, dense, ctx.empty), ctx.empty, volume));
  }
  out.dense = add(tape, out.pre_conv,
                  relu(tape, conv3d(tape, out.pre_conv, ctx.dims, w.conv_kernel, w.conv_bias)));
  return out;
}

struct ForwardResult {
  DiffArray features;  // encoder output [V x C]
  DiffArray logits;    // [V x (num_classes + 1)]
  std::vector<std::size_t> shifts;
  double tau = 0.0;
};

inline DiffArray encoder_input(Tape& tape, const SceneContext& ctx, const Model& m) {
  return scatter_rows(tape, linear(tape, ctx.input_features, m.stem_w, m.stem_b), ctx.occupied,
                      ctx.dims.volume());
}

inline ForwardResult encoder_forward(Tape& tape, const SceneContext& ctx, const Model& m, long t,
                                     Rng* rng, AttentionStats* stats = nullptr) {
  ForwardResult r;
  r.features = encoder_input(tape, ctx, m);
  for (const auto& b : m.blocks) {
    auto out = block_forward(tape, ctx, b, m.config, r.features, t, rng, stats);
    r.features = out.dense;
    r.shifts.push_back(out.asa.shift);
    r.tau = out.asa.tau;
  }
  return r;
}

inline DiffArray decoder_forward(Tape& tape, const GridDims& dims, const Model& m,
                                 const DiffArray& features) {
  DiffArray h = relu(tape, conv3d(tape, features, dims, m.dec1_kernel, m.dec1_bias));
  h = relu(tape, conv3d(tape, h, dims, m.dec2_kernel, m.dec2_bias));
  return linear(tape, h, m.head_w, m.head_b);
}

inline ForwardResult model_forward(Tape& tape, const SceneContext& ctx, const Model& m, long t,
                                   Rng* rng, AttentionStats* stats = nullptr) {
  ForwardResult r = encoder_forward(tape, ctx, m, t, rng, stats);
  r.logits = decoder_forward(tape, ctx.dims, m, r.features);
  return r;
}

}  // namespace voxelser
