// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Adaptive serialized attention.
 *
 * Tokens are ordered along a space-filling curve, rotated by a shift, cut into
 * groups of G consecutive tokens and attend only within their group. The
 * shift is one of K candidates k * (G / K), picked by a straight-through
 * Gumbel-Softmax over K learnable logits:
 *
 *   y_soft = softmax((l + g) / tau),  g ~ Gumbel(0, 1)
 *   y_hard = one_hot(argmax y_soft)
 *   y_st   = y_hard forward, d/dy_soft backward
 *
 * with tau_t = max(tau_min, tau_init * exp(-alpha * t)).
 *
 * The selected output is sum_k y_st[k] * attention(shift_k). The forward value
 * is exactly the argmax candidate's output; the logits receive gradient from
 * every candidate.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "voxelser/error.hpp"
#include "voxelser/grid.hpp"
#include "voxelser/layers.hpp"
#include "voxelser/numcore.hpp"

namespace voxelser {

// --- temperature ----------------------------------------------------------------

struct AnnealSchedule {
  double tau_init = 1.0;
  double tau_min = 0.1;
  double alpha = 0.01;

  void validate() const {
    require(tau_min > 0.0 && tau_init >= tau_min && alpha >= 0.0, ErrorCode::BadConfig,
            "anneal schedule needs tau_init >= tau_min > 0 and alpha >= 0");
  }
};

inline double anneal(const AnnealSchedule& s, long t) {
  s.validate();
  require(t >= 0, ErrorCode::BadConfig, "anneal epoch must be >= 0");
  return std::max(s.tau_min, s.tau_init * std::exp(-s.alpha * static_cast<double>(t)));
}

// --- Gumbel noise ---------------------------------------------------------------

inline constexpr double kGumbelClamp = 1e-12;

inline double gumbel_from_uniform(double u) {
  u = std::clamp(u, kGumbelClamp, 1.0 - kGumbelClamp);
  return -std::log(-std::log(u));
}

inline std::vector<double> sample_gumbel(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> g(n);
  for (auto& v : g) v = gumbel_from_uniform(uniform(rng));
  return g;
}

// --- shift selector -------------------------------------------------------------

class ShiftSelector {
 public:
  ShiftSelector() = default;

  ShiftSelector(std::size_t candidates, std::size_t patch_size)
      : patch_size_(patch_size), logits_({candidates}, true) {
    require(candidates >= 1, ErrorCode::InvalidShiftConfig, "need at least one shift candidate");
    require(patch_size >= 1 && patch_size % candidates == 0, ErrorCode::InvalidShiftConfig,
            "patch size " + std::to_string(patch_size) + " not divisible by " +
                std::to_string(candidates) + " candidates");
  }

  std::size_t candidates() const { return logits_.size(); }
  std::size_t patch_size() const { return patch_size_; }
  std::size_t shift(std::size_t k) const { return k * (patch_size_ / candidates()); }
  std::vector<std::size_t> shifts() const {
    std::vector<std::size_t> s(candidates());
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = shift(k);
    return s;
  }

  const DiffArray& logits() const { return logits_; }

 private:
  std::size_t patch_size_ = 1;
  DiffArray logits_;
};

struct ShiftSample {
  std::size_t index = 0;
  std::size_t shift = 0;
  DiffArray y_soft;
  DiffArray y_st;
};

/// Straight-through Gumbel-Softmax with explicit noise (all zeros = frozen).
inline ShiftSample st_gumbel_select(Tape& tape, const ShiftSelector& selector, double tau,
                                    std::span<const double> noise) {
  require(tau > 0.0, ErrorCode::BadConfig, "temperature must be > 0");
  const std::size_t k = selector.candidates();
  require(noise.size() == k, ErrorCode::ShapeMismatch, "noise length != candidate count");
  const DiffArray g({k}, std::vector<double>(noise.begin(), noise.end()));
  ShiftSample s;
  s.y_soft = softmax(tape, scale(tape, add(tape, selector.logits(), g), 1.0 / tau), 0);
  const auto soft = s.y_soft.value();
  s.index = static_cast<std::size_t>(std::max_element(soft.begin(), soft.end()) - soft.begin());
  std::vector<double> hard(k, 0.0);
  hard[s.index] = 1.0;
  s.y_st = straight_through(tape, hard, s.y_soft);
  s.shift = selector.shift(s.index);
  return s;
}

/// Draws fresh noise from rng, or uses zero noise when rng is null.
inline ShiftSample st_gumbel_select(Tape& tape, const ShiftSelector& selector, double tau, Rng* rng) {
  const auto noise =
      rng ? sample_gumbel(selector.candidates(), *rng) : std::vector<double>(selector.candidates());
  return st_gumbel_select(tape, selector, tau, noise);
}

// --- grouped attention ----------------------------------------------------------

struct AttentionConfig {
  std::size_t heads = 2;
  std::size_t head_dim = 8;
  std::size_t group_size = 16;
  CurveKind curve = CurveKind::Hilbert;

  std::size_t channels() const { return heads * head_dim; }
};

struct AttentionWeights {
  DiffArray wq, wk, wv, wo;  // each [C x C]

  static AttentionWeights init(std::size_t channels, Rng& rng) {
    return {init_normal({channels, channels}, channels, rng),
            init_normal({channels, channels}, channels, rng),
            init_normal({channels, channels}, channels, rng),
            init_normal({channels, channels}, channels, rng, 0.5)};
  }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".wo", wo);
  }
};

struct AttentionStats {
  std::uint64_t token_pairs = 0;
};

/// Multi-head scaled dot-product attention computed independently inside each
/// group of `part`. Rows of `tokens` are in sequence order. `bias`, when given,
/// is added to every token before the projections.
inline DiffArray grouped_attention(Tape& tape, const DiffArray& tokens, const GroupPartition& part,
                                   const AttentionConfig& cfg, const AttentionWeights& w,
                                   const DiffArray* bias = nullptr,
                                   AttentionStats* stats = nullptr) {
  require(tokens.ndim() == 2 && tokens.dim(1) == cfg.channels(), ErrorCode::ShapeMismatch,
          "attention tokens " + shape_str(tokens.shape()) + " vs channels " +
              std::to_string(cfg.channels()));
  require(part.tokens == tokens.dim(0), ErrorCode::ShapeMismatch,
          "partition covers " + std::to_string(part.tokens) + " tokens, got " +
              std::to_string(tokens.dim(0)));
  if (bias) {
    require(bias->shape() == tokens.shape(), ErrorCode::ShapeMismatch,
            "attention bias " + shape_str(bias->shape()));
  }
  const DiffArray x = bias ? add(tape, tokens, *bias) : tokens;
  const DiffArray q = matmul(tape, x, w.wq);
  const DiffArray k = matmul(tape, x, w.wk);
  const DiffArray v = matmul(tape, x, w.wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));

  std::vector<DiffArray> groups;
  groups.reserve(part.groups.size());
  for (const auto& grp : part.groups) {
    const DiffArray qg = slice(tape, q, 0, grp.begin, grp.end);
    const DiffArray kg = slice(tape, k, 0, grp.begin, grp.end);
    const DiffArray vg = slice(tape, v, 0, grp.begin, grp.end);
    std::vector<DiffArray> heads;
    heads.reserve(cfg.heads);
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const std::size_t c0 = h * cfg.head_dim, c1 = c0 + cfg.head_dim;
      const DiffArray qh = slice(tape, qg, 1, c0, c1);
      const DiffArray kh = slice(tape, kg, 1, c0, c1);
      const DiffArray vh = slice(tape, vg, 1, c0, c1);
      const DiffArray scores = scale(tape, matmul(tape, qh, transpose(tape, kh)), inv_sqrt);
      heads.push_back(matmul(tape, softmax(tape, scores, 1), vh));
    }
    groups.push_back(cfg.heads == 1 ? heads.front() : concat(tape, heads, 1));
    if (stats) stats->token_pairs += grp.size() * grp.size();
  }
  return matmul(tape, groups.size() == 1 ? groups.front() : concat(tape, groups, 0), w.wo);
}

// --- shift plans ----------------------------------------------------------------

/// Serialization of the occupied voxels under one candidate shift. `rows` maps
/// sequence position -> occupied row (position in grid.occupied()).
struct ShiftCandidate {
  std::size_t shift = 0;
  std::vector<std::size_t> rows;
  GroupPartition partition;
};

struct ShiftPlan {
  std::vector<ShiftCandidate> candidates;
};

inline ShiftPlan make_shift_plan(const VoxelGrid& grid, CurveKind curve, std::size_t group_size,
                                 std::span<const std::size_t> shifts) {
  const auto occ = grid.occupied();
  ShiftPlan plan;
  for (auto s : shifts) {
    const auto seq = serialize(grid, curve, s);
    ShiftCandidate c;
    c.shift = s;
    c.rows.reserve(seq.order.size());
    for (auto v : seq.order) {
      c.rows.push_back(static_cast<std::size_t>(std::lower_bound(occ.begin(), occ.end(), v) - occ.begin()));
    }
    c.partition = partition(seq, group_size);
    plan.candidates.push_back(std::move(c));
  }
  return plan;
}

/// Attention under one candidate, returned in occupied-row order.
inline DiffArray attend_candidate(Tape& tape, const DiffArray& tokens, const ShiftCandidate& c,
                                  const AttentionConfig& cfg, const AttentionWeights& w,
                                  const DiffArray* bias, AttentionStats* stats) {
  const DiffArray seq = gather_rows(tape, tokens, c.rows);
  DiffArray seq_bias;
  if (bias) seq_bias = gather_rows(tape, *bias, c.rows);
  const DiffArray out =
      grouped_attention(tape, seq, c.partition, cfg, w, bias ? &seq_bias : nullptr, stats);
  return scatter_rows(tape, out, c.rows, tokens.dim(0));
}

// --- adaptive serialized attention ------------------------------------------------

enum class ShiftMode {
  Fixed,     // shift 0 only, no selector
  Vanilla,   // soft mixture softmax(l) over all candidates, no Gumbel, no hard forward
  Gumbel,    // straight-through Gumbel-Softmax at constant tau_init
  Annealed,  // straight-through Gumbel-Softmax with tau_t
};

enum class CandidateEval {
  All,         // attend under every candidate shift (reference)
  ArgmaxOnly,  // attend under the selected shift only
};

struct AsaOptions {
  ShiftMode mode = ShiftMode::Annealed;
  CandidateEval eval = CandidateEval::All;
};

struct AsaOutput {
  DiffArray tokens;  // [N x C], occupied-row order
  std::size_t index = 0;
  std::size_t shift = 0;
  double tau = 1.0;
  DiffArray selection;  // y_st, or the soft weights in Vanilla mode
};

/// One adaptive attention layer. `plan` must hold the selector's candidate
/// shifts in order. A null rng freezes the Gumbel noise at zero.
inline AsaOutput asa_forward(Tape& tape, const DiffArray& tokens, const ShiftPlan& plan,
                             const ShiftSelector& selector, const AnnealSchedule& schedule, long t,
                             const AttentionConfig& cfg, const AttentionWeights& w,
                             const DiffArray* bias, Rng* rng, AsaOptions opts = {},
                             AttentionStats* stats = nullptr) {
  require(plan.candidates.size() == selector.candidates(), ErrorCode::ShapeMismatch,
          "shift plan / selector candidate count mismatch");
  AsaOutput out;
  const std::size_t k_count = selector.candidates();

  if (opts.mode == ShiftMode::Fixed) {
    out.tokens = attend_candidate(tape, tokens, plan.candidates[0], cfg, w, bias, stats);
    out.shift = plan.candidates[0].shift;
    return out;
  }

  if (opts.mode == ShiftMode::Vanilla) {
    out.selection = softmax(tape, selector.logits(), 0);
    const auto p = out.selection.value();
    out.index = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    out.shift = plan.candidates[out.index].shift;
    for (std::size_t k = 0; k < k_count; ++k) {
      const DiffArray term = scale_by(
          tape, attend_candidate(tape, tokens, plan.candidates[k], cfg, w, bias, stats),
          out.selection, k);
      out.tokens = k == 0 ? term : add(tape, out.tokens, term);
    }
    return out;
  }

  out.tau = opts.mode == ShiftMode::Annealed ? anneal(schedule, t) : schedule.tau_init;
  const ShiftSample sample = st_gumbel_select(tape, selector, out.tau, rng);
  out.index = sample.index;
  out.shift = plan.candidates[sample.index].shift;
  out.selection = sample.y_st;

  if (opts.eval == CandidateEval::All) {
    for (std::size_t k = 0; k < k_count; ++k) {
      const DiffArray term = scale_by(
          tape, attend_candidate(tape, tokens, plan.candidates[k], cfg, w, bias, stats),
          sample.y_st, k);
      out.tokens = k == 0 ? term : add(tape, out.tokens, term);
    }
    return out;
  }

  // Only the selected shift is attended. Unselected candidates contribute
  // y_st[k] * stop_grad(tokens): zero in the forward pass, and their logits
  // are scored against the unattended input in the backward pass.
  const DiffArray proxy = detach(tokens);
  out.tokens = scale_by(
      tape, attend_candidate(tape, tokens, plan.candidates[out.index], cfg, w, bias, stats),
      sample.y_st, out.index);
  for (std::size_t k = 0; k < k_count; ++k) {
    if (k == out.index) continue;
    out.tokens = add(tape, out.tokens, scale_by(tape, proxy, sample.y_st, k));
  }
  return out;
}

/// Convenience entry point over a grid's own occupied features.
inline AsaOutput asa_forward(Tape& tape, const VoxelGrid& grid, const ShiftSelector& selector,
                             const AnnealSchedule& schedule, long t, const AttentionConfig& cfg,
                             const AttentionWeights& w, Rng* rng, AsaOptions opts = {}) {
  require(grid.occupied_count() > 0, ErrorCode::EmptyScene, "grid has no occupied voxels");
  const auto shifts = selector.shifts();
  const ShiftPlan plan = make_shift_plan(grid, cfg.curve, cfg.group_size, shifts);
  const auto f = grid.occupied_features();
  const DiffArray tokens({grid.occupied_count(), grid.feature_dim()},
                         std::vector<double>(f.begin(), f.end()));
  return asa_forward(tape, tokens, plan, selector, schedule, t, cfg, w, nullptr, rng, opts);
}

}  // namespace voxelser
