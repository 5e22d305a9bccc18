// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Finite-difference gradient suites, one per module, at h = 1e-5 and
// relative tolerance 1e-4. Inputs are seeded so every run checks the same
// points.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "voxelser/asa.hpp"
#include "voxelser/block.hpp"
#include "voxelser/crpe.hpp"
#include "voxelser/gradcheck.hpp"
#include "voxelser/losses.hpp"
#include "voxelser/numcore.hpp"
#include "voxelser/synth.hpp"

namespace voxelser {

struct SuiteCase {
  std::string module;
  std::string name;
  GradcheckReport report;
};

inline constexpr double kSuiteStep = 1e-5;
inline constexpr double kSuiteTolerance = 1e-4;

inline const std::vector<std::string>& suite_modules() {
  static const std::vector<std::string> m{"numcore", "asa", "crpe", "block", "losses"};
  return m;
}

namespace suite {

inline DiffArray uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  DiffArray a(std::move(shape), true);
  for (auto& v : a.value()) v = u(rng);
  return a;
}

/// sum(a * w) with fixed random w, so every output element matters.
inline DiffArray probe(Tape& t, const DiffArray& a) {
  Rng rng(1234);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  DiffArray w(a.shape());
  for (auto& v : w.value()) v = u(rng);
  return sum(t, mul(t, a, w));
}

inline GradcheckReport check(const ScalarFn& f, const std::vector<DiffArray>& inputs,
                             std::size_t max_elements = 0) {
  return gradcheck(f, inputs, kSuiteStep, kSuiteTolerance, max_elements);
}

inline VoxelGrid small_scene(std::size_t channels) {
  SceneSpec s;
  s.dims = {4, 4, 4};
  s.classes = 2;
  s.seed = 17;
  s.noise = 0.1;
  s.primitives = {Plane{'z', 0, 1, 1}, Box{1, 0, 1, 3, 3, 4, 2}, Box{3, 3, 1, 4, 4, 2, 1}};
  VoxelGrid g = generate(s);
  if (channels == g.feature_dim()) return g;
  Rng rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> f(g.occupied_count() * channels);
  for (auto& v : f) v = u(rng);
  return VoxelGrid(g.dims(), {g.labels().begin(), g.labels().end()}, g.num_classes(), channels,
                   std::move(f));
}

inline std::vector<SuiteCase> numcore(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteCase> out;
  const auto x = uniform({4, 5}, rng, -2, 2);
  out.push_back({"numcore", "softmax_rows", check([&](Tape& t) { return probe(t, softmax(t, x, 1)); }, {x})});
  out.push_back({"numcore", "softmax_cols", check([&](Tape& t) { return probe(t, softmax(t, x, 0)); }, {x})});
  out.push_back({"numcore", "log_softmax", check([&](Tape& t) { return probe(t, log_softmax(t, x)); }, {x})});
  out.push_back({"numcore", "layer_norm", check([&](Tape& t) { return probe(t, layer_norm(t, x)); }, {x})});
  const GridDims dims{3, 4, 2};
  const auto vol = uniform({dims.volume(), 2}, rng);
  const auto kernel = uniform({3, 3, 3, 2, 3}, rng);
  const auto bias = uniform({3}, rng);
  out.push_back({"numcore", "conv3d",
                 check([&](Tape& t) { return probe(t, conv3d(t, vol, dims, kernel, bias)); },
                       {vol, kernel, bias})});
  return out;
}

inline std::vector<SuiteCase> asa(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteCase> out;
  const AttentionConfig cfg{2, 3, 4, CurveKind::Hilbert};
  const auto w = AttentionWeights::init(6, rng);
  const auto tokens = uniform({10, 6}, rng);
  const auto bias = uniform({10, 6}, rng, -0.5, 0.5);
  const auto part = partition(10, 4);
  out.push_back({"asa", "grouped_attention",
                 check([&](Tape& t) { return probe(t, grouped_attention(t, tokens, part, cfg, w, &bias)); },
                       {tokens, bias, w.wq, w.wk, w.wv, w.wo})});

  const auto grid = small_scene(6);
  ShiftSelector sel(4, 8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& v : sel.logits().value()) v = n(rng);
  const auto plan = make_shift_plan(grid, CurveKind::Hilbert, 8, sel.shifts());
  const auto f = grid.occupied_features();
  const DiffArray occ({grid.occupied_count(), 6}, std::vector<double>(f.begin(), f.end()));
  const AttentionConfig gcfg{2, 3, 8, CurveKind::Hilbert};
  const AnnealSchedule schedule;
  out.push_back({"asa", "adaptive_frozen_noise",
                 check([&](Tape& t) {
                   return probe(t, asa_forward(t, occ, plan, sel, schedule, 3, gcfg, w, nullptr, nullptr).tokens);
                 }, {occ, w.wq, w.wk, w.wv, w.wo}, 32)});
  out.push_back({"asa", "vanilla_shift_mixture",
                 check([&](Tape& t) {
                   return probe(t, asa_forward(t, occ, plan, sel, schedule, 0, gcfg, w, nullptr, nullptr,
                                               {ShiftMode::Vanilla}).tokens);
                 }, {sel.logits(), occ, w.wv}, 32)});
  return out;
}

inline std::vector<SuiteCase> crpe(std::uint64_t seed) {
  Rng rng(seed);
  const auto grid = small_scene(2);
  const auto m = CrpeMlp::init(6, 8, rng);
  const DiffArray deltas = delta_features(angular_deltas(grid, scene_center(grid)));
  return {{"crpe", "crpe_mlp",
           check([&](Tape& t) { return probe(t, crpe_bias(t, deltas, m)); },
                 {m.mlp.weights[0], m.mlp.biases[0], m.mlp.weights[1], m.mlp.biases[1]})}};
}

inline std::vector<SuiteCase> block(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteCase> out;
  const auto p = CmlnParams::init(6, 8, rng);
  const auto h = uniform({5, 6}, rng);
  const auto ctx = uniform({6}, rng);
  out.push_back({"block", "cmln",
                 check([&](Tape& t) { return probe(t, cmln(t, h, ctx, p)); },
                       {h, ctx, p.gamma.weights[0], p.gamma.weights[1], p.gamma.biases[1],
                        p.beta.weights[1], p.beta.biases[1]})});

  ModelConfig cfg;
  cfg.input_channels = 3;
  cfg.num_classes = 2;
  cfg.channels = 4;
  cfg.heads = 2;
  cfg.group_size = 8;
  cfg.k_shifts = 4;
  cfg.blocks = 1;
  cfg.ffn_expansion = 2;
  cfg.cmln_hidden = 4;
  cfg.crpe_hidden = 4;
  const auto grid = small_scene(3);
  const auto sc = make_scene_context(grid, cfg);
  const auto w = BlockWeights::init(cfg, rng);
  const auto dense = uniform({grid.dims().volume(), 4}, rng);
  out.push_back({"block", "block_frozen_noise",
                 check([&](Tape& t) { return probe(t, block_forward(t, sc, w, cfg, dense, 2, nullptr).dense); },
                       {dense, w.attn.wq, w.attn.wk, w.attn.wv, w.attn.wo, w.crpe.mlp.weights[0],
                        w.ffn.weights[0], w.ffn.weights[1], w.cmln.gamma.weights[1],
                        w.cmln.beta.weights[1], w.conv_kernel, w.conv_bias},
                       24)});
  return out;
}

inline std::vector<SuiteCase> losses(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SuiteCase> out;
  const auto logits = uniform({16, 3}, rng, -2, 2);
  std::vector<std::uint8_t> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint8_t>(i % 3);
  out.push_back({"losses", "cross_entropy",
                 check([&](Tape& t) { return cross_entropy(t, logits, labels); }, {logits})});
  out.push_back({"losses", "scal_semantic",
                 check([&](Tape& t) {
                   return scal_loss(t, softmax(t, logits, 1), labels, ScalMode::Semantic);
                 }, {logits})});
  out.push_back({"losses", "scal_geometric",
                 check([&](Tape& t) {
                   return scal_loss(t, geometric_probs(t, softmax(t, logits, 1)), labels, ScalMode::Geometric);
                 }, {logits})});
  return out;
}

}  // namespace suite

/// `module` is one of suite_modules() or "all".
inline std::vector<SuiteCase> run_gradcheck_suite(const std::string& module, std::uint64_t seed = 7) {
  std::vector<SuiteCase> out;
  auto append = [&out](std::vector<SuiteCase> more) {
    for (auto& c : more) out.push_back(std::move(c));
  };
  const bool all = module == "all";
  if (all || module == "numcore") append(suite::numcore(seed));
  if (all || module == "asa") append(suite::asa(seed));
  if (all || module == "crpe") append(suite::crpe(seed));
  if (all || module == "block") append(suite::block(seed));
  if (all || module == "losses") append(suite::losses(seed));
  require(!out.empty(), ErrorCode::BadConfig,
          "unknown module '" + module + "' (numcore, asa, crpe, block, losses, all)");
  return out;
}

}  // namespace voxelser
