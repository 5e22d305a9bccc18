// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Single-scene training loop: full-batch SGD with momentum at a constant
// learning rate. Step t uses temperature tau_t, so one step plays the role
// of one epoch in the annealing schedule.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "voxelser/block.hpp"
#include "voxelser/kvconfig.hpp"
#include "voxelser/losses.hpp"

namespace voxelser {

class Sgd {
 public:
  /// clip_norm > 0 rescales the whole gradient to at most that L2 norm.
  Sgd(ParamList params, double lr, double momentum, double clip_norm = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), clip_norm_(clip_norm) {
    for (const auto& [name, p] : params_) velocity_.emplace_back(p.size(), 0.0);
  }

  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  double grad_norm() const {
    double sq = 0.0;
    for (const auto& [name, p] : params_) {
      for (double g : p.grad()) sq += g * g;
    }
    return std::sqrt(sq);
  }

  /// v = momentum * v + c * g; p -= lr * v, with c = min(1, clip / |g|).
  void step() {
    const double norm = clip_norm_ > 0.0 ? grad_norm() : 0.0;
    const double c = norm > clip_norm_ ? clip_norm_ / norm : 1.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto value = params_[i].second.value();
      const auto grad = params_[i].second.grad();
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum_ * v[j] + c * grad[j];
        value[j] -= lr_ * v[j];
      }
    }
  }

 private:
  ParamList params_;
  double lr_;
  double momentum_;
  double clip_norm_;
  std::vector<std::vector<double>> velocity_;
};

struct TraceRow {
  long step = 0;
  double tau = 0.0;
  LossReport loss;
  double miou = 0.0;
  double sc_iou = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> shifts;  // selected shift per block
};

inline void write_trace_header(std::ostream& os) {
  os << "step,tau,l_ce,l_scal_sem,l_scal_geo,l_total,miou,sc_iou,accuracy,shifts\n";
}

inline void write_trace_row(std::ostream& os, const TraceRow& r) {
  os << r.step << ',' << r.tau << ',' << r.loss.l_ce << ',' << r.loss.l_scal_sem << ','
     << r.loss.l_scal_geo << ',' << r.loss.l_total << ',' << r.miou << ',' << r.sc_iou << ','
     << r.accuracy << ',';
  for (std::size_t i = 0; i < r.shifts.size(); ++i) os << (i ? ";" : "") << r.shifts[i];
  os << '\n';
}

/// Model dimensions that follow from the scene rather than the config file.
inline TrainConfig fit_to_scene(TrainConfig cfg, const VoxelGrid& scene) {
  cfg.model.input_channels = scene.feature_dim();
  cfg.model.num_classes = scene.num_classes();
  cfg.model.validate();
  return cfg;
}

/// Predictions with the Gumbel noise frozen at zero.
inline SscMetrics evaluate(const Model& m, const VoxelGrid& scene, long t = 0) {
  const SceneContext ctx = make_scene_context(scene, m.config);
  Tape tape = Tape::inference();
  const auto out = model_forward(tape, ctx, m, t, nullptr);
  return ssc_metrics(argmax_rows(out.logits), scene.labels(), scene.num_classes());
}

struct TrainResult {
  TrainConfig config;
  Model model;
  std::vector<TraceRow> trace;
};

/// `steps` = 0 returns the initial model with an empty trace. Training stops
/// early at the first non-finite loss, which is the last trace row.
inline TrainResult train_toy(const VoxelGrid& scene, TrainConfig cfg, long steps,
                             std::uint64_t seed) {
  require(steps >= 0, ErrorCode::BadConfig, "steps must be >= 0");
  cfg = fit_to_scene(std::move(cfg), scene);
  require(cfg.lr > 0.0 && cfg.momentum >= 0.0 && cfg.momentum < 1.0, ErrorCode::BadConfig,
          "need lr > 0 and 0 <= momentum < 1");
  Rng rng(seed);
  TrainResult r{cfg, Model::init(cfg.model, rng), {}};
  const SceneContext ctx = make_scene_context(scene, cfg.model);
  Sgd opt(r.model.parameters(), cfg.lr, cfg.momentum, cfg.grad_clip);

  for (long t = 0; t < steps; ++t) {
    Tape tape;
    opt.zero_grad();
    const auto out = model_forward(tape, ctx, r.model, t, &rng);
    const auto obj = total_loss(tape, out.logits, scene.labels());
    tape.backward(obj.total);
    opt.step();

    const auto metrics = ssc_metrics(argmax_rows(out.logits), scene.labels(), scene.num_classes());
    r.trace.push_back({t, out.tau, obj.report, metrics.miou, metrics.sc_iou, metrics.accuracy,
                       out.shifts});
    if (!std::isfinite(obj.report.l_total)) break;  // callers inspect the trace
  }
  return r;
}

}  // namespace voxelser
