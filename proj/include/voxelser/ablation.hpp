// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Ablation variants on the toy scene. Each variant edits the base config:
 *
 *   components   baseline      fixed shift 0, no CRPE, plain layer norm
 *                +asa          annealed adaptive shift
 *                +crpe         + center-relative positional encoding
 *                +cmln         + context-modulated layer norm (full model)
 *   shift        vanilla_shift full model, softmax mixture over shifts
 *                gumbel_shift  full model, straight-through Gumbel at tau_init
 *   crpe         wo_crpe       full model without CRPE
 *                wo_pvm        CRPE measured from the grid center
 *                wo_ryp        CRPE from absolute yaw / pitch
 */

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "voxelser/kvconfig.hpp"
#include "voxelser/train.hpp"

namespace voxelser {

struct AblationVariant {
  std::string table;
  std::string name;
  std::function<void(ModelConfig&)> edit;
};

inline void full_model(ModelConfig& m) {
  m.shift_mode = ShiftMode::Annealed;
  m.use_crpe = true;
  m.crpe_center = CenterMode::Centroid;
  m.crpe_angles = AngleMode::Relative;
  m.use_cmln = true;
}

inline std::vector<AblationVariant> ablation_variants() {
  return {
      {"components", "baseline",
       [](ModelConfig& m) {
         full_model(m);
         m.shift_mode = ShiftMode::Fixed;
         m.use_crpe = false;
         m.use_cmln = false;
       }},
      {"components", "+asa",
       [](ModelConfig& m) {
         full_model(m);
         m.use_crpe = false;
         m.use_cmln = false;
       }},
      {"components", "+crpe",
       [](ModelConfig& m) {
         full_model(m);
         m.use_cmln = false;
       }},
      {"components", "+cmln", full_model},
      {"shift", "vanilla_shift",
       [](ModelConfig& m) {
         full_model(m);
         m.shift_mode = ShiftMode::Vanilla;
       }},
      {"shift", "gumbel_shift",
       [](ModelConfig& m) {
         full_model(m);
         m.shift_mode = ShiftMode::Gumbel;
       }},
      {"crpe", "wo_crpe",
       [](ModelConfig& m) {
         full_model(m);
         m.use_crpe = false;
       }},
      {"crpe", "wo_pvm",
       [](ModelConfig& m) {
         full_model(m);
         m.crpe_center = CenterMode::GridCenter;
       }},
      {"crpe", "wo_ryp",
       [](ModelConfig& m) {
         full_model(m);
         m.crpe_angles = AngleMode::Absolute;
       }},
  };
}

struct AblationRow {
  std::string table;
  std::string name;
  TrainConfig config;
  long steps = 0;
  double final_loss = 0.0;
  SscMetrics metrics;
  std::vector<std::size_t> shifts;
};

inline AblationRow run_ablation(const AblationVariant& v, const VoxelGrid& scene, TrainConfig base,
                                long steps, std::uint64_t seed) {
  v.edit(base.model);
  const TrainResult r = train_toy(scene, base, steps, seed);
  AblationRow row{v.table, v.name, r.config, static_cast<long>(r.trace.size()), 0.0, evaluate(r.model, scene), {}};
  if (!r.trace.empty()) {
    row.final_loss = r.trace.back().loss.l_total;
    row.shifts = r.trace.back().shifts;
  }
  return row;
}

inline void write_ablation_header(std::ostream& os) {
  os << "table,config,shift_mode,crpe,crpe_center,crpe_angles,cmln,steps,final_loss,accuracy,sc_iou,"
        "miou,shifts\n";
}

inline void write_ablation_row(std::ostream& os, const AblationRow& r) {
  const auto& m = r.config.model;
  os << r.table << ',' << r.name << ',' << to_string(m.shift_mode) << ',' << (m.use_crpe ? "on" : "off")
     << ',' << to_string(m.crpe_center) << ',' << to_string(m.crpe_angles) << ','
     << (m.use_cmln ? "on" : "off") << ',' << r.steps << ',' << r.final_loss << ','
     << r.metrics.accuracy << ',' << r.metrics.sc_iou << ',' << r.metrics.miou << ',';
  for (std::size_t i = 0; i < r.shifts.size(); ++i) os << (i ? ";" : "") << r.shifts[i];
  os << '\n';
}

}  // namespace voxelser
