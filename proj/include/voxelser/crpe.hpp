// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Center-relative positional encoding.
 *
 * With c the mean coordinate of the occupied voxels and g the geometric
 * center of the volume ((D-1)/2, (H-1)/2, (W-1)/2):
 *
 *   d_i = p_i - c          d_c = g - c
 *   yaw(d)   = atan2(d.x, d.y)                  (argument order as written)
 *   pitch(d) = atan2(d.z, sqrt(d.x^2 + d.y^2))
 *   delta_yaw_i   = wrap(yaw(d_i) - yaw(d_c))
 *   delta_pitch_i = wrap(pitch(d_i) - pitch(d_c))
 *
 * A zero d-vector has yaw = pitch = 0. Wrapping maps into (-pi, pi].
 * The (delta_yaw, delta_pitch) pair goes through a small MLP whose output is
 * added to every token before the attention projections.
 */

#include <cmath>
#include <numbers>
#include <vector>

#include "voxelser/error.hpp"
#include "voxelser/grid.hpp"
#include "voxelser/layers.hpp"
#include "voxelser/numcore.hpp"

namespace voxelser {

struct SceneCenter {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct AngularDelta {
  double yaw = 0.0;
  double pitch = 0.0;
};

enum class CenterMode {
  Centroid,    // mean of occupied voxel coordinates
  GridCenter,  // fixed geometric center of the volume
};

enum class AngleMode {
  Relative,  // bearing minus the grid center's bearing
  Absolute,  // bearing about the reference point only
};

inline SceneCenter scene_center(const VoxelGrid& grid) {
  require(grid.occupied_count() > 0, ErrorCode::EmptyScene, "grid has no occupied voxels");
  double sx = 0.0, sy = 0.0, sz = 0.0;
  for (auto v : grid.occupied()) {
    const auto c = grid.dims().coord(v);
    sx += c.x;
    sy += c.y;
    sz += c.z;
  }
  const double n = static_cast<double>(grid.occupied_count());
  return {sx / n, sy / n, sz / n};
}

inline SceneCenter grid_center(const GridDims& dims) {
  return {(dims.d - 1) / 2.0, (dims.h - 1) / 2.0, (dims.w - 1) / 2.0};
}

inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

struct Bearing {
  double yaw = 0.0;
  double pitch = 0.0;
};

inline Bearing bearing(double dx, double dy, double dz) {
  if (dx == 0.0 && dy == 0.0 && dz == 0.0) return {};
  return {std::atan2(dx, dy), std::atan2(dz, std::sqrt(dx * dx + dy * dy))};
}

/// Per occupied voxel, in grid.occupied() order.
inline std::vector<AngularDelta> angular_deltas(const VoxelGrid& grid, const SceneCenter& reference,
                                                AngleMode mode = AngleMode::Relative) {
  const auto g = grid_center(grid.dims());
  const Bearing ref = mode == AngleMode::Relative
                          ? bearing(g.x - reference.x, g.y - reference.y, g.z - reference.z)
                          : Bearing{};
  std::vector<AngularDelta> out;
  out.reserve(grid.occupied_count());
  for (auto v : grid.occupied()) {
    const auto p = grid.dims().coord(v);
    const double dx = p.x - reference.x, dy = p.y - reference.y, dz = p.z - reference.z;
    if (dx == 0.0 && dy == 0.0 && dz == 0.0) {
      out.push_back({});
      continue;
    }
    const Bearing b = bearing(dx, dy, dz);
    out.push_back({wrap_angle(b.yaw - ref.yaw), wrap_angle(b.pitch - ref.pitch)});
  }
  return out;
}

inline SceneCenter reference_center(const VoxelGrid& grid, CenterMode mode) {
  return mode == CenterMode::Centroid ? scene_center(grid) : grid_center(grid.dims());
}

/// Deltas as a constant [N x 2] array (yaw, pitch).
inline DiffArray delta_features(const std::vector<AngularDelta>& deltas) {
  DiffArray a({deltas.size(), 2});
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    a.at(i, 0) = deltas[i].yaw;
    a.at(i, 1) = deltas[i].pitch;
  }
  return a;
}

struct CrpeMlp {
  Mlp mlp;  // 2 -> hidden -> C

  static CrpeMlp init(std::size_t channels, std::size_t hidden, Rng& rng) {
    return {Mlp::init({2, hidden, channels}, rng, 0.5)};
  }
};

/// Row i = MLP(delta_yaw_i, delta_pitch_i).
inline DiffArray crpe_bias(Tape& tape, const DiffArray& delta_rows, const CrpeMlp& m) {
  require(delta_rows.ndim() == 2 && delta_rows.dim(1) == 2 && m.mlp.in_dim() == 2,
          ErrorCode::ShapeMismatch, "CRPE expects [N x 2] deltas and a 2-input MLP");
  return m.mlp.forward(tape, delta_rows);
}

inline DiffArray crpe_bias(Tape& tape, const std::vector<AngularDelta>& deltas, const CrpeMlp& m) {
  return crpe_bias(tape, delta_features(deltas), m);
}

}  // namespace voxelser
