// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "voxelser/grid.hpp"
#include "voxelser/numcore.hpp"

namespace voxelser::testing {

/// Random labelled grid with roughly `occupancy` fraction of voxels filled
/// (always at least one) and uniform random features.
inline VoxelGrid random_grid(GridDims dims, double occupancy, std::uint64_t seed,
                             std::size_t channels = 4, std::uint16_t classes = 3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> cls(1, classes);
  std::vector<std::uint8_t> labels(dims.volume(), 0);
  std::size_t occupied = 0;
  for (auto& l : labels) {
    if (u(rng) < occupancy) {
      l = static_cast<std::uint8_t>(cls(rng));
      ++occupied;
    }
  }
  if (occupied == 0) {
    labels[rng() % labels.size()] = 1;
    occupied = 1;
  }
  std::vector<double> features(occupied * channels);
  for (auto& f : features) f = u(rng) * 2.0 - 1.0;
  return VoxelGrid(dims, std::move(labels), classes, channels, std::move(features));
}

/// Grid with exactly the given occupied linear indices (all class 1).
inline VoxelGrid grid_with(GridDims dims, const std::vector<std::size_t>& occupied,
                           std::size_t channels = 0) {
  std::vector<std::uint8_t> labels(dims.volume(), 0);
  for (auto i : occupied) labels[i] = 1;
  return VoxelGrid(dims, std::move(labels), 1, channels, {});
}

inline DiffArray random_array(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                              bool requires_grad = true) {
  std::uniform_real_distribution<double> u(lo, hi);
  DiffArray a(std::move(shape), requires_grad);
  for (auto& v : a.value()) v = u(rng);
  return a;
}

}  // namespace voxelser::testing
