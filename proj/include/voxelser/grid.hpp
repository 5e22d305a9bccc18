// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "voxelser/error.hpp"
#include "voxelser/sfc.hpp"

namespace voxelser {

/// Voxel extents. d runs along x, h along y, w along z; linear indices are
/// x-fastest: index = x + d * (y + h * z).
struct GridDims {
  std::uint32_t d = 0;
  std::uint32_t h = 0;
  std::uint32_t w = 0;

  std::size_t volume() const { return std::size_t{d} * h * w; }
  std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
    return x + std::size_t{d} * (y + std::size_t{h} * z);
  }
  Coord3 coord(std::size_t index) const {
    const auto x = static_cast<std::uint32_t>(index % d);
    const auto y = static_cast<std::uint32_t>((index / d) % h);
    const auto z = static_cast<std::uint32_t>(index / (std::size_t{d} * h));
    return {x, y, z};
  }
  int curve_bits() const { return bits_for_extent(std::max({d, h, w})); }

  friend bool operator==(const GridDims&, const GridDims&) = default;
};

/// Dense label volume with feature vectors attached to occupied voxels only.
/// Label 0 is empty space; labels 1..num_classes are semantic classes.
class VoxelGrid {
 public:
  VoxelGrid() = default;

  VoxelGrid(GridDims dims, std::vector<std::uint8_t> labels, std::uint16_t num_classes,
            std::size_t feature_dim, std::vector<double> occupied_features)
      : dims_(dims),
        labels_(std::move(labels)),
        num_classes_(num_classes),
        feature_dim_(feature_dim),
        features_(std::move(occupied_features)) {
    require(dims_.d > 0 && dims_.h > 0 && dims_.w > 0, ErrorCode::ShapeMismatch,
            "grid dimensions must be positive");
    require(labels_.size() == dims_.volume(), ErrorCode::ShapeMismatch,
            "label count " + std::to_string(labels_.size()) + " != D*H*W " +
                std::to_string(dims_.volume()));
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      require(labels_[i] <= num_classes_, ErrorCode::LabelOutOfRange,
              "label " + std::to_string(labels_[i]) + " at voxel " + std::to_string(i) +
                  " exceeds class count " + std::to_string(num_classes_));
      if (labels_[i] > 0) occupied_.push_back(i);
    }
    if (features_.empty() && feature_dim_ > 0) features_.assign(occupied_.size() * feature_dim_, 0.0);
    require(features_.size() == occupied_.size() * feature_dim_, ErrorCode::ShapeMismatch,
            "feature buffer does not hold " + std::to_string(feature_dim_) +
                " values per occupied voxel");
  }

  const GridDims& dims() const { return dims_; }
  std::uint16_t num_classes() const { return num_classes_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::span<const std::uint8_t> labels() const { return labels_; }
  std::uint8_t label(std::size_t index) const { return labels_[index]; }

  /// Occupied linear indices, ascending.
  std::span<const std::size_t> occupied() const { return occupied_; }
  std::size_t occupied_count() const { return occupied_.size(); }

  /// Row-major [occupied_count x feature_dim], rows follow occupied() order.
  std::span<const double> occupied_features() const { return features_; }
  std::span<const double> feature_row(std::size_t occupied_pos) const {
    return std::span<const double>(features_).subspan(occupied_pos * feature_dim_, feature_dim_);
  }

 private:
  GridDims dims_{};
  std::vector<std::uint8_t> labels_;
  std::uint16_t num_classes_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<double> features_;
  std::vector<std::size_t> occupied_;
};

enum class SerializeScope { Occupied, AllVoxels };

struct SerializedSequence {
  std::vector<std::size_t> order;  // linear voxel indices
  CurveKind kind = CurveKind::ZOrder;
  std::size_t shift = 0;  // already reduced mod order.size()
};

/// Voxels sorted by curve key, then rotated left by shift mod N.
inline SerializedSequence serialize(const VoxelGrid& grid, CurveKind kind, std::size_t shift,
                                    SerializeScope scope = SerializeScope::Occupied) {
  const auto& dims = grid.dims();
  std::vector<std::size_t> voxels;
  if (scope == SerializeScope::Occupied) {
    voxels.assign(grid.occupied().begin(), grid.occupied().end());
  } else {
    voxels.resize(dims.volume());
    std::iota(voxels.begin(), voxels.end(), std::size_t{0});
  }
  require(!voxels.empty(), ErrorCode::EmptyScene, "grid has no occupied voxels");

  const int bits = dims.curve_bits();
  std::vector<std::pair<CurveKey, std::size_t>> keyed;
  keyed.reserve(voxels.size());
  for (auto v : voxels) keyed.emplace_back(encode(kind, bits, dims.coord(v)), v);
  std::sort(keyed.begin(), keyed.end());

  SerializedSequence seq;
  seq.kind = kind;
  seq.shift = shift % keyed.size();
  seq.order.resize(keyed.size());
  for (std::size_t i = 0; i < keyed.size(); ++i) {
    seq.order[i] = keyed[(i + seq.shift) % keyed.size()].second;
  }
  return seq;
}

struct GroupRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct GroupPartition {
  std::size_t group_size = 0;
  std::size_t tokens = 0;
  std::vector<GroupRange> groups;
};

/// Contiguous groups of at most group_size tokens; only the last may be short.
inline GroupPartition partition(std::size_t tokens, std::size_t group_size) {
  require(group_size >= 1, ErrorCode::InvalidGroupSize, "group size must be >= 1");
  GroupPartition part;
  part.group_size = group_size;
  part.tokens = tokens;
  const std::size_t groups = (tokens + group_size - 1) / group_size;
  part.groups.reserve(groups);
  for (std::size_t i = 0; i < groups; ++i) {
    part.groups.push_back({i * group_size, std::min((i + 1) * group_size, tokens)});
  }
  return part;
}

inline GroupPartition partition(const SerializedSequence& seq, std::size_t group_size) {
  return partition(seq.order.size(), group_size);
}

struct TokenCost {
  std::uint64_t grouped = 0;  // sum of squared group lengths
  std::uint64_t full = 0;     // N^2
};

inline TokenCost attention_token_cost(std::uint64_t n, std::uint64_t group_size) {
  require(group_size >= 1, ErrorCode::InvalidGroupSize, "group size must be >= 1");
  const std::uint64_t whole = n / group_size;
  const std::uint64_t tail = n % group_size;
  return {whole * group_size * group_size + tail * tail, n * n};
}

/// Cost of cubic-window grouping: every non-empty window is padded to the
/// fullest window's occupancy.
struct WindowCost {
  std::uint64_t windows = 0;
  std::uint64_t padded_tokens = 0;
  std::uint64_t token_pairs = 0;
};

inline WindowCost window_attention_cost(const VoxelGrid& grid, std::uint32_t window) {
  require(window >= 1, ErrorCode::InvalidGroupSize, "window must be >= 1");
  const auto& dims = grid.dims();
  const std::uint32_t nx = (dims.d + window - 1) / window;
  const std::uint32_t ny = (dims.h + window - 1) / window;
  const std::uint32_t nz = (dims.w + window - 1) / window;
  std::vector<std::uint64_t> counts(std::size_t{nx} * ny * nz, 0);
  for (auto v : grid.occupied()) {
    const auto c = dims.coord(v);
    ++counts[c.x / window + nx * (c.y / window + std::size_t{ny} * (c.z / window))];
  }
  WindowCost cost;
  std::uint64_t widest = 0;
  for (auto n : counts) {
    if (n == 0) continue;
    ++cost.windows;
    widest = std::max(widest, n);
  }
  cost.padded_tokens = cost.windows * widest;
  cost.token_pairs = cost.padded_tokens * widest;
  return cost;
}

}  // namespace voxelser
