// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Synthetic labelled scenes built from axis-aligned boxes and plane slabs.
 * Primitives are painted in order, later ones overwrite earlier ones, and
 * class 0 carves voxels back to empty.
 *
 * Occupied voxels get features one_hot(label) (length num_classes + 1) plus
 * N(0, noise^2) drawn from the scene seed in voxel index order.
 *
 * Scene file (key = value):
 *   dims = D H W
 *   classes = N
 *   seed = S
 *   noise = 0.01
 *   box = x0 y0 z0 x1 y1 z1 class      half-open [x0, x1) x [y0, y1) x [z0, z1)
 *   plane = axis offset thickness class   axis in {x, y, z}
 */

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "voxelser/error.hpp"
#include "voxelser/grid.hpp"
#include "voxelser/kvconfig.hpp"

namespace voxelser {

struct Box {
  std::uint32_t x0, y0, z0, x1, y1, z1;
  std::uint8_t label;
};

struct Plane {
  char axis;  // 'x', 'y' or 'z'
  std::uint32_t offset;
  std::uint32_t thickness;
  std::uint8_t label;
};

using Primitive = std::variant<Box, Plane>;

struct SceneSpec {
  GridDims dims{8, 8, 8};
  std::uint16_t classes = 3;
  std::uint64_t seed = 0;
  double noise = 0.01;
  std::vector<Primitive> primitives;
};

namespace detail {

inline Box as_box(const Plane& p, const GridDims& d) {
  Box b{0, 0, 0, d.d, d.h, d.w, p.label};
  const std::uint32_t end = p.offset + p.thickness;
  switch (p.axis) {
    case 'x': b.x0 = p.offset, b.x1 = end; break;
    case 'y': b.y0 = p.offset, b.y1 = end; break;
    case 'z': b.z0 = p.offset, b.z1 = end; break;
    default: throw Error(ErrorCode::BadConfig, std::string("plane axis must be x, y or z, got ") + p.axis);
  }
  return b;
}

inline void check_box(const Box& b, const GridDims& d, std::uint16_t classes) {
  require(b.x0 < b.x1 && b.y0 < b.y1 && b.z0 < b.z1 && b.x1 <= d.d && b.y1 <= d.h && b.z1 <= d.w,
          ErrorCode::PrimitiveOutOfBounds,
          "primitive [" + std::to_string(b.x0) + "," + std::to_string(b.x1) + ")x[" +
              std::to_string(b.y0) + "," + std::to_string(b.y1) + ")x[" + std::to_string(b.z0) +
              "," + std::to_string(b.z1) + ") outside grid or empty");
  require(b.label <= classes, ErrorCode::LabelOutOfRange,
          "primitive class " + std::to_string(b.label) + " > " + std::to_string(classes));
}

}  // namespace detail

inline VoxelGrid generate(const SceneSpec& spec) {
  require(spec.dims.volume() > 0, ErrorCode::BadConfig, "scene dims must be positive");
  require(spec.classes >= 1 && spec.classes <= 255, ErrorCode::BadConfig, "classes must be in [1, 255]");
  std::vector<std::uint8_t> labels(spec.dims.volume(), 0);
  for (const auto& prim : spec.primitives) {
    const Box b = std::holds_alternative<Box>(prim) ? std::get<Box>(prim)
                                                    : detail::as_box(std::get<Plane>(prim), spec.dims);
    detail::check_box(b, spec.dims, spec.classes);
    for (auto z = b.z0; z < b.z1; ++z) {
      for (auto y = b.y0; y < b.y1; ++y) {
        for (auto x = b.x0; x < b.x1; ++x) labels[spec.dims.index(x, y, z)] = b.label;
      }
    }
  }

  const std::size_t channels = std::size_t{spec.classes} + 1;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise);
  std::vector<double> features;
  for (auto l : labels) {
    if (l == 0) continue;
    for (std::size_t c = 0; c < channels; ++c) {
      features.push_back((c == l ? 1.0 : 0.0) + (spec.noise > 0.0 ? noise(rng) : 0.0));
    }
  }
  require(!features.empty(), ErrorCode::EmptyScene, "scene has no occupied voxels");
  return VoxelGrid(spec.dims, std::move(labels), spec.classes, channels, std::move(features));
}

/// 8x8x8, 3 classes: floor slab, a cube and a tall block.
inline SceneSpec toy_scene(std::uint64_t seed = 0) {
  SceneSpec s;
  s.dims = {8, 8, 8};
  s.classes = 3;
  s.seed = seed;
  s.primitives = {Plane{'z', 0, 1, 1}, Box{1, 1, 1, 4, 4, 4, 2}, Box{5, 4, 1, 7, 7, 7, 3}};
  return s;
}

/// L-shaped room: floor and walls around an L footprint, one piece of
/// furniture. The notch is carved out with class 0.
inline SceneSpec l_room_scene(std::uint64_t seed = 0) {
  SceneSpec s;
  s.dims = {16, 16, 8};
  s.classes = 3;
  s.seed = seed;
  s.primitives = {
      Plane{'z', 0, 1, 1},                  // floor
      Plane{'x', 0, 1, 2},  Plane{'y', 0, 1, 2},
      Plane{'x', 15, 1, 2}, Plane{'y', 15, 1, 2},
      Box{9, 9, 0, 16, 16, 8, 0},           // notch
      Box{8, 8, 1, 9, 16, 8, 2},            // inner walls of the L
      Box{8, 8, 1, 16, 9, 8, 2},
      Box{2, 2, 1, 5, 6, 3, 3},             // furniture
  };
  return s;
}

inline SceneSpec parse_scene_spec(const std::vector<KvEntry>& entries) {
  SceneSpec s;
  s.primitives.clear();
  auto fields = [](const KvEntry& e, std::size_t n) {
    std::istringstream is(e.value);
    std::vector<std::string> out;
    for (std::string tok; is >> tok;) out.push_back(tok);
    require(out.size() == n, ErrorCode::BadConfig,
            "line " + std::to_string(e.line) + ": " + e.key + " expects " + std::to_string(n) +
                " fields, got " + std::to_string(out.size()));
    return out;
  };
  auto num = [](const KvEntry& e, const std::string& tok) {
    return parse_number<std::uint32_t>(KvEntry{e.key, tok, e.line});
  };
  auto label = [&](const KvEntry& e, const std::string& tok) {
    const auto v = num(e, tok);
    require(v <= 255, ErrorCode::BadConfig, "line " + std::to_string(e.line) + ": class too large");
    return static_cast<std::uint8_t>(v);
  };
  for (const auto& e : entries) {
    if (e.key == "dims") {
      const auto f = fields(e, 3);
      s.dims = {num(e, f[0]), num(e, f[1]), num(e, f[2])};
    } else if (e.key == "classes") {
      const auto v = parse_number<std::uint32_t>(e);
      require(v >= 1 && v <= 255, ErrorCode::BadConfig, "classes must be in [1, 255]");
      s.classes = static_cast<std::uint16_t>(v);
    } else if (e.key == "seed") {
      s.seed = parse_number<std::uint64_t>(e);
    } else if (e.key == "noise") {
      s.noise = parse_number<double>(e);
      require(s.noise >= 0.0, ErrorCode::BadConfig, "noise must be >= 0");
    } else if (e.key == "box") {
      const auto f = fields(e, 7);
      s.primitives.push_back(Box{num(e, f[0]), num(e, f[1]), num(e, f[2]), num(e, f[3]),
                                 num(e, f[4]), num(e, f[5]), label(e, f[6])});
    } else if (e.key == "plane") {
      const auto f = fields(e, 4);
      require(f[0] == "x" || f[0] == "y" || f[0] == "z", ErrorCode::BadConfig,
              "line " + std::to_string(e.line) + ": plane axis must be x, y or z");
      s.primitives.push_back(Plane{f[0][0], num(e, f[1]), num(e, f[2]), label(e, f[3])});
    } else if (e.key == "preset") {
      const auto keep = s.seed;
      if (e.value == "toy") s = toy_scene(keep);
      else if (e.value == "l_room") s = l_room_scene(keep);
      else throw Error(ErrorCode::BadConfig, "line " + std::to_string(e.line) + ": unknown preset '" + e.value + "'");
    } else {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(e.line) + ": unknown key '" + e.key + "'");
    }
  }
  return s;
}

}  // namespace voxelser
