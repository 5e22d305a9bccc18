// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "voxelser/crpe.hpp"
#include "voxelser/gradcheck.hpp"

namespace voxelser {
namespace {

using testing::grid_with;
using testing::random_grid;
constexpr double kPi = std::numbers::pi;

TEST(SceneCenter, SingleVoxelAndMidpoint) {
  const GridDims dims{5, 5, 5};
  const auto one = scene_center(grid_with(dims, {dims.index(1, 2, 3)}));
  EXPECT_EQ(one.x, 1.0);
  EXPECT_EQ(one.y, 2.0);
  EXPECT_EQ(one.z, 3.0);
  const auto two = scene_center(grid_with(dims, {dims.index(0, 0, 0), dims.index(2, 2, 2)}));
  EXPECT_EQ(two.x, 1.0);
  EXPECT_EQ(two.y, 1.0);
  EXPECT_EQ(two.z, 1.0);
}

TEST(SceneCenter, MatchesDirectSummationAndIsContained) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto grid = random_grid({7, 9, 5}, 0.1, seed);
    const auto c = scene_center(grid);
    double sx = 0, sy = 0, sz = 0, n = 0;
    double lo[3] = {1e9, 1e9, 1e9}, hi[3] = {-1, -1, -1};
    for (std::uint32_t z = 0; z < 5; ++z)
      for (std::uint32_t y = 0; y < 9; ++y)
        for (std::uint32_t x = 0; x < 7; ++x) {
          if (grid.label(grid.dims().index(x, y, z)) == 0) continue;
          sx += x, sy += y, sz += z, n += 1;
          lo[0] = std::min<double>(lo[0], x), hi[0] = std::max<double>(hi[0], x);
          lo[1] = std::min<double>(lo[1], y), hi[1] = std::max<double>(hi[1], y);
          lo[2] = std::min<double>(lo[2], z), hi[2] = std::max<double>(hi[2], z);
        }
    EXPECT_NEAR(c.x, sx / n, 1e-12);
    EXPECT_NEAR(c.y, sy / n, 1e-12);
    EXPECT_NEAR(c.z, sz / n, 1e-12);
    EXPECT_TRUE(lo[0] <= c.x && c.x <= hi[0]);
    EXPECT_TRUE(lo[1] <= c.y && c.y <= hi[1]);
    EXPECT_TRUE(lo[2] <= c.z && c.z <= hi[2]);
  }
}

TEST(SceneCenter, EmptyScene) {
  EXPECT_THROW(scene_center(VoxelGrid({2, 2, 2}, std::vector<std::uint8_t>(8, 0), 1, 0, {})), Error);
}

TEST(Wrap, ThreeHalfPiWrapsToMinusHalfPi) {
  EXPECT_EQ(wrap_angle(3 * kPi / 2), -kPi / 2);
  EXPECT_EQ(wrap_angle(kPi), kPi);
  EXPECT_EQ(wrap_angle(-kPi), kPi);
  EXPECT_EQ(wrap_angle(0.25), 0.25);
  for (double a = -20; a < 20; a += 0.37) {
    const double w = wrap_angle(a);
    EXPECT_GT(w, -kPi);
    EXPECT_LE(w, kPi);
    EXPECT_NEAR(std::remainder(a - w, 2 * kPi), 0.0, 1e-12);
  }
}

TEST(AngularDeltas, YawUsesAtan2XThenY) {
  // d_i = (1,0,0) and d_c = (0,1,0) give atan2(1,0) - atan2(0,1) = pi/2.
  const Bearing bi = bearing(1, 0, 0), bc = bearing(0, 1, 0);
  EXPECT_EQ(wrap_angle(bi.yaw - bc.yaw), kPi / 2);
  EXPECT_EQ(bi.pitch - bc.pitch, 0.0);

  // Same configuration through a grid: grid center g = (1,1,1) in a 3^3 cube,
  // reference chosen so that d_c = g - c = (0,1,0); voxel (2,0,1) has d_i = (1,0,0).
  const GridDims dims{3, 3, 3};
  const auto grid = grid_with(dims, {dims.index(2, 0, 1)});
  const auto d = angular_deltas(grid, {1, 0, 1});
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].yaw, kPi / 2);
  EXPECT_EQ(d[0].pitch, 0.0);
}

TEST(AngularDeltas, SameBearingAsGridCenterIsZero) {
  const GridDims dims{9, 9, 9};
  // centroid at (2,2,2); grid center (4,4,4) lies along direction (1,1,1).
  const auto grid = grid_with(dims, {dims.index(1, 1, 1), dims.index(3, 3, 3), dims.index(6, 6, 6),
                                     dims.index(0, 0, 0), dims.index(0, 0, 0)});
  const auto c = scene_center(grid);
  const auto d = angular_deltas(grid, c);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto p = dims.coord(grid.occupied()[i]);
    if (p.x > c.x) {
      EXPECT_NEAR(d[i].yaw, 0.0, 1e-15);
      EXPECT_NEAR(d[i].pitch, 0.0, 1e-15);
    }
  }
}

TEST(AngularDeltas, CoincidentVoxelGetsZero) {
  const GridDims dims{5, 5, 5};
  const auto grid = grid_with(dims, {dims.index(0, 0, 0), dims.index(2, 2, 2), dims.index(4, 4, 4)});
  const auto d = angular_deltas(grid, scene_center(grid));
  EXPECT_EQ(d[1].yaw, 0.0);
  EXPECT_EQ(d[1].pitch, 0.0);
}

TEST(AngularDeltas, TranslationInvariant) {
  // Moving the occupied voxels by (5,5,5) inside a volume padded by 5 on
  // every side moves the centroid and the grid center by the same amount.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = random_grid({8, 6, 7}, 0.2, seed);
    const GridDims big{18, 16, 17};
    std::vector<std::size_t> moved;
    for (auto v : a.occupied()) {
      const auto p = a.dims().coord(v);
      moved.push_back(big.index(p.x + 5, p.y + 5, p.z + 5));
    }
    const auto b = grid_with(big, moved);
    const auto da = angular_deltas(a, scene_center(a));
    const auto db = angular_deltas(b, scene_center(b));
    ASSERT_EQ(da.size(), db.size());
    for (std::size_t i = 0; i < da.size(); ++i) {
      // Angular distance: +pi and -pi (after rounding) are the same bearing.
      EXPECT_LT(std::abs(wrap_angle(da[i].yaw - db[i].yaw)), 1e-12);
      EXPECT_LT(std::abs(wrap_angle(da[i].pitch - db[i].pitch)), 1e-12);
    }
  }
}

TEST(AngularDeltas, AblationModes) {
  const auto grid = random_grid({6, 6, 6}, 0.15, 4);
  const auto g = grid_center(grid.dims());
  // Reference at the grid center: d_c = 0, so relative equals absolute.
  const auto rel = angular_deltas(grid, g, AngleMode::Relative);
  const auto abs = angular_deltas(grid, g, AngleMode::Absolute);
  for (std::size_t i = 0; i < rel.size(); ++i) {
    EXPECT_EQ(rel[i].yaw, abs[i].yaw);
    EXPECT_EQ(rel[i].pitch, abs[i].pitch);
  }
  const auto c = scene_center(grid);
  EXPECT_EQ(reference_center(grid, CenterMode::GridCenter).x, g.x);
  EXPECT_EQ(reference_center(grid, CenterMode::Centroid).x, c.x);
}

TEST(CrpeBias, ZeroWeightsGiveBiasTerms) {
  Rng rng(1);
  auto m = CrpeMlp::init(4, 8, rng);
  for (auto& w : m.mlp.weights) w.zero_grad(), std::fill(w.value().begin(), w.value().end(), 0.0);
  std::fill(m.mlp.biases.back().value().begin(), m.mlp.biases.back().value().end(), 0.25);
  Tape t;
  const auto b = crpe_bias(t, std::vector<AngularDelta>{{0.3, -1.0}, {2.0, 0.5}}, m);
  for (double v : b.value()) EXPECT_EQ(v, 0.25);
}

TEST(CrpeBias, EqualDeltasGiveEqualRows) {
  Rng rng(2);
  const auto m = CrpeMlp::init(5, 16, rng);
  Tape t;
  const auto b = crpe_bias(t, std::vector<AngularDelta>{{0.3, -1.0}, {1.0, 1.0}, {0.3, -1.0}}, m);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(b.at(0, c), b.at(2, c));
}

TEST(CrpeBias, GradcheckMlpWeights) {
  Rng rng(3);
  const auto m = CrpeMlp::init(4, 16, rng);
  const auto grid = random_grid({6, 6, 6}, 0.1, 7);
  const auto rows = delta_features(angular_deltas(grid, scene_center(grid)));
  std::mt19937_64 wr(5);
  const auto w = testing::random_array({rows.dim(0), 4}, wr, -1, 1, false);
  std::vector<DiffArray> params;
  for (std::size_t i = 0; i < m.mlp.weights.size(); ++i) {
    params.push_back(m.mlp.weights[i]);
    params.push_back(m.mlp.biases[i]);
  }
  const auto rep =
      gradcheck([&](Tape& t) { return sum(t, mul(t, crpe_bias(t, rows, m), w)); }, params);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(CrpeBias, ShapeMismatch) {
  Rng rng(4);
  const auto m = CrpeMlp::init(4, 8, rng);
  Tape t;
  EXPECT_THROW(crpe_bias(t, DiffArray({3, 3}), m), Error);
}

}  // namespace
}  // namespace voxelser
