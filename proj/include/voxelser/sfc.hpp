// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "voxelser/error.hpp"

namespace voxelser {

/*
 * Space-filling curve keys for 3D integer coordinates.
 *
 * Z-order interleaves axis bits with x in the least significant position:
 *   key bit 3i   <- x bit i
 *   key bit 3i+1 <- y bit i
 *   key bit 3i+2 <- z bit i
 * so (1,0,0) -> 1, (0,1,0) -> 2, (0,0,1) -> 4.
 *
 * Hilbert keys use the transpose / Gray-code construction (Skilling 2004).
 * Consecutive Hilbert keys always map to face-adjacent voxels.
 */

enum class CurveKind { ZOrder, Hilbert };

using CurveKey = std::uint64_t;

struct Coord3 {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint32_t z = 0;

  friend bool operator==(const Coord3&, const Coord3&) = default;
};

inline constexpr int kMaxBitsPerAxis = 20;

inline std::string_view to_string(CurveKind kind) {
  return kind == CurveKind::ZOrder ? "zorder" : "hilbert";
}

inline CurveKind parse_curve(std::string_view name) {
  if (name == "zorder" || name == "z" || name == "morton") return CurveKind::ZOrder;
  if (name == "hilbert") return CurveKind::Hilbert;
  throw Error(ErrorCode::UnknownCurve, "unknown curve '" + std::string(name) + "'");
}

/// Smallest bit count b >= 1 with 2^b >= extent.
inline int bits_for_extent(std::uint64_t extent) {
  int b = 1;
  while ((std::uint64_t{1} << b) < extent) ++b;
  return b;
}

namespace detail {

// Spreads the low 21 bits of v so bit i lands at bit 3i.
constexpr std::uint64_t split_by_3(std::uint64_t v) {
  v &= 0x1fffff;
  v = (v | (v << 32)) & 0x1f00000000ffffULL;
  v = (v | (v << 16)) & 0x1f0000ff0000ffULL;
  v = (v | (v << 8)) & 0x100f00f00f00f00fULL;
  v = (v | (v << 4)) & 0x10c30c30c30c30c3ULL;
  v = (v | (v << 2)) & 0x1249249249249249ULL;
  return v;
}

constexpr std::uint64_t compact_by_3(std::uint64_t v) {
  v &= 0x1249249249249249ULL;
  v = (v ^ (v >> 2)) & 0x10c30c30c30c30c3ULL;
  v = (v ^ (v >> 4)) & 0x100f00f00f00f00fULL;
  v = (v ^ (v >> 8)) & 0x1f0000ff0000ffULL;
  v = (v ^ (v >> 16)) & 0x1f00000000ffffULL;
  v = (v ^ (v >> 32)) & 0x1fffff;
  return v;
}

inline void check_bits(int bits) {
  require(bits >= 1 && bits <= kMaxBitsPerAxis, ErrorCode::CoordinateOutOfRange,
          "bits_per_axis must be in [1, 20], got " + std::to_string(bits));
}

// Axes -> transposed Hilbert index, in place.
inline void axes_to_transpose(std::array<std::uint32_t, 3>& x, int bits) {
  const std::uint32_t m = std::uint32_t{1} << (bits - 1);
  for (std::uint32_t q = m; q > 1; q >>= 1) {
    const std::uint32_t p = q - 1;
    for (int i = 0; i < 3; ++i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        const std::uint32_t t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
  for (int i = 1; i < 3; ++i) x[i] ^= x[i - 1];
  std::uint32_t t = 0;
  for (std::uint32_t q = m; q > 1; q >>= 1) {
    if (x[2] & q) t ^= q - 1;
  }
  for (auto& v : x) v ^= t;
}

inline void transpose_to_axes(std::array<std::uint32_t, 3>& x, int bits) {
  const std::uint32_t n = std::uint32_t{2} << (bits - 1);
  std::uint32_t t = x[2] >> 1;
  for (int i = 2; i > 0; --i) x[i] ^= x[i - 1];
  x[0] ^= t;
  for (std::uint32_t q = 2; q != n; q <<= 1) {
    const std::uint32_t p = q - 1;
    for (int i = 2; i >= 0; --i) {
      if (x[i] & q) {
        x[0] ^= p;
      } else {
        t = (x[0] ^ x[i]) & p;
        x[0] ^= t;
        x[i] ^= t;
      }
    }
  }
}

}  // namespace detail

inline CurveKey encode(CurveKind kind, int bits, Coord3 c) {
  detail::check_bits(bits);
  const std::uint32_t limit = std::uint32_t{1} << bits;
  if (c.x >= limit || c.y >= limit || c.z >= limit) {
    throw Error(ErrorCode::CoordinateOutOfRange,
                "coordinate (" + std::to_string(c.x) + "," + std::to_string(c.y) + "," +
                    std::to_string(c.z) + ") outside [0, 2^" + std::to_string(bits) + ")");
  }
  if (kind == CurveKind::ZOrder) {
    return detail::split_by_3(c.x) | (detail::split_by_3(c.y) << 1) |
           (detail::split_by_3(c.z) << 2);
  }
  std::array<std::uint32_t, 3> t{c.x, c.y, c.z};
  detail::axes_to_transpose(t, bits);
  // Transposed form: bit j of t[i] is key bit 3j + (2 - i).
  return (detail::split_by_3(t[0]) << 2) | (detail::split_by_3(t[1]) << 1) |
         detail::split_by_3(t[2]);
}

inline Coord3 decode(CurveKind kind, int bits, CurveKey key) {
  detail::check_bits(bits);
  if (key >> (3 * bits) != 0) {
    throw Error(ErrorCode::KeyOutOfRange,
                "key " + std::to_string(key) + " needs more than " + std::to_string(3 * bits) +
                    " bits");
  }
  if (kind == CurveKind::ZOrder) {
    return {static_cast<std::uint32_t>(detail::compact_by_3(key)),
            static_cast<std::uint32_t>(detail::compact_by_3(key >> 1)),
            static_cast<std::uint32_t>(detail::compact_by_3(key >> 2))};
  }
  std::array<std::uint32_t, 3> t{static_cast<std::uint32_t>(detail::compact_by_3(key >> 2)),
                                 static_cast<std::uint32_t>(detail::compact_by_3(key >> 1)),
                                 static_cast<std::uint32_t>(detail::compact_by_3(key))};
  detail::transpose_to_axes(t, bits);
  return {t[0], t[1], t[2]};
}

}  // namespace voxelser
