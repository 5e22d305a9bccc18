// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "voxelser/error.hpp"
#include "voxelser/grid.hpp"

namespace voxelser {

// VSER layout, little-endian:
//   "VSER" | u16 version=1 | u32 D | u32 H | u32 W | u16 classes | u16 C
//   | D*H*W u8 labels (x fastest) | per occupied voxel in index order: C f32

namespace io {

inline void put_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
void put_le(std::ostream& os, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  put_bytes(os, bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (!is) throw Error(ErrorCode::FileError, "unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4] = {};
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0) {
    throw Error(ErrorCode::FileError, std::string("bad magic, expected ") + magic);
  }
}

}  // namespace io

inline constexpr std::uint16_t kVserVersion = 1;

inline void write_vser(std::ostream& os, const VoxelGrid& grid) {
  io::put_bytes(os, "VSER", 4);
  io::put_le<std::uint16_t>(os, kVserVersion);
  io::put_le<std::uint32_t>(os, grid.dims().d);
  io::put_le<std::uint32_t>(os, grid.dims().h);
  io::put_le<std::uint32_t>(os, grid.dims().w);
  io::put_le<std::uint16_t>(os, grid.num_classes());
  io::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(grid.feature_dim()));
  io::put_bytes(os, grid.labels().data(), grid.labels().size());
  for (double v : grid.occupied_features()) io::put_le<float>(os, static_cast<float>(v));
  if (!os) throw Error(ErrorCode::FileError, "write failed");
}

inline VoxelGrid read_vser(std::istream& is) {
  io::expect_magic(is, "VSER");
  const auto version = io::get_le<std::uint16_t>(is);
  require(version == kVserVersion, ErrorCode::FileError,
          "unsupported VSER version " + std::to_string(version));
  GridDims dims;
  dims.d = io::get_le<std::uint32_t>(is);
  dims.h = io::get_le<std::uint32_t>(is);
  dims.w = io::get_le<std::uint32_t>(is);
  const auto classes = io::get_le<std::uint16_t>(is);
  const auto channels = io::get_le<std::uint16_t>(is);
  require(dims.d > 0 && dims.h > 0 && dims.w > 0, ErrorCode::FileError, "zero grid extent");

  std::vector<std::uint8_t> labels(dims.volume());
  is.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
  if (!is) throw Error(ErrorCode::FileError, "truncated label block");
  std::size_t occupied = 0;
  for (auto l : labels) occupied += l > 0;
  std::vector<double> features(occupied * channels);
  for (auto& v : features) v = io::get_le<float>(is);
  return VoxelGrid(dims, std::move(labels), classes, channels, std::move(features));
}

inline void save_vser(const std::string& path, const VoxelGrid& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::FileError, "cannot open '" + path + "' for writing");
  write_vser(os, grid);
}

inline VoxelGrid load_vser(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::FileError, "cannot open '" + path + "'");
  return read_vser(is);
}

}  // namespace voxelser
