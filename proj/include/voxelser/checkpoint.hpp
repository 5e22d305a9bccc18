// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// VSWT layout, little-endian:
//   "VSWT" | u16 version=1 | u32 n | n bytes of key = value config text
//   | u32 count | count x (u32 name_len | name | u32 ndim | ndim x u32 dim | f64 values)

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "voxelser/block.hpp"
#include "voxelser/grid_io.hpp"
#include "voxelser/kvconfig.hpp"

namespace voxelser {

inline constexpr std::uint16_t kVswtVersion = 1;

inline void write_checkpoint(std::ostream& os, const TrainConfig& cfg, const Model& m) {
  io::put_bytes(os, "VSWT", 4);
  io::put_le<std::uint16_t>(os, kVswtVersion);
  const std::string text = to_kv(cfg);
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(text.size()));
  io::put_bytes(os, text.data(), text.size());
  const auto params = m.parameters();
  io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    io::put_bytes(os, name.data(), name.size());
    io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.ndim()));
    for (auto d : p.shape()) io::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (double v : p.value()) io::put_le<double>(os, v);
  }
  if (!os) throw Error(ErrorCode::FileError, "checkpoint write failed");
}

struct Checkpoint {
  TrainConfig config;
  Model model;
};

inline Checkpoint read_checkpoint(std::istream& is) {
  io::expect_magic(is, "VSWT");
  const auto version = io::get_le<std::uint16_t>(is);
  require(version == kVswtVersion, ErrorCode::FileError,
          "unsupported checkpoint version " + std::to_string(version));
  auto read_string = [&is](std::uint32_t n) {
    require(n <= (1u << 20), ErrorCode::FileError, "checkpoint string too long");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw Error(ErrorCode::FileError, "unexpected end of file");
    return s;
  };
  Checkpoint ck;
  std::istringstream text(read_string(io::get_le<std::uint32_t>(is)));
  apply_kv(parse_kv(text), ck.config);

  Rng unused(0);
  ck.model = Model::init(ck.config.model, unused);
  std::map<std::string, DiffArray> by_name;
  for (const auto& [name, p] : ck.model.parameters()) by_name.emplace(name, p);

  const auto count = io::get_le<std::uint32_t>(is);
  require(count == by_name.size(), ErrorCode::FileError,
          "checkpoint has " + std::to_string(count) + " tensors, model expects " +
              std::to_string(by_name.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = read_string(io::get_le<std::uint32_t>(is));
    const auto it = by_name.find(name);
    require(it != by_name.end(), ErrorCode::FileError, "unexpected tensor " + name);
    Shape shape(io::get_le<std::uint32_t>(is));
    require(shape.size() <= 8, ErrorCode::FileError, "bad rank for " + name);
    for (auto& d : shape) d = io::get_le<std::uint32_t>(is);
    require(shape == it->second.shape(), ErrorCode::FileError,
            name + ": stored shape " + shape_str(shape) + ", model expects " +
                shape_str(it->second.shape()));
    for (auto& v : it->second.value()) v = io::get_le<double>(is);
    by_name.erase(it);
  }
  return ck;
}

inline void save_checkpoint(const std::string& path, const TrainConfig& cfg, const Model& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::FileError, "cannot write " + path);
  write_checkpoint(out, cfg, m);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileError, "cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace voxelser
