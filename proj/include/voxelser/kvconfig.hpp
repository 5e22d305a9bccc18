// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Plain-text key = value files. '#' starts a comment, blank lines are
// skipped, keys may repeat (scene files list one primitive per line).

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "voxelser/asa.hpp"
#include "voxelser/block.hpp"
#include "voxelser/crpe.hpp"
#include "voxelser/error.hpp"

namespace voxelser {

struct KvEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::vector<KvEntry> parse_kv(std::istream& is) {
  std::vector<KvEntry> out;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string_view s = raw;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = detail::trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    require(eq != std::string_view::npos, ErrorCode::BadConfig,
            "line " + std::to_string(line) + ": expected key = value");
    KvEntry e{std::string(detail::trim(s.substr(0, eq))), std::string(detail::trim(s.substr(eq + 1))),
              line};
    require(!e.key.empty(), ErrorCode::BadConfig, "line " + std::to_string(line) + ": empty key");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<KvEntry> load_kv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::FileError, "cannot open " + path);
  return parse_kv(in);
}

template <typename T>
T parse_number(const KvEntry& e) {
  T v{};
  const char* b = e.value.data();
  const char* end = b + e.value.size();
  const auto [ptr, ec] = std::from_chars(b, end, v);
  require(ec == std::errc() && ptr == end, ErrorCode::BadConfig,
          "line " + std::to_string(e.line) + ": bad value '" + e.value + "' for " + e.key);
  return v;
}

inline bool parse_switch(const KvEntry& e) {
  if (e.value == "on" || e.value == "true" || e.value == "1") return true;
  if (e.value == "off" || e.value == "false" || e.value == "0") return false;
  throw Error(ErrorCode::BadConfig, "line " + std::to_string(e.line) + ": " + e.key +
                                        " expects on/off, got '" + e.value + "'");
}

// --- enum names ---------------------------------------------------------------------

inline const char* to_string(ShiftMode m) {
  switch (m) {
    case ShiftMode::Fixed: return "fixed";
    case ShiftMode::Vanilla: return "vanilla";
    case ShiftMode::Gumbel: return "gumbel";
    case ShiftMode::Annealed: return "annealed";
  }
  return "?";
}

inline const char* to_string(CandidateEval e) { return e == CandidateEval::All ? "all" : "argmax"; }
inline const char* to_string(CenterMode m) { return m == CenterMode::Centroid ? "centroid" : "grid"; }
inline const char* to_string(AngleMode m) { return m == AngleMode::Relative ? "relative" : "absolute"; }

template <typename Enum, std::size_t N>
Enum parse_enum(const KvEntry& e, const Enum (&options)[N]) {
  for (auto o : options) {
    if (e.value == to_string(o)) return o;
  }
  std::string valid;
  for (auto o : options) valid += std::string(valid.empty() ? "" : "|") + to_string(o);
  throw Error(ErrorCode::BadConfig, "line " + std::to_string(e.line) + ": " + e.key + " expects " +
                                        valid + ", got '" + e.value + "'");
}

// --- training configuration ---------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  double lr = 0.005;
  double momentum = 0.9;
  double grad_clip = 0.0;  // max global gradient norm, 0 = off
};

/// Applies every entry to `cfg`; unknown keys are an error.
inline void apply_kv(const std::vector<KvEntry>& entries, TrainConfig& cfg) {
  auto& m = cfg.model;
  for (const auto& e : entries) {
    const auto& k = e.key;
    if (k == "curve") {
      try {
        m.curve = parse_curve(e.value);
      } catch (const Error&) {
        throw Error(ErrorCode::BadConfig,
                    "line " + std::to_string(e.line) + ": unknown curve '" + e.value + "'");
      }
    } else if (k == "group_size") m.group_size = parse_number<std::size_t>(e);
    else if (k == "k_shifts") m.k_shifts = parse_number<std::size_t>(e);
    else if (k == "heads") m.heads = parse_number<std::size_t>(e);
    else if (k == "channels") m.channels = parse_number<std::size_t>(e);
    else if (k == "blocks") m.blocks = parse_number<std::size_t>(e);
    else if (k == "input_channels") m.input_channels = parse_number<std::size_t>(e);
    else if (k == "num_classes") m.num_classes = parse_number<std::size_t>(e);
    else if (k == "ffn_expansion") m.ffn_expansion = parse_number<std::size_t>(e);
    else if (k == "cmln_hidden") m.cmln_hidden = parse_number<std::size_t>(e);
    else if (k == "crpe_hidden") m.crpe_hidden = parse_number<std::size_t>(e);
    else if (k == "tau_init") m.schedule.tau_init = parse_number<double>(e);
    else if (k == "tau_min") m.schedule.tau_min = parse_number<double>(e);
    else if (k == "alpha") m.schedule.alpha = parse_number<double>(e);
    else if (k == "lr") cfg.lr = parse_number<double>(e);
    else if (k == "momentum") cfg.momentum = parse_number<double>(e);
    else if (k == "grad_clip") cfg.grad_clip = parse_number<double>(e);
    else if (k == "shift_mode") {
      m.shift_mode = parse_enum(e, {ShiftMode::Fixed, ShiftMode::Vanilla, ShiftMode::Gumbel,
                                    ShiftMode::Annealed});
    } else if (k == "candidate_eval") {
      m.candidate_eval = parse_enum(e, {CandidateEval::All, CandidateEval::ArgmaxOnly});
    } else if (k == "crpe") m.use_crpe = parse_switch(e);
    else if (k == "crpe_center") m.crpe_center = parse_enum(e, {CenterMode::Centroid, CenterMode::GridCenter});
    else if (k == "crpe_angles") m.crpe_angles = parse_enum(e, {AngleMode::Relative, AngleMode::Absolute});
    else if (k == "cmln") m.use_cmln = parse_switch(e);
    else {
      throw Error(ErrorCode::BadConfig, "line " + std::to_string(e.line) + ": unknown key '" + k + "'");
    }
  }
  require(cfg.lr > 0.0 && cfg.momentum >= 0.0 && cfg.momentum < 1.0 && cfg.grad_clip >= 0.0,
          ErrorCode::BadConfig, "need lr > 0, 0 <= momentum < 1 and grad_clip >= 0");
  m.validate();
}

inline TrainConfig load_train_config(const std::string& path) {
  TrainConfig cfg;
  apply_kv(load_kv(path), cfg);
  return cfg;
}

/// Inverse of apply_kv for the keys it understands.
inline std::string to_kv(const TrainConfig& cfg) {
  const auto& m = cfg.model;
  std::ostringstream os;
  os.precision(17);
  os << "input_channels = " << m.input_channels << "\n"
     << "num_classes = " << m.num_classes << "\n"
     << "curve = " << to_string(m.curve) << "\n"
     << "group_size = " << m.group_size << "\n"
     << "k_shifts = " << m.k_shifts << "\n"
     << "heads = " << m.heads << "\n"
     << "channels = " << m.channels << "\n"
     << "blocks = " << m.blocks << "\n"
     << "ffn_expansion = " << m.ffn_expansion << "\n"
     << "cmln_hidden = " << m.cmln_hidden << "\n"
     << "crpe_hidden = " << m.crpe_hidden << "\n"
     << "tau_init = " << m.schedule.tau_init << "\n"
     << "tau_min = " << m.schedule.tau_min << "\n"
     << "alpha = " << m.schedule.alpha << "\n"
     << "lr = " << cfg.lr << "\n"
     << "momentum = " << cfg.momentum << "\n"
     << "grad_clip = " << cfg.grad_clip << "\n"
     << "shift_mode = " << to_string(m.shift_mode) << "\n"
     << "candidate_eval = " << to_string(m.candidate_eval) << "\n"
     << "crpe = " << (m.use_crpe ? "on" : "off") << "\n"
     << "crpe_center = " << to_string(m.crpe_center) << "\n"
     << "crpe_angles = " << to_string(m.crpe_angles) << "\n"
     << "cmln = " << (m.use_cmln ? "on" : "off") << "\n";
  return os.str();
}

}  // namespace voxelser
