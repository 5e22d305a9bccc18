// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "voxelser/numcore.hpp"

namespace voxelser {

/// The one random engine type. Callers own and pass it explicitly.
using Rng = std::mt19937_64;

/// Ordered (name, parameter) pairs, the unit of checkpointing and optimizing.
using ParamList = std::vector<std::pair<std::string, DiffArray>>;

/// Gaussian init with standard deviation gain / sqrt(fan_in).
inline DiffArray init_normal(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  DiffArray a(std::move(shape), true);
  std::normal_distribution<double> dist(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
  for (auto& v : a.value()) v = dist(rng);
  return a;
}

inline DiffArray init_constant(Shape shape, double value) {
  DiffArray a(std::move(shape), true);
  for (auto& v : a.value()) v = value;
  return a;
}

struct Mlp {
  std::vector<DiffArray> weights;
  std::vector<DiffArray> biases;

  /// widths = {in, hidden..., out}. The last layer's weights are scaled by
  /// out_gain and its bias filled with out_bias.
  static Mlp init(const std::vector<std::size_t>& widths, Rng& rng, double out_gain = 1.0,
                  double out_bias = 0.0) {
    Mlp m;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      m.weights.push_back(init_normal({widths[i], widths[i + 1]}, widths[i], rng,
                                      last ? out_gain : std::sqrt(2.0)));
      m.biases.push_back(init_constant({widths[i + 1]}, last ? out_bias : 0.0));
    }
    return m;
  }

  std::size_t in_dim() const { return weights.front().dim(0); }
  std::size_t out_dim() const { return weights.back().dim(1); }

  DiffArray forward(Tape& tape, const DiffArray& x) const {
    return mlp_forward(tape, x, weights, biases);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      out.emplace_back(prefix + ".w" + std::to_string(i), weights[i]);
      out.emplace_back(prefix + ".b" + std::to_string(i), biases[i]);
    }
  }
};

}  // namespace voxelser
