// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Untaped single-head attention kernel for cost measurements. Grouped mode
// attends within consecutive groups of g tokens; full mode is one group of n.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "voxelser/error.hpp"
#include "voxelser/grid.hpp"

namespace voxelser {

enum class AttentionKind { Grouped, Full };

inline const char* to_string(AttentionKind k) { return k == AttentionKind::Grouped ? "grouped" : "full"; }

inline AttentionKind parse_attention_kind(const std::string& s) {
  if (s == "grouped") return AttentionKind::Grouped;
  if (s == "full") return AttentionKind::Full;
  throw Error(ErrorCode::BadConfig, "attention must be grouped or full, got '" + s + "'");
}

struct BenchRow {
  AttentionKind kind = AttentionKind::Grouped;
  std::size_t n = 0;
  std::size_t g = 0;
  std::uint64_t token_pairs = 0;
  std::uint64_t wall_ns = 0;
  double checksum = 0.0;
};

/// out = softmax(q k^T / sqrt(d)) v per group, row-major [n x d] buffers.
inline std::uint64_t attention_kernel(const std::vector<double>& q, const std::vector<double>& k,
                                      const std::vector<double>& v, std::vector<double>& out,
                                      std::size_t d, const GroupPartition& part) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> scores;
  std::uint64_t pairs = 0;
  for (const auto& grp : part.groups) {
    scores.resize(grp.size());
    for (std::size_t i = grp.begin; i < grp.end; ++i) {
      double mx = -INFINITY;
      for (std::size_t j = grp.begin; j < grp.end; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += q[i * d + c] * k[j * d + c];
        s *= scale;
        scores[j - grp.begin] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (auto& s : scores) {
        s = std::exp(s - mx);
        z += s;
      }
      for (std::size_t c = 0; c < d; ++c) out[i * d + c] = 0.0;
      for (std::size_t j = grp.begin; j < grp.end; ++j) {
        const double p = scores[j - grp.begin] / z;
        for (std::size_t c = 0; c < d; ++c) out[i * d + c] += p * v[j * d + c];
      }
      pairs += grp.size();
    }
  }
  return pairs;
}

inline BenchRow bench_attention(AttentionKind kind, std::size_t n, std::size_t g,
                                std::uint64_t seed = 0, std::size_t head_dim = 8) {
  require(n >= 1, ErrorCode::BadConfig, "n must be >= 1");
  require(head_dim >= 1, ErrorCode::BadConfig, "head_dim must be >= 1");
  const GroupPartition part = partition(n, kind == AttentionKind::Full ? n : g);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> q(n * head_dim), k(n * head_dim), v(n * head_dim), out(n * head_dim);
  for (auto* buf : {&q, &k, &v}) {
    for (auto& x : *buf) x = u(rng);
  }
  BenchRow row;
  row.kind = kind;
  row.n = n;
  row.g = kind == AttentionKind::Full ? n : g;
  const auto t0 = std::chrono::steady_clock::now();
  row.token_pairs = attention_kernel(q, k, v, out, head_dim, part);
  row.wall_ns = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count());
  for (double x : out) row.checksum += x;
  return row;
}

inline void write_bench_header(std::ostream& os) { os << "n,g,token_pairs,wall_ns\n"; }

inline void write_bench_row(std::ostream& os, const BenchRow& r) {
  os << r.n << ',' << r.g << ',' << r.token_pairs << ',' << r.wall_ns << '\n';
}

struct LineFit {
  double slope = 0.0;
  double r2 = 0.0;
};

/// Least squares y = slope * x through the origin. R^2 is measured against
/// the mean of y.
inline LineFit fit_through_origin(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::ShapeMismatch, "fit needs >= 2 points");
  double sxy = 0.0, sxx = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    mean += y[i];
  }
  mean /= static_cast<double>(y.size());
  LineFit f;
  f.slope = sxy / sxx;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ss_res += std::pow(y[i] - f.slope * x[i], 2);
    ss_tot += std::pow(y[i] - mean, 2);
  }
  f.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return f;
}

}  // namespace voxelser
