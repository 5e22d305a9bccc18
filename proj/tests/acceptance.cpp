// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Pass --skip-slow to skip the training criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "voxelser/ablation.hpp"
#include "voxelser/asa.hpp"
#include "voxelser/bench.hpp"
#include "voxelser/crpe.hpp"
#include "voxelser/grid.hpp"
#include "voxelser/sfc.hpp"
#include "voxelser/suites.hpp"
#include "voxelser/synth.hpp"
#include "voxelser/train.hpp"

using namespace voxelser;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const std::function<Outcome()>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("[%s] %2d %-22s %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

std::string fmt(const char* f, double a = 0, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// 1 ------------------------------------------------------------------------------
Outcome curves() {
  const auto t0 = Clock::now();
  std::size_t bad_roundtrip = 0, bad_perm = 0, bad_adjacent = 0;
  for (auto kind : {CurveKind::ZOrder, CurveKind::Hilbert}) {
    std::vector<bool> seen(4096, false);
    for (std::uint32_t z = 0; z < 16; ++z)
      for (std::uint32_t y = 0; y < 16; ++y)
        for (std::uint32_t x = 0; x < 16; ++x) {
          const auto key = encode(kind, 4, {x, y, z});
          if (key >= 4096 || seen[key]) {
            ++bad_perm;
            continue;
          }
          seen[key] = true;
          if (!(decode(kind, 4, key) == Coord3{x, y, z})) ++bad_roundtrip;
        }
  }
  Coord3 prev = decode(CurveKind::Hilbert, 3, 0);
  for (CurveKey k = 1; k < 512; ++k) {
    const Coord3 c = decode(CurveKind::Hilbert, 3, k);
    const long d = std::labs(long(c.x) - long(prev.x)) + std::labs(long(c.y) - long(prev.y)) +
                   std::labs(long(c.z) - long(prev.z));
    bad_adjacent += d != 1;
    prev = c;
  }
  const double secs = seconds_since(t0);
  return {bad_roundtrip == 0 && bad_perm == 0 && bad_adjacent == 0 && secs < 5.0,
          fmt("16^3 round-trip errors %g, key collisions %g, 8^3 Hilbert non-adjacent steps %g, %.3fs < 5s",
              double(bad_roundtrip), double(bad_perm), double(bad_adjacent), secs)};
}

// 2 ------------------------------------------------------------------------------
Outcome grouping() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> nd(1, 10000), gd(1, 256);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = nd(rng), g = gd(rng);
    const auto p = partition(n, g);
    bool ok = p.groups.size() == (n + g - 1) / g && !p.groups.empty() && p.groups.front().begin == 0 &&
              p.groups.back().end == n;
    for (std::size_t i = 0; ok && i < p.groups.size(); ++i) {
      const auto& grp = p.groups[i];
      if (i > 0 && grp.begin != p.groups[i - 1].end) ok = false;
      if (i + 1 < p.groups.size() && grp.size() != g) ok = false;
      if (grp.size() < 1 || grp.size() > g) ok = false;
    }
    bad += !ok;
  }
  return {bad == 0, fmt("%g of 1000 random (N<=1e4, G<=256) pairs violate cover/count/short-last", bad)};
}

// 3 ------------------------------------------------------------------------------
Outcome masked_attention() {
  std::mt19937_64 rng(3);
  const AttentionConfig cfg{2, 4, 4, CurveKind::Hilbert};
  const auto w = AttentionWeights::init(8, rng);
  DiffArray x({12, 8});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : x.value()) v = u(rng);
  Tape t = Tape::inference();
  const auto part = partition(12, 4);
  const auto got = grouped_attention(t, x, part, cfg, w);
  std::vector<std::size_t> group(12);
  for (std::size_t i = 0; i < 12; ++i) group[i] = i / 4;
  const auto want = oracle::masked_full_attention(x.value(), 12, 2, 4, group, w.wq.value(), w.wk.value(),
                                                  w.wv.value(), w.wo.value());
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(got.value()[i] - want[i]));
  return {worst < 1e-10, fmt("N=12 G=4 max |grouped - masked full| = %.3e < 1e-10", worst)};
}

// 4 ------------------------------------------------------------------------------
Outcome st_gumbel() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.5);
  std::uniform_real_distribution<double> tau_d(0.1, 2.0);
  int not_one_hot = 0;
  double grad_gap = 0.0, closed_form_gap = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    ShiftSelector sel(4, 16);
    for (auto& v : sel.logits().value()) v = n(rng);
    const double tau = tau_d(rng);
    const auto noise = sample_gumbel(4, rng);
    std::vector<double> wv(4);
    for (auto& v : wv) v = n(rng);
    const DiffArray w({4}, wv);

    Tape a;
    const auto s = st_gumbel_select(a, sel, tau, noise);
    int ones = 0, zeros = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      ones += s.y_st.value()[k] == 1.0 && k == s.index;
      zeros += s.y_st.value()[k] == 0.0 && k != s.index;
    }
    not_one_hot += !(ones == 1 && zeros == 3);
    a.backward(sum(a, mul(a, s.y_st, w)));
    const std::vector<double> g_st(sel.logits().grad().begin(), sel.logits().grad().end());

    sel.logits().zero_grad();
    Tape b;
    const auto soft = st_gumbel_select(b, sel, tau, noise).y_soft;
    b.backward(sum(b, mul(b, soft, w)));

    // d/dl_k sum_j w_j y_j = y_k (w_k - sum_j w_j y_j) / tau
    std::vector<double> y(4);
    double mx = -INFINITY, z = 0.0, wy = 0.0;
    for (std::size_t k = 0; k < 4; ++k) mx = std::max(mx, (sel.logits().value()[k] + noise[k]) / tau);
    for (std::size_t k = 0; k < 4; ++k) z += y[k] = std::exp((sel.logits().value()[k] + noise[k]) / tau - mx);
    for (std::size_t k = 0; k < 4; ++k) wy += wv[k] * (y[k] /= z);
    for (std::size_t k = 0; k < 4; ++k) {
      grad_gap = std::max(grad_gap, std::abs(g_st[k] - sel.logits().grad()[k]));
      closed_form_gap = std::max(closed_form_gap, std::abs(g_st[k] - y[k] * (wv[k] - wy) / tau));
    }
  }

  ShiftSelector uniform(4, 16);
  std::mt19937_64 draws(44);
  std::vector<long> counts(4, 0);
  const long n_draws = 100000;
  for (long i = 0; i < n_draws; ++i) {
    Tape t = Tape::inference();
    ++counts[st_gumbel_select(t, uniform, 1.0, &draws).index];
  }
  const double sigma = std::sqrt(n_draws * 0.25 * 0.75);
  double worst_z = 0.0;
  for (auto c : counts) worst_z = std::max(worst_z, std::abs(c - n_draws * 0.25) / sigma);

  return {not_one_hot == 0 && grad_gap < 1e-12 && closed_form_gap < 1e-12 && worst_z <= 3.0,
          fmt("non-one-hot %g; |g_st - g_soft| %.2e, |g_st - closed form| %.2e < 1e-12; freq max |z| %.2f <= 3",
              not_one_hot, grad_gap, closed_form_gap, worst_z)};
}

// 5 ------------------------------------------------------------------------------
Outcome annealing() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> init_d(0.2, 5.0), frac(0.01, 1.0), alpha_d(0.0, 0.02);
  std::uniform_int_distribution<long> t_d(0, 200);
  double worst = 0.0;
  int clamped = 0;
  for (int i = 0; i < 100; ++i) {
    const double ti = init_d(rng), tm = ti * frac(rng), a = alpha_d(rng);
    const long t = i < 10 ? 10000 : t_d(rng);  // first ten deep in the clamped regime
    const double raw = ti * std::exp(-a * static_cast<double>(t));
    const double want = raw < tm ? tm : raw;
    clamped += raw < tm;
    worst = std::max(worst, std::abs(anneal({ti, tm, a}, t) - want));
  }
  bool monotone = true;
  const AnnealSchedule s{1.0, 0.1, 0.01};
  for (long t = 1; t <= 2000; ++t) monotone = monotone && anneal(s, t) <= anneal(s, t - 1);
  return {worst < 1e-12 && monotone && clamped >= 10,
          fmt("100 tuples (%g clamped) max error %.2e < 1e-12; tau_t non-increasing over 2000 epochs: ",
              clamped, worst) + (monotone ? "yes" : "no")};
}

// 6 ------------------------------------------------------------------------------
VoxelGrid sparse_grid(GridDims dims, std::mt19937_64& rng, double occupancy) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::uint8_t> labels(dims.volume(), 0);
  for (auto& l : labels) l = u(rng) < occupancy;
  labels[rng() % labels.size()] = 1;
  return VoxelGrid(dims, std::move(labels), 1, 0, {});
}

Outcome crpe() {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<std::uint32_t> side(2, 12);
  double centroid_gap = 0.0, translation_gap = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const GridDims dims{side(rng), side(rng), side(rng)};
    const auto g = sparse_grid(dims, rng, 0.1);
    double sx = 0, sy = 0, sz = 0, n = 0;
    for (std::size_t v = 0; v < dims.volume(); ++v) {
      if (!g.label(v)) continue;
      sx += double(v % dims.d);
      sy += double((v / dims.d) % dims.h);
      sz += double(v / (std::size_t{dims.d} * dims.h));
      n += 1;
    }
    const auto c = scene_center(g);
    centroid_gap = std::max({centroid_gap, std::abs(c.x - sx / n), std::abs(c.y - sy / n), std::abs(c.z - sz / n)});

    // Shift the scene by (p, p, p) inside a volume padded by p on all sides:
    // centroid and grid center both move by p.
    const std::uint32_t p = 1 + trial % 6;
    const GridDims big{dims.d + 2 * p, dims.h + 2 * p, dims.w + 2 * p};
    std::vector<std::uint8_t> labels(big.volume(), 0);
    for (auto v : g.occupied()) {
      const auto q = dims.coord(v);
      labels[big.index(q.x + p, q.y + p, q.z + p)] = 1;
    }
    const VoxelGrid moved(big, std::move(labels), 1, 0, {});
    const auto da = angular_deltas(g, scene_center(g));
    const auto db = angular_deltas(moved, scene_center(moved));
    for (std::size_t i = 0; i < da.size(); ++i) {
      translation_gap = std::max({translation_gap, std::abs(wrap_angle(da[i].yaw - db[i].yaw)),
                                  std::abs(wrap_angle(da[i].pitch - db[i].pitch))});
    }
  }
  const bool wrap_ok = wrap_angle(3.0 * std::numbers::pi / 2.0) == -std::numbers::pi / 2.0;
  return {centroid_gap < 1e-12 && translation_gap < 1e-12 && wrap_ok,
          fmt("centroid gap %.2e, translation gap %.2e < 1e-12; wrap(3pi/2) == -pi/2: ", centroid_gap,
              translation_gap) + (wrap_ok ? "exact" : "no")};
}

// 7 ------------------------------------------------------------------------------
Outcome gradients() {
  const auto t0 = Clock::now();
  const auto cases = run_gradcheck_suite("all");
  std::set<std::string> names;
  double worst = 0.0;
  std::string failed;
  for (const auto& c : cases) {
    names.insert(c.name);
    worst = std::max(worst, c.report.max_rel_error);
    if (!c.report.passed) failed += " " + c.module + "/" + c.name;
  }
  bool covered = true;
  for (const char* required : {"softmax_rows", "layer_norm", "conv3d", "cmln", "crpe_mlp", "grouped_attention",
                               "block_frozen_noise", "cross_entropy", "scal_semantic", "scal_geometric"}) {
    if (!names.count(required)) {
      covered = false;
      failed += std::string(" missing:") + required;
    }
  }
  const double secs = seconds_since(t0);
  return {failed.empty() && covered && secs < 120.0,
          fmt("%g cases, h=1e-5, max rel error %.2e < 1e-4, %.1fs < 120s", double(cases.size()), worst, secs) +
              failed};
}

// 8 ------------------------------------------------------------------------------
Outcome complexity() {
  std::vector<double> ns, grouped, full_pairs, n2;
  for (std::size_t n : {1024u, 2048u, 4096u, 8192u, 16384u}) {
    ns.push_back(double(n));
    n2.push_back(double(n) * double(n));
    grouped.push_back(double(bench_attention(AttentionKind::Grouped, n, 64).token_pairs));
  }
  // Full attention pair counts come from the kernel too; only the last size
  // is timed against grouped below.
  BenchRow full16k, grouped16k;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const auto n = static_cast<std::size_t>(ns[i]);
    const auto row = bench_attention(AttentionKind::Full, n, 0);
    full_pairs.push_back(double(row.token_pairs));
    if (n == 16384) full16k = row;
  }
  grouped16k = bench_attention(AttentionKind::Grouped, 16384, 64);
  const LineFit lin = fit_through_origin(ns, grouped);
  const LineFit quad = fit_through_origin(n2, full_pairs);
  const double speedup = double(full16k.wall_ns) / double(std::max<std::uint64_t>(grouped16k.wall_ns, 1));
  return {lin.r2 > 0.999 && lin.slope == 64.0 && quad.r2 > 0.999 && speedup >= 10.0,
          fmt("grouped pairs = %.6g*N (R2 %.6f); full pairs = %.6g*N^2 (R2 %.6f)", lin.slope, lin.r2, quad.slope,
              quad.r2) +
              fmt("; wall-time full/grouped at N=16384: %.0fx >= 10x", speedup)};
}

// 9 ------------------------------------------------------------------------------
Outcome toy_overfit() {
  const auto t0 = Clock::now();
  const VoxelGrid scene = generate(toy_scene(0));
  TrainConfig cfg;
  cfg.model.blocks = 2;
  const TrainResult r = train_toy(scene, cfg, 500, 1);
  bool finite = r.trace.size() == 500;
  for (const auto& row : r.trace) finite = finite && std::isfinite(row.loss.l_total);
  const SscMetrics m = evaluate(r.model, scene);
  const double secs = seconds_since(t0);
  return {finite && m.accuracy >= 0.95 && m.sc_iou >= 0.9 && secs < 600.0,
          fmt("8^3, 3 classes, 2 blocks, 500 SGD steps: accuracy %.4f >= 0.95, SC-IoU %.4f >= 0.9, mIoU %.4f, ",
              m.accuracy, m.sc_iou, m.miou) +
              "trace finite: " + (finite ? "yes" : "no") + fmt(", %.1fs < 600s", secs)};
}

// 10 -----------------------------------------------------------------------------
Outcome ablations(const std::string& csv_path) {
  const VoxelGrid scene = generate(toy_scene(0));
  const long steps = 40;
  std::ostringstream first, second;
  write_ablation_header(first);
  write_ablation_header(second);
  bool complete = true;
  int runs = 0;
  for (const auto& v : ablation_variants()) {
    const auto a = run_ablation(v, scene, TrainConfig{}, steps, 10);
    const auto b = run_ablation(v, scene, TrainConfig{}, steps, 10);
    complete = complete && a.steps == steps && std::isfinite(a.final_loss);
    write_ablation_row(first, a);
    write_ablation_row(second, b);
    ++runs;
  }
  std::ofstream(csv_path) << first.str();
  std::printf("%s", first.str().c_str());
  const bool same = first.str() == second.str();
  return {complete && same && runs == 9,
          fmt("%g variants x %g steps completed: ", runs, double(steps)) + (complete ? "yes" : "no") +
              "; rerun byte-identical: " + (same ? "yes" : "no") + "; CSV " + csv_path};
}

}  // namespace

int main(int argc, char** argv) {
  bool skip_slow = false;
  std::string csv = "ablation.csv";
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--skip-slow") == 0) skip_slow = true;
    else if (std::strcmp(argv[i], "--ablation-csv") == 0 && i + 1 < argc) csv = argv[++i];
  }
  report(1, "curves", curves);
  report(2, "grouping", grouping);
  report(3, "masked attention", masked_attention);
  report(4, "st gumbel-softmax", st_gumbel);
  report(5, "annealing", annealing);
  report(6, "crpe", crpe);
  report(7, "gradient suite", gradients);
  report(8, "complexity", complexity);
  if (!skip_slow) {
    report(9, "toy overfit", toy_overfit);
    report(10, "ablation harness", [&] { return ablations(csv); });
  }
  std::printf("%s: %d failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
