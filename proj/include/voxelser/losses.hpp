// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Training objective and semantic scene completion metrics.
 *
 *   L = CE(logits, labels) + scal_sem(softmax(logits)) + scal_geo(p_empty, 1 - p_empty)
 *
 * Scene-class affinity (scal) for a class c with soft mass p_c and ground
 * truth mask m_c:
 *
 *   precision   = sum(p_c m_c) / sum(p_c)
 *   recall      = sum(p_c m_c) / sum(m_c)
 *   specificity = sum((1 - p_c)(1 - m_c)) / sum(1 - m_c)
 *
 * and contributes -log of each ratio whose denominator is non-zero. Logs are
 * clamped at -100. Semantic mode averages over every counted class; geometric
 * mode scores only the occupied class of a [V x 2] empty/occupied
 * distribution.
 */

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "voxelser/error.hpp"
#include "voxelser/numcore.hpp"

namespace voxelser {

inline constexpr double kLogClamp = -100.0;

namespace detail {

inline void check_labels(std::span<const std::uint8_t> labels, std::size_t rows,
                         std::size_t classes, const char* op) {
  require(labels.size() == rows, ErrorCode::ShapeMismatch,
          std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
              std::to_string(rows) + " rows");
  for (auto l : labels) {
    require(l < classes, ErrorCode::LabelOutOfRange,
            std::string(op) + ": label " + std::to_string(l) + " outside [0, " +
                std::to_string(classes - 1) + "]");
  }
}

/// -max(log x, -100)
inline DiffArray neg_log_clamped(Tape& tape, const DiffArray& x) {
  return scale(tape, log(tape, clamp_min(tape, x, std::exp(kLogClamp))), -1.0);
}

}  // namespace detail

/// Mean negative log-likelihood of `labels` under row-wise softmax(logits).
inline DiffArray cross_entropy(Tape& tape, const DiffArray& logits,
                               std::span<const std::uint8_t> labels) {
  detail::check_2d(logits, "cross_entropy");
  detail::check_labels(labels, logits.dim(0), logits.dim(1), "cross_entropy");
  const std::vector<std::size_t> cols(labels.begin(), labels.end());
  return scale(tape, mean(tape, select_per_row(tape, log_softmax(tape, logits), cols)), -1.0);
}

enum class ScalMode { Semantic, Geometric };

/// [V x (N+1)] class probabilities -> [V x 2] (empty, occupied).
inline DiffArray geometric_probs(Tape& tape, const DiffArray& probs) {
  detail::check_2d(probs, "geometric_probs");
  const DiffArray empty = slice(tape, probs, 1, 0, 1);
  return concat(tape, {empty, affine(tape, empty, -1.0, 1.0)}, 1);
}

/// Semantic mode: probs [V x (N+1)], labels in [0, N].
/// Geometric mode: probs [V x 2], labels as above (non-zero = occupied).
inline DiffArray scal_loss(Tape& tape, const DiffArray& probs, std::span<const std::uint8_t> labels,
                           ScalMode mode) {
  detail::check_2d(probs, "scal_loss");
  const std::size_t v = probs.dim(0);
  std::vector<std::uint8_t> target(labels.begin(), labels.end());
  if (mode == ScalMode::Geometric) {
    require(probs.dim(1) == 2, ErrorCode::ShapeMismatch,
            "geometric scal expects [V x 2] probabilities, got " + shape_str(probs.shape()));
    require(labels.size() == v, ErrorCode::ShapeMismatch, "scal_loss: label count");
    for (auto& t : target) t = t != 0;
  }
  detail::check_labels(target, v, mode == ScalMode::Geometric ? 2 : probs.dim(1), "scal_loss");

  const std::size_t first = mode == ScalMode::Geometric ? 1 : 0;
  DiffArray total;
  std::size_t counted = 0;
  for (std::size_t c = first; c < probs.dim(1); ++c) {
    DiffArray mask({v, 1});
    double positives = 0.0;
    for (std::size_t i = 0; i < v; ++i) {
      mask.value()[i] = target[i] == c ? 1.0 : 0.0;
      positives += mask.value()[i];
    }
    const double negatives = static_cast<double>(v) - positives;
    const DiffArray p = slice(tape, probs, 1, c, c + 1);
    const DiffArray mass = sum(tape, p);
    if (positives == 0.0 && mass.item() == 0.0) continue;

    const DiffArray hit = sum(tape, mul(tape, p, mask));
    DiffArray term;
    auto accumulate = [&](const DiffArray& ratio) {
      const DiffArray t = detail::neg_log_clamped(tape, ratio);
      term = term.defined() ? add(tape, term, t) : t;
    };
    if (mass.item() > 0.0) accumulate(div(tape, hit, mass));
    if (positives > 0.0) accumulate(scale(tape, hit, 1.0 / positives));
    if (negatives > 0.0) {
      DiffArray inv_mask({v, 1});
      for (std::size_t i = 0; i < v; ++i) inv_mask.value()[i] = 1.0 - mask.value()[i];
      const DiffArray tn = sum(tape, mul(tape, affine(tape, p, -1.0, 1.0), inv_mask));
      accumulate(scale(tape, tn, 1.0 / negatives));
    }
    ++counted;
    total = total.defined() ? add(tape, total, term) : term;
  }
  require(counted > 0, ErrorCode::DegenerateClass,
          "scal_loss: no class has ground truth or predicted mass");
  return scale(tape, total, 1.0 / static_cast<double>(counted));
}

struct LossReport {
  double l_ce = 0.0;
  double l_scal_sem = 0.0;
  double l_scal_geo = 0.0;
  double l_total = 0.0;
};

struct Objective {
  DiffArray total;
  LossReport report;
};

/// CE + semantic scal + geometric scal, weighted 1:1:1.
inline Objective total_loss(Tape& tape, const DiffArray& logits,
                            std::span<const std::uint8_t> labels) {
  const DiffArray ce = cross_entropy(tape, logits, labels);
  const DiffArray probs = softmax(tape, logits, 1);
  const DiffArray sem = scal_loss(tape, probs, labels, ScalMode::Semantic);
  const DiffArray geo = scal_loss(tape, geometric_probs(tape, probs), labels, ScalMode::Geometric);
  Objective o;
  o.total = add(tape, add(tape, ce, sem), geo);
  o.report = {ce.item(), sem.item(), geo.item(), o.total.item()};
  return o;
}

// --- metrics ----------------------------------------------------------------------

struct SscMetrics {
  double sc_iou = 0.0;
  std::vector<std::optional<double>> class_iou;  // classes 1..N; empty when absent on both sides
  double miou = 0.0;
  double accuracy = 0.0;
};

inline std::vector<std::uint8_t> argmax_rows(const DiffArray& scores) {
  detail::check_2d(scores, "argmax_rows");
  const std::size_t n = scores.dim(1);
  require(n <= 256, ErrorCode::ShapeMismatch, "argmax_rows: more than 256 classes");
  std::vector<std::uint8_t> out(scores.dim(0));
  const auto v = scores.value();
  for (std::size_t r = 0; r < out.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c) {
      if (v[r * n + c] > v[r * n + best]) best = c;
    }
    out[r] = static_cast<std::uint8_t>(best);
  }
  return out;
}

/// IoU of predicted vs ground-truth labels; classes absent from both are
/// left out of the mean.
inline SscMetrics ssc_metrics(std::span<const std::uint8_t> predicted,
                              std::span<const std::uint8_t> truth, std::size_t num_classes) {
  require(predicted.size() == truth.size() && !truth.empty(), ErrorCode::ShapeMismatch,
          "metrics: prediction and ground truth sizes differ");
  detail::check_labels(predicted, truth.size(), num_classes + 1, "metrics");
  detail::check_labels(truth, truth.size(), num_classes + 1, "metrics");

  auto iou = [](std::size_t tp, std::size_t fp, std::size_t fn) -> std::optional<double> {
    const std::size_t denom = tp + fp + fn;
    if (denom == 0) return std::nullopt;
    return static_cast<double>(tp) / static_cast<double>(denom);
  };

  SscMetrics m;
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] != 0, t = truth[i] != 0;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
    correct += predicted[i] == truth[i];
  }
  m.sc_iou = iou(tp, fp, fn).value_or(1.0);
  m.accuracy = static_cast<double>(correct) / static_cast<double>(truth.size());

  double acc = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 1; c <= num_classes; ++c) {
    std::size_t ctp = 0, cfp = 0, cfn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool p = predicted[i] == c, t = truth[i] == c;
      ctp += p && t;
      cfp += p && !t;
      cfn += !p && t;
    }
    m.class_iou.push_back(iou(ctp, cfp, cfn));
    if (m.class_iou.back()) {
      acc += *m.class_iou.back();
      ++present;
    }
  }
  m.miou = present ? acc / static_cast<double>(present) : 0.0;
  return m;
}

}  // namespace voxelser
