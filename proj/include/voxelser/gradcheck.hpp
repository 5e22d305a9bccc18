// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "voxelser/numcore.hpp"

namespace voxelser {

struct GradcheckReport {
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t elements = 0;
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

using ScalarFn = std::function<DiffArray(Tape&)>;

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. Error per element is |g_a - g_fd| / max(1, |g_fd|).
///
/// `max_elements` > 0 limits the check to that many evenly strided elements
/// per input, which keeps large weight tensors affordable.
inline GradcheckReport gradcheck(const ScalarFn& f, const std::vector<DiffArray>& inputs,
                                 double h = 1e-5, double tol = 1e-4,
                                 std::size_t max_elements = 0) {
  std::vector<bool> saved;
  for (const auto& in : inputs) {
    saved.push_back(in.requires_grad());
    in.set_requires_grad(true);
    in.zero_grad();
  }
  auto restore = [&] {
    for (std::size_t i = 0; i < inputs.size(); ++i) inputs[i].set_requires_grad(saved[i]);
  };

  auto evaluate = [&] {
    Tape t = Tape::inference();
    return f(t).item();
  };

  Tape tape;
  const DiffArray y = f(tape);
  require(y.size() == 1, ErrorCode::ShapeMismatch, "gradcheck needs a scalar function");
  const double y0 = y.item();
  if (evaluate() != y0) {
    restore();
    throw Error(ErrorCode::NonDeterministicFunction, "two forward passes disagree");
  }
  if (y.requires_grad()) tape.backward(y);

  GradcheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto values = inputs[i].value();
    const std::vector<double> analytic(inputs[i].grad().begin(), inputs[i].grad().end());
    const std::size_t stride =
        max_elements > 0 && values.size() > max_elements ? values.size() / max_elements : 1;
    for (std::size_t j = 0; j < values.size(); j += stride) {
      const double orig = values[j];
      values[j] = orig + h;
      const double up = evaluate();
      values[j] = orig - h;
      const double down = evaluate();
      values[j] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[j] - numeric) / std::max(1.0, std::abs(numeric));
      ++report.elements;
      if (err > report.max_rel_error || std::isnan(err)) {
        report.max_rel_error = std::isnan(err) ? INFINITY : err;
        report.worst_input = i;
        report.worst_element = j;
        report.worst_analytic = analytic[j];
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < tol;
  for (const auto& in : inputs) in.zero_grad();
  restore();
  return report;
}

}  // namespace voxelser
