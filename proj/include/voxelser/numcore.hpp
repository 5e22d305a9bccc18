// Copyright 2026 The voxelser Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/*
 * Minimal reverse-mode differentiation over 64-bit arrays.
 *
 * A DiffArray is a shared handle to a value buffer and a gradient buffer of
 * the same shape. Operations take a Tape, compute their forward value
 * eagerly and, when any input requires a gradient, record a backward rule.
 * Tape::backward replays those rules in exact reverse order, accumulating
 * (never overwriting) into input gradients.
 *
 * Only the operations the voxel attention stack needs are provided. There is
 * no broadcasting beyond the explicit *_rowwise helpers.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "voxelser/error.hpp"
#include "voxelser/grid.hpp"

namespace voxelser {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {
struct ArrayStorage {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
};
}  // namespace detail

class DiffArray {
 public:
  DiffArray() = default;

  explicit DiffArray(Shape shape, bool requires_grad = false)
      : s_(std::make_shared<detail::ArrayStorage>()) {
    const std::size_t n = shape_size(shape);
    s_->shape = std::move(shape);
    s_->value.assign(n, 0.0);
    s_->grad.assign(n, 0.0);
    s_->requires_grad = requires_grad;
  }

  DiffArray(Shape shape, std::vector<double> values, bool requires_grad = false)
      : DiffArray(std::move(shape), requires_grad) {
    require(values.size() == s_->value.size(), ErrorCode::ShapeMismatch,
            "value buffer of " + std::to_string(values.size()) + " for shape " +
                shape_str(s_->shape));
    s_->value = std::move(values);
  }

  static DiffArray scalar(double v, bool requires_grad = false) {
    return DiffArray({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t ndim() const { return s_->shape.size(); }
  std::size_t dim(std::size_t i) const { return s_->shape.at(i); }
  std::size_t size() const { return s_->value.size(); }

  std::span<double> value() const { return s_->value; }
  std::span<double> grad() const { return s_->grad; }
  double item() const {
    require(size() == 1, ErrorCode::ShapeMismatch, "item() on " + shape_str(shape()));
    return s_->value[0];
  }
  double& at(std::size_t r, std::size_t c) const { return s_->value[r * s_->shape[1] + c]; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool on) const { s_->requires_grad = on; }
  void zero_grad() const { std::fill(s_->grad.begin(), s_->grad.end(), 0.0); }

  /// Deep copy of the values; the copy has its own (zero) gradient.
  DiffArray clone() const { return DiffArray(shape(), s_->value, requires_grad()); }

 private:
  std::shared_ptr<detail::ArrayStorage> s_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A non-recording tape evaluates forward values only.
  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }
  Tape(Tape&&) = default;

  bool recording() const { return recording_; }
  std::size_t size() const { return rules_.size(); }

  void record(std::function<void()> rule) {
    if (consumed_) {
      throw Error(ErrorCode::BackwardBeforeForward,
                  "tape already replayed; start a new forward pass with reset()");
    }
    rules_.push_back(std::move(rule));
  }

  /// Seeds d(loss)/d(loss) = 1 and replays every rule in reverse order.
  void backward(const DiffArray& loss) {
    require(loss.defined() && loss.size() == 1, ErrorCode::ShapeMismatch,
            "backward needs a scalar loss");
    if (consumed_) {
      throw Error(ErrorCode::BackwardBeforeForward,
                  "backward called twice without a new forward pass");
    }
    if (!recording_) {
      throw Error(ErrorCode::BackwardBeforeForward, "backward on an inference tape");
    }
    consumed_ = true;
    loss.grad()[0] += 1.0;
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
    rules_.clear();
  }

  void reset() {
    rules_.clear();
    consumed_ = false;
  }

 private:
  std::vector<std::function<void()>> rules_;
  bool recording_ = true;
  bool consumed_ = false;
};

namespace detail {

inline bool track(const Tape& tape, std::initializer_list<const DiffArray*> inputs) {
  if (!tape.recording()) return false;
  for (const auto* a : inputs) {
    if (a->requires_grad()) return true;
  }
  return false;
}

inline void check_2d(const DiffArray& a, const char* op) {
  require(a.ndim() == 2, ErrorCode::ShapeMismatch,
          std::string(op) + " expects a 2D array, got " + shape_str(a.shape()));
}

inline void check_same(const DiffArray& a, const DiffArray& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

template <typename Fwd, typename Bwd>
DiffArray unary(Tape& tape, const DiffArray& a, Fwd fwd, Bwd dfdx) {
  const bool g = track(tape, {&a});
  DiffArray out(a.shape(), g);
  auto x = a.value();
  auto y = out.value();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  if (g) {
    tape.record([a, out, dfdx] {
      auto x = a.value();
      auto y = out.value();
      auto gy = out.grad();
      auto gx = a.grad();
      for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * dfdx(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace detail

// --- elementwise --------------------------------------------------------------

inline DiffArray add(Tape& tape, const DiffArray& a, const DiffArray& b) {
  detail::check_same(a, b, "add");
  const bool g = detail::track(tape, {&a, &b});
  DiffArray out(a.shape(), g);
  for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = a.value()[i] + b.value()[i];
  if (g) {
    tape.record([a, b, out] {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.requires_grad()) a.grad()[i] += out.grad()[i];
        if (b.requires_grad()) b.grad()[i] += out.grad()[i];
      }
    });
  }
  return out;
}

inline DiffArray sub(Tape& tape, const DiffArray& a, const DiffArray& b) {
  detail::check_same(a, b, "sub");
  const bool g = detail::track(tape, {&a, &b});
  DiffArray out(a.shape(), g);
  for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
  if (g) {
    tape.record([a, b, out] {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.requires_grad()) a.grad()[i] += out.grad()[i];
        if (b.requires_grad()) b.grad()[i] -= out.grad()[i];
      }
    });
  }
  return out;
}

inline DiffArray mul(Tape& tape, const DiffArray& a, const DiffArray& b) {
  detail::check_same(a, b, "mul");
  const bool g = detail::track(tape, {&a, &b});
  DiffArray out(a.shape(), g);
  for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
  if (g) {
    tape.record([a, b, out] {
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (a.requires_grad()) a.grad()[i] += out.grad()[i] * b.value()[i];
        if (b.requires_grad()) b.grad()[i] += out.grad()[i] * a.value()[i];
      }
    });
  }
  return out;
}

inline DiffArray div(Tape& tape, const DiffArray& a, const DiffArray& b) {
  detail::check_same(a, b, "div");
  const bool g = detail::track(tape, {&a, &b});
  DiffArray out(a.shape(), g);
  for (std::size_t i = 0; i < out.size(); ++i) out.value()[i] = a.value()[i] / b.value()[i];
  if (g) {
    tape.record([a, b, out] {
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double inv = 1.0 / b.value()[i];
        if (a.requires_grad()) a.grad()[i] += out.grad()[i] * inv;
        if (b.requires_grad()) b.grad()[i] -= out.grad()[i] * out.value()[i] * inv;
      }
    });
  }
  return out;
}

/// scale * a + shift
inline DiffArray affine(Tape& tape, const DiffArray& a, double scale, double shift = 0.0) {
  return detail::unary(
      tape, a, [=](double x) { return scale * x + shift; },
      [=](double, double) { return scale; });
}

inline DiffArray scale(Tape& tape, const DiffArray& a, double s) { return affine(tape, a, s); }

inline DiffArray relu(Tape& tape, const DiffArray& a) {
  return detail::unary(
      tape, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline DiffArray exp(Tape& tape, const DiffArray& a) {
  return detail::unary(
      tape, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline DiffArray log(Tape& tape, const DiffArray& a) {
  return detail::unary(
      tape, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline DiffArray clamp_min(Tape& tape, const DiffArray& a, double lo) {
  return detail::unary(
      tape, a, [=](double x) { return x > lo ? x : lo; },
      [=](double x, double) { return x > lo ? 1.0 : 0.0; });
}

/// Elementwise atan2(a, b). Not differentiable at a = b = 0.
inline DiffArray atan2(Tape& tape, const DiffArray& a, const DiffArray& b) {
  detail::check_same(a, b, "atan2");
  const bool g = detail::track(tape, {&a, &b});
  DiffArray out(a.shape(), g);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.value()[i] = std::atan2(a.value()[i], b.value()[i]);
  }
  if (g) {
    tape.record([a, b, out] {
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double y = a.value()[i];
        const double x = b.value()[i];
        const double r2 = x * x + y * y;
        if (a.requires_grad()) a.grad()[i] += out.grad()[i] * x / r2;
        if (b.requires_grad()) b.grad()[i] -= out.grad()[i] * y / r2;
      }
    });
  }
  return out;
}

inline DiffArray detach(const DiffArray& a) { return DiffArray(a.shape(), {a.value().begin(), a.value().end()}); }

/// Forward value is `hard` exactly; the backward pass routes the incoming
/// gradient to `soft` unchanged. Equivalent to hard + soft - stop_grad(soft)
/// without the rounding that expression introduces.
inline DiffArray straight_through(Tape& tape, std::span<const double> hard, const DiffArray& soft) {
  require(hard.size() == soft.size(), ErrorCode::ShapeMismatch, "straight_through size");
  const bool g = detail::track(tape, {&soft});
  DiffArray out(soft.shape(), std::vector<double>(hard.begin(), hard.end()), g);
  if (g) {
    tape.record([soft, out] {
      for (std::size_t i = 0; i < out.size(); ++i) soft.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

// --- reductions ---------------------------------------------------------------

inline DiffArray sum(Tape& tape, const DiffArray& a) {
  const bool g = detail::track(tape, {&a});
  double s = 0.0;
  for (double v : a.value()) s += v;
  DiffArray out({1}, {s}, g);
  if (g) {
    tape.record([a, out] {
      for (auto& gx : a.grad()) gx += out.grad()[0];
    });
  }
  return out;
}

inline DiffArray mean(Tape& tape, const DiffArray& a) {
  return scale(tape, sum(tape, a), 1.0 / static_cast<double>(a.size()));
}

/// Column sums of a 2D array: [m x n] -> [n].
inline DiffArray sum_rows(Tape& tape, const DiffArray& a) {
  detail::check_2d(a, "sum_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const bool g = detail::track(tape, {&a});
  DiffArray out({n}, g);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.value()[j] += a.value()[i * n + j];
  }
  if (g) {
    tape.record([a, out, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) a.grad()[i * n + j] += out.grad()[j];
      }
    });
  }
  return out;
}

inline DiffArray mean_rows(Tape& tape, const DiffArray& a) {
  return scale(tape, sum_rows(tape, a), 1.0 / static_cast<double>(a.dim(0)));
}

// --- shape manipulation -------------------------------------------------------

inline DiffArray reshape(Tape& tape, const DiffArray& a, Shape shape) {
  require(shape_size(shape) == a.size(), ErrorCode::ShapeMismatch,
          "reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  const bool g = detail::track(tape, {&a});
  DiffArray out(std::move(shape), {a.value().begin(), a.value().end()}, g);
  if (g) {
    tape.record([a, out] {
      for (std::size_t i = 0; i < out.size(); ++i) a.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

inline DiffArray transpose(Tape& tape, const DiffArray& a) {
  detail::check_2d(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const bool g = detail::track(tape, {&a});
  DiffArray out({n, m}, g);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.value()[j * m + i] = a.value()[i * n + j];
  }
  if (g) {
    tape.record([a, out, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) a.grad()[i * n + j] += out.grad()[j * m + i];
      }
    });
  }
  return out;
}

namespace detail {
// Views a 1D or 2D array as rows x cols for axis-wise copies.
inline std::pair<std::size_t, std::size_t> as_matrix(const DiffArray& a) {
  return a.ndim() == 1 ? std::pair{a.dim(0), std::size_t{1}} : std::pair{a.dim(0), a.dim(1)};
}
}  // namespace detail

/// Concatenate 1D arrays (axis 0) or 2D arrays along axis 0 or 1.
inline DiffArray concat(Tape& tape, const std::vector<DiffArray>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorCode::ShapeMismatch, "concat of nothing");
  const std::size_t nd = parts.front().ndim();
  require((nd == 1 && axis == 0) || (nd == 2 && axis < 2), ErrorCode::ShapeMismatch,
          "concat supports 1D axis 0 and 2D axes 0/1");
  Shape shape = parts.front().shape();
  shape[axis] = 0;
  bool g = false;
  for (const auto& p : parts) {
    require(p.ndim() == nd, ErrorCode::ShapeMismatch, "concat rank mismatch");
    for (std::size_t d = 0; d < nd; ++d) {
      if (d != axis) {
        require(p.dim(d) == shape[d], ErrorCode::ShapeMismatch,
                "concat: " + shape_str(p.shape()) + " vs " + shape_str(parts.front().shape()));
      }
    }
    shape[axis] += p.dim(axis);
    g = g || detail::track(tape, {&p});
  }
  DiffArray out(shape, g);
  const std::size_t out_cols = nd == 1 ? 1 : shape[1];
  // offsets: row offset for axis 0, column offset for axis 1
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const auto [rows, cols] = detail::as_matrix(p);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t dst = axis == 0 ? (off + r) * out_cols + c : r * out_cols + off + c;
        out.value()[dst] = p.value()[r * cols + c];
      }
    }
    off += p.dim(axis);
  }
  if (g) {
    tape.record([parts, offsets, out, axis, out_cols] {
      for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& p = parts[k];
        if (!p.requires_grad()) continue;
        const auto [rows, cols] = detail::as_matrix(p);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t src = axis == 0 ? (offsets[k] + r) * out_cols + c
                                              : r * out_cols + offsets[k] + c;
            p.grad()[r * cols + c] += out.grad()[src];
          }
        }
      }
    });
  }
  return out;
}

/// Half-open slice [begin, end) along one axis of a 1D or 2D array.
inline DiffArray slice(Tape& tape, const DiffArray& a, std::size_t axis, std::size_t begin,
                       std::size_t end) {
  require(a.ndim() >= 1 && a.ndim() <= 2 && axis < a.ndim(), ErrorCode::ShapeMismatch,
          "slice supports 1D and 2D arrays");
  require(begin <= end && end <= a.dim(axis), ErrorCode::ShapeMismatch,
          "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " +
              shape_str(a.shape()));
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const bool g = detail::track(tape, {&a});
  DiffArray out(shape, g);
  const auto [rows, cols] = detail::as_matrix(a);
  const auto [orows, ocols] = detail::as_matrix(out);
  auto src_index = [=](std::size_t r, std::size_t c) {
    return axis == 0 ? (begin + r) * cols + c : r * cols + begin + c;
  };
  for (std::size_t r = 0; r < orows; ++r) {
    for (std::size_t c = 0; c < ocols; ++c) out.value()[r * ocols + c] = a.value()[src_index(r, c)];
  }
  (void)rows;
  if (g) {
    tape.record([a, out, orows, ocols, src_index] {
      for (std::size_t r = 0; r < orows; ++r) {
        for (std::size_t c = 0; c < ocols; ++c) a.grad()[src_index(r, c)] += out.grad()[r * ocols + c];
      }
    });
  }
  return out;
}

/// out[r] = a[index[r]] for a 2D array.
inline DiffArray gather_rows(Tape& tape, const DiffArray& a, std::span<const std::size_t> index) {
  detail::check_2d(a, "gather_rows");
  const std::size_t n = a.dim(1);
  for (auto i : index) require(i < a.dim(0), ErrorCode::ShapeMismatch, "gather_rows index");
  const bool g = detail::track(tape, {&a});
  DiffArray out({index.size(), n}, g);
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(a.value().begin() + index[r] * n, n, out.value().begin() + r * n);
  }
  if (g) {
    tape.record([a, out, idx = std::vector<std::size_t>(index.begin(), index.end()), n] {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < n; ++c) a.grad()[idx[r] * n + c] += out.grad()[r * n + c];
      }
    });
  }
  return out;
}

/// out[index[r]] += a[r]; rows not named by index stay zero.
inline DiffArray scatter_rows(Tape& tape, const DiffArray& a, std::span<const std::size_t> index,
                              std::size_t rows) {
  detail::check_2d(a, "scatter_rows");
  require(index.size() == a.dim(0), ErrorCode::ShapeMismatch, "scatter_rows index length");
  for (auto i : index) require(i < rows, ErrorCode::ShapeMismatch, "scatter_rows index");
  const std::size_t n = a.dim(1);
  const bool g = detail::track(tape, {&a});
  DiffArray out({rows, n}, g);
  for (std::size_t r = 0; r < index.size(); ++r) {
    for (std::size_t c = 0; c < n; ++c) out.value()[index[r] * n + c] += a.value()[r * n + c];
  }
  if (g) {
    tape.record([a, out, idx = std::vector<std::size_t>(index.begin(), index.end()), n] {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        for (std::size_t c = 0; c < n; ++c) a.grad()[r * n + c] += out.grad()[idx[r] * n + c];
      }
    });
  }
  return out;
}

/// out[r] = a[r, column[r]].
inline DiffArray select_per_row(Tape& tape, const DiffArray& a, std::span<const std::size_t> column) {
  detail::check_2d(a, "select_per_row");
  require(column.size() == a.dim(0), ErrorCode::ShapeMismatch, "select_per_row length");
  const std::size_t n = a.dim(1);
  for (auto c : column) require(c < n, ErrorCode::ShapeMismatch, "select_per_row column");
  const bool g = detail::track(tape, {&a});
  DiffArray out({column.size()}, g);
  for (std::size_t r = 0; r < column.size(); ++r) out.value()[r] = a.value()[r * n + column[r]];
  if (g) {
    tape.record([a, out, cols = std::vector<std::size_t>(column.begin(), column.end()), n] {
      for (std::size_t r = 0; r < cols.size(); ++r) a.grad()[r * n + cols[r]] += out.grad()[r];
    });
  }
  return out;
}

// --- linear algebra -----------------------------------------------------------

inline DiffArray matmul(Tape& tape, const DiffArray& a, const DiffArray& b) {
  detail::check_2d(a, "matmul");
  detail::check_2d(b, "matmul");
  require(a.dim(1) == b.dim(0), ErrorCode::ShapeMismatch,
          "matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  const bool g = detail::track(tape, {&a, &b});
  DiffArray out({m, n}, g);
  {
    const auto av = a.value();
    const auto bv = b.value();
    auto ov = out.value();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double s = av[i * k + p];
        for (std::size_t j = 0; j < n; ++j) ov[i * n + j] += s * bv[p * n + j];
      }
    }
  }
  if (g) {
    tape.record([a, b, out, m, k, n] {
      const auto av = a.value();
      const auto bv = b.value();
      const auto go = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += go[i * n + j] * bv[p * n + j];
            ga[i * k + p] += s;
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double s = av[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += s * go[i * n + j];
          }
        }
      }
    });
  }
  return out;
}

/// a[m x n] + b[n] added to every row.
inline DiffArray add_rowwise(Tape& tape, const DiffArray& a, const DiffArray& b) {
  detail::check_2d(a, "add_rowwise");
  const std::size_t m = a.dim(0), n = a.dim(1);
  require(b.size() == n, ErrorCode::ShapeMismatch, "add_rowwise bias length");
  const bool g = detail::track(tape, {&a, &b});
  DiffArray out(a.shape(), g);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.value()[i * n + j] = a.value()[i * n + j] + b.value()[j];
  }
  if (g) {
    tape.record([a, b, out, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double go = out.grad()[i * n + j];
          if (a.requires_grad()) a.grad()[i * n + j] += go;
          if (b.requires_grad()) b.grad()[j] += go;
        }
      }
    });
  }
  return out;
}

/// a[m x n] * s[n] scaling every row.
inline DiffArray mul_rowwise(Tape& tape, const DiffArray& a, const DiffArray& s) {
  detail::check_2d(a, "mul_rowwise");
  const std::size_t m = a.dim(0), n = a.dim(1);
  require(s.size() == n, ErrorCode::ShapeMismatch, "mul_rowwise scale length");
  const bool g = detail::track(tape, {&a, &s});
  DiffArray out(a.shape(), g);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.value()[i * n + j] = a.value()[i * n + j] * s.value()[j];
  }
  if (g) {
    tape.record([a, s, out, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double go = out.grad()[i * n + j];
          if (a.requires_grad()) a.grad()[i * n + j] += go * s.value()[j];
          if (s.requires_grad()) s.grad()[j] += go * a.value()[i * n + j];
        }
      }
    });
  }
  return out;
}

/// a * weights[k], where weights[k] is one entry of a 1D array.
inline DiffArray scale_by(Tape& tape, const DiffArray& a, const DiffArray& weights, std::size_t k) {
  require(k < weights.size(), ErrorCode::ShapeMismatch, "scale_by index");
  const bool g = detail::track(tape, {&a, &weights});
  DiffArray out(a.shape(), g);
  const double w = weights.value()[k];
  for (std::size_t i = 0; i < a.size(); ++i) out.value()[i] = a.value()[i] * w;
  if (g) {
    tape.record([a, weights, out, k] {
      const double w = weights.value()[k];
      double dw = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a.requires_grad()) a.grad()[i] += out.grad()[i] * w;
        dw += out.grad()[i] * a.value()[i];
      }
      if (weights.requires_grad()) weights.grad()[k] += dw;
    });
  }
  return out;
}

// --- normalization ------------------------------------------------------------

/// Numerically stable softmax along `axis` of an array of any rank.
inline DiffArray softmax(Tape& tape, const DiffArray& a, std::size_t axis) {
  require(axis < a.ndim(), ErrorCode::ShapeMismatch, "softmax axis out of range");
  const auto& s = a.shape();
  const std::size_t len = s[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const bool g = detail::track(tape, {&a});
  DiffArray out(a.shape(), g);
  const auto x = a.value();
  auto y = out.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, x[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        y[base + i * inner] = std::exp(x[base + i * inner] - mx);
        z += y[base + i * inner];
      }
      for (std::size_t i = 0; i < len; ++i) y[base + i * inner] /= z;
    }
  }
  if (g) {
    tape.record([a, out, outer, inner, len] {
      const auto y = out.value();
      const auto gy = out.grad();
      auto gx = a.grad();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * len * inner + in;
          double dot = 0.0;
          for (std::size_t i = 0; i < len; ++i) dot += gy[base + i * inner] * y[base + i * inner];
          for (std::size_t i = 0; i < len; ++i) {
            gx[base + i * inner] += y[base + i * inner] * (gy[base + i * inner] - dot);
          }
        }
      }
    });
  }
  return out;
}

/// log(softmax(a)) along the last axis of a 2D array.
inline DiffArray log_softmax(Tape& tape, const DiffArray& a) {
  detail::check_2d(a, "log_softmax");
  const std::size_t rows = a.dim(0), n = a.dim(1);
  const bool g = detail::track(tape, {&a});
  DiffArray out(a.shape(), g);
  const auto x = a.value();
  auto y = out.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * n];
    const double mx = *std::max_element(xr, xr + n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(xr[i] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = xr[i] - lz;
  }
  if (g) {
    tape.record([a, out, rows, n] {
      const auto y = out.value();
      const auto gy = out.grad();
      auto gx = a.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += gy[r * n + i];
        for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += gy[r * n + i] - std::exp(y[r * n + i]) * total;
      }
    });
  }
  return out;
}

inline constexpr double kLayerNormEps = 1e-5;

/// (x - mean) / sqrt(var + eps) over the last axis, no affine parameters.
inline DiffArray layer_norm(Tape& tape, const DiffArray& a, double eps = kLayerNormEps) {
  require(eps > 0.0, ErrorCode::ShapeMismatch, "layer_norm eps must be > 0");
  require(a.ndim() >= 1, ErrorCode::ShapeMismatch, "layer_norm of a scalar shape");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  const bool g = detail::track(tape, {&a});
  DiffArray out(a.shape(), g);
  std::vector<double> inv_std(rows);
  const auto x = a.value();
  auto y = out.value();
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += x[r * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (x[r * n + j] - mu) * (x[r * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) y[r * n + j] = (x[r * n + j] - mu) * inv_std[r];
  }
  if (g) {
    tape.record([a, out, inv_std = std::move(inv_std), rows, n] {
      const auto y = out.value();
      const auto gy = out.grad();
      auto gx = a.grad();
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_g = 0.0, mean_gy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          mean_g += gy[r * n + j];
          mean_gy += gy[r * n + j] * y[r * n + j];
        }
        mean_g *= inv_n;
        mean_gy *= inv_n;
        for (std::size_t j = 0; j < n; ++j) {
          gx[r * n + j] += inv_std[r] * (gy[r * n + j] - mean_g - y[r * n + j] * mean_gy);
        }
      }
    });
  }
  return out;
}

// --- composite layers ---------------------------------------------------------

inline DiffArray linear(Tape& tape, const DiffArray& x, const DiffArray& w, const DiffArray& b) {
  return add_rowwise(tape, matmul(tape, x, w), b);
}

/// Linear layers with relu between them (none after the last).
inline DiffArray mlp_forward(Tape& tape, const DiffArray& x, std::span<const DiffArray> weights,
                             std::span<const DiffArray> biases) {
  require(!weights.empty() && weights.size() == biases.size(), ErrorCode::ShapeMismatch,
          "mlp needs matching weight and bias lists");
  DiffArray h = x;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = linear(tape, h, weights[i], biases[i]);
    if (i + 1 < weights.size()) h = relu(tape, h);
  }
  return h;
}

/// 3x3x3 convolution, stride 1, zero padding, over voxel-major features.
///   x      [V x Cin], V = dims.volume(), rows in x-fastest voxel order
///   kernel [3 x 3 x 3 x Cin x Cout], indexed (dz, dy, dx, ci, co)
///   bias   [Cout]
inline DiffArray conv3d(Tape& tape, const DiffArray& x, const GridDims& dims,
                        const DiffArray& kernel, const DiffArray& bias) {
  detail::check_2d(x, "conv3d");
  require(x.dim(0) == dims.volume(), ErrorCode::ShapeMismatch,
          "conv3d input rows " + std::to_string(x.dim(0)) + " != voxel count");
  require(kernel.ndim() == 5 && kernel.dim(0) == 3 && kernel.dim(1) == 3 && kernel.dim(2) == 3 &&
              kernel.dim(3) == x.dim(1),
          ErrorCode::ShapeMismatch, "conv3d kernel shape " + shape_str(kernel.shape()));
  const std::size_t cin = kernel.dim(3), cout = kernel.dim(4);
  require(bias.size() == cout, ErrorCode::ShapeMismatch, "conv3d bias length");
  const std::size_t volume = dims.volume();
  const bool g = detail::track(tape, {&x, &kernel, &bias});
  DiffArray out({volume, cout}, g);

  // (voxel, tap, neighbour) triples, computed once and shared with backward.
  struct Tap {
    std::uint32_t voxel, tap, neighbour;
  };
  std::vector<Tap> taps;
  taps.reserve(volume * 27);
  for (std::uint32_t z = 0; z < dims.w; ++z) {
    for (std::uint32_t y = 0; y < dims.h; ++y) {
      for (std::uint32_t xx = 0; xx < dims.d; ++xx) {
        const auto v = static_cast<std::uint32_t>(dims.index(xx, y, z));
        for (int dz = -1; dz <= 1; ++dz) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              const long nx = long(xx) + dx, ny = long(y) + dy, nz = long(z) + dz;
              if (nx < 0 || ny < 0 || nz < 0 || nx >= long(dims.d) || ny >= long(dims.h) ||
                  nz >= long(dims.w)) {
                continue;
              }
              const auto t = static_cast<std::uint32_t>((dz + 1) * 9 + (dy + 1) * 3 + (dx + 1));
              taps.push_back({v, t, static_cast<std::uint32_t>(dims.index(nx, ny, nz))});
            }
          }
        }
      }
    }
  }

  const auto xv = x.value();
  const auto kv = kernel.value();
  auto ov = out.value();
  for (std::size_t v = 0; v < volume; ++v) {
    std::copy(bias.value().begin(), bias.value().end(), ov.begin() + v * cout);
  }
  for (const auto& t : taps) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double s = xv[t.neighbour * cin + ci];
      if (s == 0.0) continue;
      const double* k = &kv[(t.tap * cin + ci) * cout];
      double* o = &ov[t.voxel * cout];
      for (std::size_t co = 0; co < cout; ++co) o[co] += s * k[co];
    }
  }
  if (g) {
    tape.record([x, kernel, bias, out, taps = std::move(taps), cin, cout, volume] {
      const auto xv = x.value();
      const auto kv = kernel.value();
      const auto go = out.grad();
      if (bias.requires_grad()) {
        for (std::size_t v = 0; v < volume; ++v) {
          for (std::size_t co = 0; co < cout; ++co) bias.grad()[co] += go[v * cout + co];
        }
      }
      auto gx = x.grad();
      auto gk = kernel.grad();
      for (const auto& t : taps) {
        const double* o = &go[t.voxel * cout];
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const std::size_t krow = (t.tap * cin + ci) * cout;
          if (x.requires_grad()) {
            double s = 0.0;
            for (std::size_t co = 0; co < cout; ++co) s += o[co] * kv[krow + co];
            gx[t.neighbour * cin + ci] += s;
          }
          if (kernel.requires_grad()) {
            const double xs = xv[t.neighbour * cin + ci];
            for (std::size_t co = 0; co < cout; ++co) gk[krow + co] += xs * o[co];
          }
        }
      }
    });
  }
  return out;
}

}  // namespace voxelser
