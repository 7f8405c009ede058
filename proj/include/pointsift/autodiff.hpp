// Copyright 2026 The pointsift Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tape records operations in execution order. Every operation owns a
// forward closure (so the tape can be replayed) and a backward closure that
// accumulates into the gradients of its inputs. Reductions always run in a
// fixed order, so forward values are bit-reproducible.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pointsift/error.hpp"

namespace pointsift::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(std::move(s)), data(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != shape_size(shape))
      throw InvalidArgument("tensor values do not match shape " + shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  /// Extent of the last axis (the channel axis for feature tensors).
  std::size_t channels() const { return shape.empty() ? 1 : shape.back(); }
  /// Number of channel vectors: product of all extents but the last.
  std::size_t rows() const { return channels() == 0 ? 0 : size() / channels(); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// A learnable tensor. `grad` accumulates across backward passes until zeroed.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)); fan_out is the last extent and
/// fan_in the product of the others.
inline void init_glorot_uniform(Parameter& p, std::mt19937_64& rng) {
  const std::size_t fan_out = p.value.channels();
  const std::size_t fan_in = p.value.rows();
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : p.value.data) v = dist(rng);
}

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape; }
};

class Tape {
 public:
  using ForwardFn = std::function<Tensor(const Tape&)>;
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), {}, nullptr, nullptr, nullptr, false); }

  /// Differentiable leaf; its gradient is readable through grad() after backward().
  Var input(Tensor value) { return push(std::move(value), {}, nullptr, nullptr, nullptr, true); }

  /// Leaf bound to a parameter; backward() adds into `p.grad`. The parameter
  /// must outlive the tape.
  Var param(Parameter& p) {
    if (p.grad.shape != p.value.shape) p.grad = Tensor(p.value.shape);
    return push(p.value, {}, nullptr, nullptr, &p, true);
  }

  /// Records an operation. `forward` computes the value from the current
  /// values of `inputs`; `backward` receives the output gradient.
  Var record(std::vector<std::size_t> inputs, ForwardFn forward, BackwardFn backward) {
    bool needs = false;
    for (auto i : inputs) needs = needs || nodes_[i].requires_grad;
    Tensor value = forward(*this);
    return push(std::move(value), std::move(inputs), std::move(forward),
                needs ? std::move(backward) : nullptr, nullptr, needs);
  }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  /// Smallest distance of any recorded ReLU input from 0 and of any group
  /// maximum from the runner-up value. Finite differences are only
  /// meaningful when the step stays below this margin.
  double kink_margin() const { return kink_margin_; }
  void note_kink_margin(double m) const { kink_margin_ = std::min(kink_margin_, m); }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient slot of a node for backward closures; empty if the node needs none.
  std::vector<double>* grad_slot(std::size_t id) {
    auto& n = nodes_[id];
    return n.requires_grad ? &n.grad.data : nullptr;
  }

  /// Reverse pass from a single-element tensor, seeded with 1. Resets node
  /// gradients first; parameter gradients accumulate.
  void backward(Var loss) {
    if (loss.tape != this) throw InvalidArgument("backward: variable belongs to another tape");
    if (nodes_[loss.id].value.size() != 1)
      throw InvalidArgument("backward: loss must have exactly one element");
    for (std::size_t i = 0; i <= loss.id; ++i) {
      auto& n = nodes_[i];
      if (!n.requires_grad) continue;
      if (n.grad.shape != n.value.shape) n.grad = Tensor(n.value.shape);
      else std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    }
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad.data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param != nullptr) {
        auto& pg = n.param->grad.data;
        for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad.data[k];
      }
    }
  }

  /// Re-evaluates every node in recording order. Parameter leaves re-read
  /// their parameter's current value.
  void replay() {
    for (auto& n : nodes_) {
      if (n.param != nullptr) n.value = n.param->value;
      else if (n.forward) n.value = n.forward(*this);
    }
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    ForwardFn forward;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, ForwardFn forward, BackwardFn backward,
           Parameter* param, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.forward = std::move(forward);
    n.backward = std::move(backward);
    n.param = param;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  mutable double kink_margin_ = std::numeric_limits<double>::infinity();
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Tensor& Var::grad() const { return tape->grad(id); }

namespace detail {

inline void same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr)
    throw InvalidArgument(std::string(op) + ": variables from different tapes");
}

// Register-tiled kernels. Every output element accumulates its products in
// ascending order of the reduction index, so results do not depend on the
// tile sizes or the vector width.
inline constexpr std::size_t kTileRows = 4;
#if defined(__AVX512F__)
inline constexpr std::size_t kLanes = 8;
#elif defined(__AVX__)
inline constexpr std::size_t kLanes = 4;
#else
inline constexpr std::size_t kLanes = 2;
#endif
typedef double Lanes __attribute__((vector_size(kLanes * sizeof(double))));

inline Lanes load_lanes(const double* p) {
  Lanes v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store_lanes(double* p, Lanes v) { std::memcpy(p, &v, sizeof(v)); }

// out[i, :] += x[i, :] * W  with x rows of length din and W din x dout, row-major.
inline void gemm_acc(const double* x, std::size_t rows, std::size_t din, const double* W,
                     std::size_t dout, double* out) {
  std::size_t i = 0;
  for (; i + kTileRows <= rows; i += kTileRows) {
    std::size_t j = 0;
    for (; j + 2 * kLanes <= dout; j += 2 * kLanes) {
      Lanes a0[kTileRows], a1[kTileRows];
      for (std::size_t r = 0; r < kTileRows; ++r) {
        a0[r] = load_lanes(out + (i + r) * dout + j);
        a1[r] = load_lanes(out + (i + r) * dout + j + kLanes);
      }
      for (std::size_t k = 0; k < din; ++k) {
        const Lanes w0 = load_lanes(W + k * dout + j);
        const Lanes w1 = load_lanes(W + k * dout + j + kLanes);
        for (std::size_t r = 0; r < kTileRows; ++r) {
          const double xv = x[(i + r) * din + k];
          a0[r] += xv * w0;
          a1[r] += xv * w1;
        }
      }
      for (std::size_t r = 0; r < kTileRows; ++r) {
        store_lanes(out + (i + r) * dout + j, a0[r]);
        store_lanes(out + (i + r) * dout + j + kLanes, a1[r]);
      }
    }
    for (std::size_t r = 0; r < kTileRows; ++r) {
      double* o = out + (i + r) * dout;
      const double* xi = x + (i + r) * din;
      for (std::size_t k = 0; k < din; ++k)
        for (std::size_t jj = j; jj < dout; ++jj) o[jj] += xi[k] * W[k * dout + jj];
    }
  }
  for (; i < rows; ++i) {
    double* o = out + i * dout;
    const double* xi = x + i * din;
    for (std::size_t k = 0; k < din; ++k) {
      const double xv = xi[k];
      const double* w = W + k * dout;
      for (std::size_t j = 0; j < dout; ++j) o[j] += xv * w[j];
    }
  }
}

// dx[i, :] += g[i, :] * W^T, given Wt = W^T (dout x din).
inline void gemm_acc_t(const double* g, std::size_t rows, std::size_t dout, const double* Wt,
                       std::size_t din, double* dx) {
  gemm_acc(g, rows, dout, Wt, din, dx);
}

// dW += x^T g, with rows visited in ascending order for every element.
inline void gemm_acc_xtg(const double* x, std::size_t rows, std::size_t din, const double* g,
                         std::size_t dout, double* dW) {
  constexpr std::size_t kRowBlock = 128;
  for (std::size_t i0 = 0; i0 < rows; i0 += kRowBlock) {
    const std::size_t i1 = std::min(rows, i0 + kRowBlock);
    std::size_t k = 0;
    for (; k + kTileRows <= din; k += kTileRows) {
      std::size_t j = 0;
      for (; j + 2 * kLanes <= dout; j += 2 * kLanes) {
        Lanes a0[kTileRows], a1[kTileRows];
        for (std::size_t r = 0; r < kTileRows; ++r) {
          a0[r] = load_lanes(dW + (k + r) * dout + j);
          a1[r] = load_lanes(dW + (k + r) * dout + j + kLanes);
        }
        for (std::size_t i = i0; i < i1; ++i) {
          const Lanes g0 = load_lanes(g + i * dout + j);
          const Lanes g1 = load_lanes(g + i * dout + j + kLanes);
          for (std::size_t r = 0; r < kTileRows; ++r) {
            const double xv = x[i * din + k + r];
            a0[r] += xv * g0;
            a1[r] += xv * g1;
          }
        }
        for (std::size_t r = 0; r < kTileRows; ++r) {
          store_lanes(dW + (k + r) * dout + j, a0[r]);
          store_lanes(dW + (k + r) * dout + j + kLanes, a1[r]);
        }
      }
      for (std::size_t r = 0; r < kTileRows; ++r)
        for (std::size_t i = i0; i < i1; ++i)
          for (std::size_t jj = j; jj < dout; ++jj) dW[(k + r) * dout + jj] += x[i * din + k + r] * g[i * dout + jj];
    }
    for (; k < din; ++k)
      for (std::size_t i = i0; i < i1; ++i) {
        const double xv = x[i * din + k];
        for (std::size_t j = 0; j < dout; ++j) dW[k * dout + j] += xv * g[i * dout + j];
      }
  }
}

inline std::vector<double> transpose(const double* W, std::size_t din, std::size_t dout) {
  std::vector<double> t(din * dout);
  for (std::size_t k = 0; k < din; ++k)
    for (std::size_t j = 0; j < dout; ++j) t[j * din + k] = W[k * dout + j];
  return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Operations

/// Shared linear map over the last axis: out[i] = x[i] W + b.
inline Var linear(Var x, Var W, Var b) {
  detail::same_tape(x, W, "linear");
  detail::same_tape(x, b, "linear");
  const Shape& xs = x.shape();
  const Shape& ws = W.shape();
  if (xs.empty() || ws.size() != 2 || ws[0] != xs.back() || b.value().size() != ws[1])
    throw InvalidArgument("linear: shape mismatch " + shape_string(xs) + " * " + shape_string(ws) +
                          " + " + shape_string(b.shape()));
  const std::size_t din = ws[0], dout = ws[1];
  Shape out_shape = xs;
  out_shape.back() = dout;
  const std::size_t xi = x.id, wi = W.id, bi = b.id;
  return x.tape->record(
      {xi, wi, bi},
      [=](const Tape& t) {
        const Tensor& xv = t.value(xi);
        Tensor out(out_shape);
        const std::size_t rows = xv.rows();
        const double* bv = t.value(bi).data.data();
        for (std::size_t r = 0; r < rows; ++r) std::copy(bv, bv + dout, out.data.data() + r * dout);
        detail::gemm_acc(xv.data.data(), rows, din, t.value(wi).data.data(), dout, out.data.data());
        return out;
      },
      [=](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(xi);
        const std::size_t rows = xv.rows();
        if (auto* dx = t.grad_slot(xi)) {
          const auto wt = detail::transpose(t.value(wi).data.data(), din, dout);
          detail::gemm_acc_t(g.data.data(), rows, dout, wt.data(), din, dx->data());
        }
        if (auto* dw = t.grad_slot(wi))
          detail::gemm_acc_xtg(xv.data.data(), rows, din, g.data.data(), dout, dw->data());
        if (auto* db = t.grad_slot(bi)) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < dout; ++j) (*db)[j] += g.data[r * dout + j];
        }
      });
}

/// Elementwise max(0, x); the subgradient at 0 is 0.
inline Var relu(Var x) {
  const std::size_t xi = x.id;
  return x.tape->record(
      {xi},
      [=](const Tape& t) {
        Tensor out = t.value(xi);
        double margin = std::numeric_limits<double>::infinity();
        for (auto& v : out.data) {
          margin = std::min(margin, std::fabs(v));
          v = v > 0.0 ? v : 0.0;
        }
        t.note_kink_margin(margin);
        return out;
      },
      [=](Tape& t, const Tensor& g) {
        auto* dx = t.grad_slot(xi);
        const auto& xv = t.value(xi).data;
        for (std::size_t i = 0; i < xv.size(); ++i)
          if (xv[i] > 0.0) (*dx)[i] += g.data[i];
      });
}

/// out[j] = x[idx[j]] along the first axis. Backward scatter-adds.
inline Var gather_rows(Var x, std::vector<std::uint32_t> idx) {
  const Shape& xs = x.shape();
  if (xs.empty()) throw InvalidArgument("gather_rows: scalar input");
  const std::size_t n = xs[0];
  const std::size_t row = n == 0 ? 0 : x.value().size() / n;
  for (auto i : idx)
    if (i >= n) throw InvalidArgument("gather_rows: index " + std::to_string(i) + " out of range");
  Shape out_shape = xs;
  out_shape[0] = idx.size();
  const std::size_t xi = x.id;
  auto shared = std::make_shared<const std::vector<std::uint32_t>>(std::move(idx));
  return x.tape->record(
      {xi},
      [=](const Tape& t) {
        const double* src = t.value(xi).data.data();
        Tensor out(out_shape);
        for (std::size_t j = 0; j < shared->size(); ++j)
          std::copy(src + (*shared)[j] * row, src + ((*shared)[j] + 1) * row,
                    out.data.data() + j * row);
        return out;
      },
      [=](Tape& t, const Tensor& g) {
        double* dx = t.grad_slot(xi)->data();
        for (std::size_t j = 0; j < shared->size(); ++j) {
          double* d = dx + (*shared)[j] * row;
          const double* s = g.data.data() + j * row;
          for (std::size_t c = 0; c < row; ++c) d[c] += s[c];
        }
      });
}

/// Max over the middle axis of an M x K x d tensor. Gradient goes to the
/// first (lowest k) maximal slot.
inline Var group_max_pool(Var x) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[1] == 0) throw InvalidArgument("group_max_pool: expected M x K x d with K >= 1");
  const std::size_t m = xs[0], k = xs[1], d = xs[2];
  const std::size_t xi = x.id;
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(m * d);
  return x.tape->record(
      {xi},
      [=](const Tape& t) {
        const auto& v = t.value(xi).data;
        Tensor out(Shape{m, d});
        double margin = std::numeric_limits<double>::infinity();
        for (std::size_t g = 0; g < m; ++g) {
          const double* base = v.data() + g * k * d;
          double* o = out.data.data() + g * d;
          std::uint32_t* am = argmax->data() + g * d;
          std::copy(base, base + d, o);
          std::fill(am, am + d, 0u);
          for (std::size_t s = 1; s < k; ++s) {
            const double* row = base + s * d;
            for (std::size_t c = 0; c < d; ++c) {
              if (row[c] > o[c]) {
                o[c] = row[c];
                am[c] = static_cast<std::uint32_t>(s);
              }
            }
          }
          // Exact ties come from padded (repeated) slots and move together.
          for (std::size_t s = 0; s < k; ++s)
            for (std::size_t c = 0; c < d; ++c) {
              const double gap = o[c] - base[s * d + c];
              if (gap > 0.0) margin = std::min(margin, gap);
            }
        }
        t.note_kink_margin(margin);
        return out;
      },
      [=](Tape& t, const Tensor& g) {
        double* dx = t.grad_slot(xi)->data();
        for (std::size_t grp = 0; grp < m; ++grp)
          for (std::size_t c = 0; c < d; ++c)
            dx[(grp * k + (*argmax)[grp * d + c]) * d + c] += g.data[grp * d + c];
      });
}

/// One stage of the orientation-encoding convolution. V is N x 2 x R x din;
/// the extent-2 axis is collapsed with full channel mixing:
///   out[n][0][r] = V[n][0][r] W[0] + V[n][1][r] W[1] + b.
/// The activation is applied by the caller.
inline Var axis_conv2(Var V, Var W, Var b) {
  detail::same_tape(V, W, "axis_conv2");
  detail::same_tape(V, b, "axis_conv2");
  const Shape& vs = V.shape();
  const Shape& ws = W.shape();
  if (vs.size() != 4) throw InvalidArgument("axis_conv2: expected N x 2 x R x d input");
  if (vs[1] != 2) throw InvalidArgument("axis_conv2: collapsed axis must have extent 2, got " + std::to_string(vs[1]));
  if (ws.size() != 3 || ws[0] != 2 || ws[1] != vs[3] || b.value().size() != ws[2])
    throw InvalidArgument("axis_conv2: weight shape " + shape_string(ws) + " incompatible with " + shape_string(vs));
  const std::size_t n = vs[0], r = vs[2], din = vs[3], dout = ws[2];
  const std::size_t vi = V.id, wi = W.id, bi = b.id;
  const Shape out_shape{n, 1, r, dout};
  // Rows (i, s) of the packed matrix hold [v(i,0,s,:) | v(i,1,s,:)], so the
  // whole convolution is one product with W viewed as (2 din) x dout.
  auto pack = [=](const double* v) {
    std::vector<double> p(n * r * 2 * din);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t s = 0; s < r; ++s)
          std::copy_n(v + ((i * 2 + a) * r + s) * din, din, p.data() + (i * r + s) * 2 * din + a * din);
    return p;
  };
  return V.tape->record(
      {vi, wi, bi},
      [=](const Tape& t) {
        const double* bv = t.value(bi).data.data();
        Tensor out(out_shape);
        for (std::size_t row = 0; row < n * r; ++row) std::copy(bv, bv + dout, out.data.data() + row * dout);
        const auto p = pack(t.value(vi).data.data());
        detail::gemm_acc(p.data(), n * r, 2 * din, t.value(wi).data.data(), dout, out.data.data());
        return out;
      },
      [=](Tape& t, const Tensor& g) {
        auto* dv = t.grad_slot(vi);
        auto* dw = t.grad_slot(wi);
        auto* db = t.grad_slot(bi);
        if (dv) {
          const auto wt = detail::transpose(t.value(wi).data.data(), 2 * din, dout);
          std::vector<double> dp(n * r * 2 * din, 0.0);
          detail::gemm_acc(g.data.data(), n * r, dout, wt.data(), 2 * din, dp.data());
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t a = 0; a < 2; ++a)
              for (std::size_t s = 0; s < r; ++s) {
                double* d = dv->data() + ((i * 2 + a) * r + s) * din;
                const double* src = dp.data() + (i * r + s) * 2 * din + a * din;
                for (std::size_t k = 0; k < din; ++k) d[k] += src[k];
              }
        }
        if (dw) {
          const auto p = pack(t.value(vi).data.data());
          detail::gemm_acc_xtg(p.data(), n * r, 2 * din, g.data.data(), dout, dw->data());
        }
        if (db)
          for (std::size_t row = 0; row < n * r; ++row)
            for (std::size_t j = 0; j < dout; ++j) (*db)[j] += g.data[row * dout + j];
      });
}

/// Concatenation along the last axis, in list order. All leading extents must agree.
inline Var concat_channels(const std::vector<Var>& xs) {
  if (xs.empty()) throw InvalidArgument("concat_channels: empty list");
  Shape lead = xs[0].shape();
  if (lead.empty()) throw InvalidArgument("concat_channels: scalar input");
  lead.pop_back();
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (const auto& x : xs) {
    detail::same_tape(xs[0], x, "concat_channels");
    Shape s = x.shape();
    if (s.empty()) throw InvalidArgument("concat_channels: scalar input");
    const std::size_t w = s.back();
    s.pop_back();
    if (s != lead)
      throw InvalidArgument("concat_channels: leading extents differ: " + shape_string(x.shape()));
    ids.push_back(x.id);
    widths.push_back(w);
    total += w;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  const std::size_t rows = shape_size(lead);
  return xs[0].tape->record(
      ids,
      [=](const Tape& t) {
        Tensor out(out_shape);
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          const double* src = t.value(ids[p]).data.data();
          for (std::size_t r = 0; r < rows; ++r)
            std::copy(src + r * widths[p], src + (r + 1) * widths[p], out.data.data() + r * total + off);
          off += widths[p];
        }
        return out;
      },
      [=](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (auto* d = t.grad_slot(ids[p])) {
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[p]; ++c)
                (*d)[r * widths[p] + c] += g.data[r * total + off + c];
          }
          off += widths[p];
        }
      });
}

/// Mean over rows of -log softmax(logits)[label], stabilized by max subtraction.
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2) throw InvalidArgument("softmax_cross_entropy: logits must be N x C");
  const std::size_t n = ls[0], c = ls[1];
  if (labels.size() != n) throw InvalidArgument("softmax_cross_entropy: label count mismatch");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c)
      throw InvalidArgument("softmax_cross_entropy: label " + std::to_string(l) + " out of range");
  auto lab = std::make_shared<const std::vector<int>>(labels.begin(), labels.end());
  const std::size_t li = logits.id;
  return logits.tape->record(
      {li},
      [=](const Tape& t) {
        const auto& v = t.value(li).data;
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double* row = v.data() + i * c;
          const double mx = *std::max_element(row, row + c);
          double se = 0.0;
          for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
          total += std::log(se) + mx - row[(*lab)[i]];
        }
        return Tensor(Shape{1}, std::vector<double>{total / static_cast<double>(n)});
      },
      [=](Tape& t, const Tensor& g) {
        const auto& v = t.value(li).data;
        auto& d = *t.grad_slot(li);
        const double scale = g.data[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const double* row = v.data() + i * c;
          const double mx = *std::max_element(row, row + c);
          double se = 0.0;
          for (std::size_t j = 0; j < c; ++j) se += std::exp(row[j] - mx);
          for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(row[j] - mx) / se;
            d[i * c + j] += scale * (p - (static_cast<int>(j) == (*lab)[i] ? 1.0 : 0.0));
          }
        }
      });
}

/// Same data, new shape.
inline Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size())
    throw InvalidArgument("reshape: " + shape_string(x.shape()) + " -> " + shape_string(shape));
  const std::size_t xi = x.id;
  return x.tape->record(
      {xi}, [=](const Tape& t) { return Tensor(shape, t.value(xi).data); },
      [=](Tape& t, const Tensor& g) {
        auto& d = *t.grad_slot(xi);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.data[i];
      });
}

/// out[i] = sum_t weights[i*k + t] * x[idx[i*k + t]] for an M x d input.
/// Weights and indices are constants.
inline Var weighted_gather(Var x, std::vector<std::uint32_t> idx, std::vector<double> weights,
                           std::size_t k) {
  const Shape& xs = x.shape();
  if (xs.size() != 2) throw InvalidArgument("weighted_gather: expected M x d input");
  if (k == 0 || idx.size() % k != 0 || weights.size() != idx.size())
    throw InvalidArgument("weighted_gather: inconsistent stencil sizes");
  const std::size_t m = xs[0], d = xs[1], n = idx.size() / k;
  for (auto i : idx)
    if (i >= m) throw InvalidArgument("weighted_gather: index out of range");
  auto sidx = std::make_shared<const std::vector<std::uint32_t>>(std::move(idx));
  auto sw = std::make_shared<const std::vector<double>>(std::move(weights));
  const std::size_t xi = x.id;
  return x.tape->record(
      {xi},
      [=](const Tape& t) {
        const double* src = t.value(xi).data.data();
        Tensor out(Shape{n, d});
        for (std::size_t i = 0; i < n; ++i) {
          double* o = out.data.data() + i * d;
          for (std::size_t s = 0; s < k; ++s) {
            const double w = (*sw)[i * k + s];
            const double* row = src + (*sidx)[i * k + s] * d;
            for (std::size_t c = 0; c < d; ++c) o[c] += w * row[c];
          }
        }
        return out;
      },
      [=](Tape& t, const Tensor& g) {
        double* dx = t.grad_slot(xi)->data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* gi = g.data.data() + i * d;
          for (std::size_t s = 0; s < k; ++s) {
            const double w = (*sw)[i * k + s];
            double* row = dx + (*sidx)[i * k + s] * d;
            for (std::size_t c = 0; c < d; ++c) row[c] += w * gi[c];
          }
        }
      });
}

inline Var add(Var a, Var b) {
  detail::same_tape(a, b, "add");
  if (a.shape() != b.shape())
    throw InvalidArgument("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(
      {ai, bi},
      [=](const Tape& t) {
        Tensor out = t.value(ai);
        const auto& bv = t.value(bi).data;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
        return out;
      },
      [=](Tape& t, const Tensor& g) {
        for (auto id : {ai, bi})
          if (auto* d = t.grad_slot(id))
            for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += g.data[i];
      });
}

/// Sum of all elements, as a one-element tensor.
inline Var sum(Var x) {
  const std::size_t xi = x.id;
  return x.tape->record(
      {xi},
      [=](const Tape& t) {
        double s = 0.0;
        for (double v : t.value(xi).data) s += v;
        return Tensor(Shape{1}, std::vector<double>{s});
      },
      [=](Tape& t, const Tensor& g) {
        for (auto& v : *t.grad_slot(xi)) v += g.data[0];
      });
}

/// sum_i x[i] * c[i] for a constant tensor c of the same size.
inline Var dot_constant(Var x, Tensor c) {
  if (c.size() != x.value().size()) throw InvalidArgument("dot_constant: size mismatch");
  const std::size_t xi = x.id;
  auto sc = std::make_shared<const Tensor>(std::move(c));
  return x.tape->record(
      {xi},
      [=](const Tape& t) {
        double s = 0.0;
        const auto& v = t.value(xi).data;
        for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * sc->data[i];
        return Tensor(Shape{1}, std::vector<double>{s});
      },
      [=](Tape& t, const Tensor& g) {
        auto& d = *t.grad_slot(xi);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g.data[0] * sc->data[i];
      });
}

}  // namespace pointsift::ad
