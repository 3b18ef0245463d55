// Copyright 2026 The dphr Authors
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

/// @file tensor.hpp
/// Dense row-major tensors with reverse-mode differentiation.
///
/// Every op returns a new tensor; when any input requires a gradient the result
/// keeps its inputs alive together with a closure computing the adjoint. The
/// resulting DAG is the tape: `backward()` linearizes it in topological order and
/// replays the adjoints in reverse. Leaf gradients accumulate across calls until
/// `zero_grad()`; intermediate gradients are rebuilt on every call.
///
/// Tensors are immutable once they participate in an op. Only leaves may be
/// written through `mutable_values()` (parameter updates between steps).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dphr/error.hpp"

namespace dphr {

#ifdef DPHR_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/// Adjoint of one op: receives d(loss)/d(output) and accumulates into the parents'
/// gradient buffers. A parent that does not require a gradient gets an empty span.
using BackwardFn =
    std::function<void(std::span<const real> out_grad, std::span<const std::span<real>> parent_grads)>;

namespace detail {

struct Node {
  Shape shape;
  std::vector<real> value;
  std::vector<real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  bool is_leaf() const { return !backward; }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<real> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (shape_numel(shape) != values.size()) {
      throw Error(ErrorCode::shape_mismatch, "tensor shape " + shape_string(shape) + " holds " +
                                                 std::to_string(shape_numel(shape)) + " values, got " +
                                                 std::to_string(values.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0, requires_grad); }

  static Tensor full(Shape shape, real v, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<real>(n, v), requires_grad);
  }

  static Tensor scalar(real v, bool requires_grad = false) { return Tensor(Shape{}, {v}, requires_grad); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const real> values() const { return node_->value; }

  std::span<real> mutable_values() {
    if (!node_->is_leaf()) {
      throw Error(ErrorCode::invalid_argument, "only leaf tensors may be modified in place");
    }
    return node_->value;
  }

  real item() const {
    if (numel() != 1) throw Error(ErrorCode::invalid_argument, "item() needs a single-element tensor");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->is_leaf(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  /// Empty until a backward pass reaches this tensor.
  std::span<const real> grad() const { return node_->grad; }

  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), real{0});
  }

  /// Same values, cut from the tape.
  Tensor detach() const { return Tensor(node_->shape, node_->value, false); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Extension point for ops defined outside this header. The result records
/// `parents` and `backward` only when some parent requires a gradient.
inline Tensor make_op(Shape shape, std::vector<real> values, const std::vector<Tensor>& parents,
                      BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.backward = std::move(backward);
    for (const auto& p : parents) node.parents.push_back(p.node());
  }
  return out;
}

/// Runs the adjoints from a scalar `loss` back to every leaf that requires a gradient.
inline void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorCode::non_scalar_loss,
                "backward() needs a scalar loss, got shape " + (loss.defined() ? shape_string(loss.shape()) : "<none>"));
  }
  if (!loss.requires_grad()) {
    throw Error(ErrorCode::invalid_argument, "loss does not depend on any tensor that requires a gradient");
  }

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf()) {
      node->grad.assign(node->value.size(), real{0});
    } else if (node->grad.size() != node->value.size()) {
      node->grad.assign(node->value.size(), real{0});
    }
  }
  loss.node()->grad[0] += real{1};

  std::vector<std::span<real>> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (node->is_leaf()) continue;
    slots.clear();
    for (const auto& p : node->parents) {
      slots.push_back(p->requires_grad ? std::span<real>(p->grad) : std::span<real>());
    }
    node->backward(node->grad, slots);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

inline void check_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1) return;
  throw Error(ErrorCode::shape_mismatch, std::string(op) + ": cannot broadcast " + shape_string(a.shape()) +
                                             " with " + shape_string(b.shape()));
}

inline Shape broadcast_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.numel() == 1 && b.numel() == 1) return a.rank() >= b.rank() ? a.shape() : b.shape();
  return a.numel() == 1 ? b.shape() : a.shape();
}

// Binary op with scalar-vs-tensor or equal-shape broadcasting. `fwd(x, y)` gives the
// value, `dx(x, y)` and `dy(x, y)` the partial derivatives.
template <class F, class DX, class DY>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, F fwd, DX dx, DY dy) {
  check_broadcast(a, b, name);
  Shape shape = broadcast_shape(a, b);
  const std::size_t n = shape_numel(shape);
  const std::size_t sa = a.numel() == 1 ? 0 : 1;
  const std::size_t sb = b.numel() == 1 ? 0 : 1;
  auto av = a.values();
  auto bv = b.values();
  std::vector<real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i * sa], bv[i * sb]);
  return make_op(std::move(shape), std::move(out), {a, b},
                 [a, b, sa, sb, n, dx, dy](std::span<const real> g, std::span<const std::span<real>> pg) {
                   auto av = a.values();
                   auto bv = b.values();
                   if (!pg[0].empty()) {
                     for (std::size_t i = 0; i < n; ++i) pg[0][i * sa] += g[i] * dx(av[i * sa], bv[i * sb]);
                   }
                   if (!pg[1].empty()) {
                     for (std::size_t i = 0; i < n; ++i) pg[1][i * sb] += g[i] * dy(av[i * sa], bv[i * sb]);
                   }
                 });
}

template <class F, class D>
Tensor unary(const Tensor& a, F fwd, D deriv) {
  auto av = a.values();
  std::vector<real> out(av.size());
  std::transform(av.begin(), av.end(), out.begin(), fwd);
  return make_op(a.shape(), std::move(out), {a}, [a, deriv](std::span<const real> g, std::span<const std::span<real>> pg) {
    auto av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) pg[0][i] += g[i] * deriv(av[i]);
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](real x, real y) { return x + y; }, [](real, real) { return real{1}; },
      [](real, real) { return real{1}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](real x, real y) { return x - y; }, [](real, real) { return real{1}; },
      [](real, real) { return real{-1}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](real x, real y) { return x * y; }, [](real, real y) { return y; },
      [](real x, real) { return x; });
}

/// Throws on any zero divisor instead of producing inf.
inline Tensor div(const Tensor& a, const Tensor& b) {
  auto bv = b.values();
  if (std::any_of(bv.begin(), bv.end(), [](real v) { return v == real{0}; })) {
    throw Error(ErrorCode::division_by_zero, "div: divisor contains zero");
  }
  return detail::binary(
      a, b, "div", [](real x, real y) { return x / y; }, [](real, real y) { return real{1} / y; },
      [](real x, real y) { return -x / (y * y); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, real s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, real s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, real s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator*(real s, const Tensor& a) { return mul(Tensor::scalar(s), a); }
inline Tensor operator/(const Tensor& a, real s) { return div(a, Tensor::scalar(s)); }

/// Subgradient 0 at x = 0.
inline Tensor abs(const Tensor& a) {
  return detail::unary(
      a, [](real x) { return std::abs(x); },
      [](real x) { return x > 0 ? real{1} : (x < 0 ? real{-1} : real{0}); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](real x) { return x > 0 ? x : real{0}; }, [](real x) { return x > 0 ? real{1} : real{0}; });
}

inline Tensor leaky_relu(const Tensor& a, real alpha) {
  return detail::unary(
      a, [alpha](real x) { return x > 0 ? x : alpha * x; }, [alpha](real x) { return x > 0 ? real{1} : alpha; });
}

inline Tensor clamp_max(const Tensor& a, real hi) {
  return detail::unary(
      a, [hi](real x) { return x < hi ? x : hi; }, [hi](real x) { return x < hi ? real{1} : real{0}; });
}

inline Tensor clamp_min(const Tensor& a, real lo) {
  return detail::unary(
      a, [lo](real x) { return x > lo ? x : lo; }, [lo](real x) { return x > lo ? real{1} : real{0}; });
}

// ---------------------------------------------------------------------------
// Reductions. An empty `axes` list reduces over every axis; reduced axes are dropped.

namespace detail {

struct ReducePlan {
  Shape out_shape;
  std::vector<std::size_t> out_index;  // input flat index -> output flat index
  std::size_t count = 0;               // elements folded into each output
};

inline ReducePlan plan_reduce(const Shape& shape, std::vector<std::size_t> axes) {
  const std::size_t rank = shape.size();
  if (axes.empty()) {
    axes.resize(rank);
    std::iota(axes.begin(), axes.end(), std::size_t{0});
  }
  std::vector<bool> reduced(rank, false);
  for (auto ax : axes) {
    if (ax >= rank) {
      throw Error(ErrorCode::invalid_argument,
                  "reduce: axis " + std::to_string(ax) + " out of range for " + shape_string(shape));
    }
    if (reduced[ax]) throw Error(ErrorCode::invalid_argument, "reduce: repeated axis " + std::to_string(ax));
    reduced[ax] = true;
  }
  const std::size_t n = shape_numel(shape);
  if (n == 0) throw Error(ErrorCode::empty_reduction, "reduce: input " + shape_string(shape) + " is empty");

  ReducePlan plan;
  plan.count = 1;
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = rank; d-- > 0;) {
    if (reduced[d]) {
      plan.count *= shape[d];
    } else {
      out_stride[d] = stride;
      stride *= shape[d];
    }
  }
  for (std::size_t d = 0; d < rank; ++d) {
    if (!reduced[d]) plan.out_shape.push_back(shape[d]);
  }
  plan.out_index.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < rank; ++d) o += idx[d] * out_stride[d];
    plan.out_index[i] = o;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return plan;
}

template <class Fwd, class Deriv>
Tensor reduce(const Tensor& a, std::vector<std::size_t> axes, real scale, Fwd fwd, Deriv deriv) {
  auto plan = std::make_shared<ReducePlan>(plan_reduce(a.shape(), std::move(axes)));
  std::vector<real> out(shape_numel(plan->out_shape), real{0});
  auto av = a.values();
  for (std::size_t i = 0; i < av.size(); ++i) out[plan->out_index[i]] += fwd(av[i]);
  for (auto& v : out) v *= scale;
  Shape out_shape = plan->out_shape;
  return make_op(std::move(out_shape), std::move(out), {a},
                 [a, plan, scale, deriv](std::span<const real> g, std::span<const std::span<real>> pg) {
                   auto av = a.values();
                   for (std::size_t i = 0; i < av.size(); ++i) pg[0][i] += g[plan->out_index[i]] * scale * deriv(av[i]);
                 });
}

}  // namespace detail

inline Tensor sum(const Tensor& a, std::vector<std::size_t> axes = {}) {
  return detail::reduce(
      a, std::move(axes), real{1}, [](real x) { return x; }, [](real) { return real{1}; });
}

inline Tensor mean(const Tensor& a, std::vector<std::size_t> axes = {}) {
  const auto count = detail::plan_reduce(a.shape(), axes).count;
  return detail::reduce(
      a, std::move(axes), real{1} / static_cast<real>(count), [](real x) { return x; }, [](real) { return real{1}; });
}

/// Sum of absolute values.
inline Tensor l1_norm(const Tensor& a, std::vector<std::size_t> axes = {}) {
  return detail::reduce(
      a, std::move(axes), real{1}, [](real x) { return std::abs(x); },
      [](real x) { return x > 0 ? real{1} : (x < 0 ? real{-1} : real{0}); });
}

// ---------------------------------------------------------------------------
// Spatial ops on [N, C, H, W]

struct Conv2dGeometry {
  std::size_t n, c, h, w;    // input
  std::size_t f, k;          // filters, kernel size
  std::size_t stride, pad;
  std::size_t oh, ow;        // output
};

inline Conv2dGeometry conv2d_geometry(const Shape& in, const Shape& wt, std::size_t stride, std::size_t pad) {
  if (in.size() != 4 || wt.size() != 4) {
    throw Error(ErrorCode::shape_mismatch,
                "conv2d: expected 4-d input and weight, got " + shape_string(in) + " and " + shape_string(wt));
  }
  if (in[1] != wt[1]) {
    throw Error(ErrorCode::shape_mismatch, "conv2d: input has " + std::to_string(in[1]) +
                                               " channels but weight expects " + std::to_string(wt[1]));
  }
  if (wt[2] != wt[3] || wt[2] % 2 == 0) {
    throw Error(ErrorCode::invalid_argument, "conv2d: kernel must be square with odd size, got " + shape_string(wt));
  }
  if (stride == 0) throw Error(ErrorCode::invalid_argument, "conv2d: stride must be positive");
  Conv2dGeometry g{in[0], in[1], in[2], in[3], wt[0], wt[2], stride, pad, 0, 0};
  if (g.h + 2 * pad < g.k || g.w + 2 * pad < g.k) {
    throw Error(ErrorCode::shape_mismatch, "conv2d: kernel larger than padded input " + shape_string(in));
  }
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  return g;
}

namespace detail {

// Output column range [lo, hi) whose input column ox*stride + kx - pad lies in [0, w).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t kx, const Conv2dGeometry& g, std::size_t w,
                                                       std::size_t ow) {
  const auto offset = static_cast<std::ptrdiff_t>(kx) - static_cast<std::ptrdiff_t>(g.pad);
  const auto s = static_cast<std::ptrdiff_t>(g.stride);
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(w) - 1 - offset);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(ow));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Raw zero-padded cross-correlation kernel shared by conv2d and mask propagation.
inline void conv2d_forward_raw(const Conv2dGeometry& g, std::span<const real> in, std::span<const real> wt,
                               std::span<real> out) {
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t f = 0; f < g.f; ++f) {
      real* o = out.data() + (n * g.f + f) * g.oh * g.ow;
      for (std::size_t c = 0; c < g.c; ++c) {
        const real* ip = in.data() + (n * g.c + c) * g.h * g.w;
        const real* wp = wt.data() + (f * g.c + c) * g.k * g.k;
        for (std::size_t ky = 0; ky < g.k; ++ky) {
          const auto [ylo, yhi] = valid_range(ky, g, g.h, g.oh);
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const real w = wp[ky * g.k + kx];
            if (w == real{0}) continue;
            const auto [xlo, xhi] = valid_range(kx, g, g.w, g.ow);
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const real* row = ip + (oy * g.stride + ky - g.pad) * g.w;
              real* orow = o + oy * g.ow;
              for (std::size_t ox = xlo; ox < xhi; ++ox) orow[ox] += w * row[ox * g.stride + kx - g.pad];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Zero-padded 2-d cross-correlation. `bias` may be an undefined tensor.
/// Output size: (H + 2*padding - k) / stride + 1.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
                     std::size_t padding) {
  const auto g = conv2d_geometry(input.shape(), weight.shape(), stride, padding);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.f)) {
    throw Error(ErrorCode::shape_mismatch,
                "conv2d: bias " + shape_string(bias.shape()) + " does not match " + std::to_string(g.f) + " filters");
  }
  std::vector<real> out(g.n * g.f * g.oh * g.ow, real{0});
  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t n = 0; n < g.n; ++n)
      for (std::size_t f = 0; f < g.f; ++f)
        std::fill_n(out.begin() + static_cast<std::ptrdiff_t>((n * g.f + f) * g.oh * g.ow), g.oh * g.ow, bv[f]);
  }
  detail::conv2d_forward_raw(g, input.values(), weight.values(), out);

  std::vector<Tensor> parents{input, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_op({g.n, g.f, g.oh, g.ow}, std::move(out), parents,
                 [input, weight, g](std::span<const real> go, std::span<const std::span<real>> pg) {
                   auto in = input.values();
                   auto wt = weight.values();
                   std::span<real> gin = pg[0];
                   std::span<real> gw = pg[1];
                   for (std::size_t n = 0; n < g.n; ++n) {
                     for (std::size_t f = 0; f < g.f; ++f) {
                       const real* o = go.data() + (n * g.f + f) * g.oh * g.ow;
                       for (std::size_t c = 0; c < g.c; ++c) {
                         const std::size_t plane = (n * g.c + c) * g.h * g.w;
                         const std::size_t wbase = (f * g.c + c) * g.k * g.k;
                         for (std::size_t ky = 0; ky < g.k; ++ky) {
                           const auto [ylo, yhi] = detail::valid_range(ky, g, g.h, g.oh);
                           for (std::size_t kx = 0; kx < g.k; ++kx) {
                             const auto [xlo, xhi] = detail::valid_range(kx, g, g.w, g.ow);
                             const real w = wt[wbase + ky * g.k + kx];
                             real acc = 0;
                             for (std::size_t oy = ylo; oy < yhi; ++oy) {
                               const std::size_t row = plane + (oy * g.stride + ky - g.pad) * g.w;
                               const real* orow = o + oy * g.ow;
                               if (!gin.empty()) {
                                 real* grow = gin.data() + row;
                                 for (std::size_t ox = xlo; ox < xhi; ++ox)
                                   grow[ox * g.stride + kx - g.pad] += w * orow[ox];
                               }
                               if (!gw.empty()) {
                                 const real* irow = in.data() + row;
                                 for (std::size_t ox = xlo; ox < xhi; ++ox)
                                   acc += orow[ox] * irow[ox * g.stride + kx - g.pad];
                               }
                             }
                             if (!gw.empty()) gw[wbase + ky * g.k + kx] += acc;
                           }
                         }
                       }
                     }
                   }
                   if (pg.size() > 2 && !pg[2].empty()) {
                     for (std::size_t n = 0; n < g.n; ++n)
                       for (std::size_t f = 0; f < g.f; ++f) {
                         const real* o = go.data() + (n * g.f + f) * g.oh * g.ow;
                         pg[2][f] += std::accumulate(o, o + g.oh * g.ow, real{0});
                       }
                   }
                 });
}

inline Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t padding) {
  return conv2d(input, weight, Tensor(), stride, padding);
}

namespace detail {

inline void require_nchw(const Tensor& t, const char* op) {
  if (t.rank() != 4) {
    throw Error(ErrorCode::shape_mismatch, std::string(op) + ": expected [N,C,H,W], got " + shape_string(t.shape()));
  }
}

}  // namespace detail

/// Each pixel becomes a 2x2 block; the adjoint sums each block.
inline Tensor upsample_nearest2x(const Tensor& input) {
  detail::require_nchw(input, "upsample_nearest2x");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  std::vector<real> out(planes * 4 * h * w);
  auto in = input.values();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < 2 * w; ++x) out[(p * 2 * h + y) * 2 * w + x] = in[(p * h + y / 2) * w + x / 2];
  return make_op({input.dim(0), input.dim(1), 2 * h, 2 * w}, std::move(out), {input},
                 [planes, h, w](std::span<const real> g, std::span<const std::span<real>> pg) {
                   for (std::size_t p = 0; p < planes; ++p)
                     for (std::size_t y = 0; y < 2 * h; ++y)
                       for (std::size_t x = 0; x < 2 * w; ++x)
                         pg[0][(p * h + y / 2) * w + x / 2] += g[(p * 2 * h + y) * 2 * w + x];
                 });
}

/// Mean over non-overlapping 2x2 blocks; H and W must be even.
inline Tensor avg_pool2x2(const Tensor& input) {
  detail::require_nchw(input, "avg_pool2x2");
  const std::size_t planes = input.dim(0) * input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2) {
    throw Error(ErrorCode::shape_mismatch, "avg_pool2x2: spatial size must be even, got " + shape_string(input.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  std::vector<real> out(planes * oh * ow, real{0});
  auto in = input.values();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out[(p * oh + y / 2) * ow + x / 2] += real{0.25} * in[(p * h + y) * w + x];
  return make_op({input.dim(0), input.dim(1), oh, ow}, std::move(out), {input},
                 [planes, h, w, oh, ow](std::span<const real> g, std::span<const std::span<real>> pg) {
                   for (std::size_t p = 0; p < planes; ++p)
                     for (std::size_t y = 0; y < h; ++y)
                       for (std::size_t x = 0; x < w; ++x)
                         pg[0][(p * h + y) * w + x] += real{0.25} * g[(p * oh + y / 2) * ow + x / 2];
                 });
}

/// Concatenation along the channel axis of [N,C,H,W] tensors.
inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw Error(ErrorCode::invalid_argument, "concat_channels: nothing to concatenate");
  for (const auto& p : parts) detail::require_nchw(p, "concat_channels");
  const std::size_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  std::size_t channels = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != n || p.dim(2) != h || p.dim(3) != w) {
      throw Error(ErrorCode::shape_mismatch, "concat_channels: " + shape_string(p.shape()) + " does not match " +
                                                 shape_string(parts[0].shape()));
    }
    channels += p.dim(1);
  }
  const std::size_t hw = h * w;
  std::vector<real> out(n * channels * hw);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    auto v = p.values();
    for (std::size_t b = 0; b < n; ++b)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(b * p.dim(1) * hw), p.dim(1) * hw,
                  out.begin() + static_cast<std::ptrdiff_t>((b * channels + off) * hw));
    off += p.dim(1);
  }
  std::vector<std::size_t> widths;
  for (const auto& p : parts) widths.push_back(p.dim(1));
  return make_op({n, channels, h, w}, std::move(out), parts,
                 [n, channels, hw, offsets, widths](std::span<const real> g, std::span<const std::span<real>> pg) {
                   for (std::size_t i = 0; i < pg.size(); ++i) {
                     if (pg[i].empty()) continue;
                     for (std::size_t b = 0; b < n; ++b) {
                       const real* src = g.data() + (b * channels + offsets[i]) * hw;
                       real* dst = pg[i].data() + b * widths[i] * hw;
                       for (std::size_t j = 0; j < widths[i] * hw; ++j) dst[j] += src[j];
                     }
                   }
                 });
}

/// Same values under a new shape with equal element count.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw Error(ErrorCode::shape_mismatch,
                "reshape: " + shape_string(a.shape()) + " cannot become " + shape_string(shape));
  }
  std::vector<real> v(a.values().begin(), a.values().end());
  return make_op(std::move(shape), std::move(v), {a}, [](std::span<const real> g, std::span<const std::span<real>> pg) {
    for (std::size_t i = 0; i < g.size(); ++i) pg[0][i] += g[i];
  });
}

/// Uniform values in [lo, hi).
inline Tensor random_uniform(Shape shape, real lo, real hi, std::mt19937_64& rng, bool requires_grad = false) {
  std::uniform_real_distribution<real> dist(lo, hi);
  std::vector<real> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace dphr
