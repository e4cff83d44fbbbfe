// Reverse-mode automatic differentiation over dense rank-2 tensors.
//
// Every backward rule is written in terms of the same differentiable
// operations, so a gradient computed with `create_graph = true` is itself a
// graph that can be differentiated again (double backward). Hessian-vector
// products are gradients of <grad f, v> with v held constant.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dlf/tensor.hpp"

namespace dlf::ad {

namespace detail {
inline thread_local bool grad_mode = true;
}  // namespace detail

inline bool grad_enabled() noexcept { return detail::grad_mode; }

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode) { detail::grad_mode = false; }
  ~NoGradGuard() { detail::grad_mode = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var;
using VarList = std::vector<Var>;
using BackwardFn = std::function<VarList(const Var& out, const Var& grad_out)>;

struct Node {
  Tensor value;
  bool requires_grad = false;
  const char* op = "leaf";
  VarList inputs;
  BackwardFn backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node* node() const noexcept { return node_.get(); }
  const char* op() const { return node_->op; }

  double item() const {
    if (value().size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return value().data[0];
  }

  /// Records an operation result. Checks finiteness and attaches the backward
  /// rule only when recording is enabled and some input needs a gradient.
  static Var make(const char* op, Tensor value, VarList inputs, BackwardFn backward) {
    if (!value.all_finite()) throw NumericalError(op);
    Var out(std::move(value));
    out.node_->op = op;
    if (grad_enabled() && std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); })) {
      out.node_->requires_grad = true;
      out.node_->inputs = std::move(inputs);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Tensor t) { return Var(std::move(t), false); }

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_rank2(const Var& a, const char* op) {
  if (a.shape().size() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(a.shape()));
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor gemm(const Tensor& A, const Tensor& B, bool ta, bool tb) {
  const auto ar = A.shape[0], ac = A.shape[1], br = B.shape[0], bc = B.shape[1];
  const auto m = ta ? ac : ar, k = ta ? ar : ac;
  const auto kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb)
    throw ShapeError("matmul: inner dimensions differ " + shape_str(A.shape) + (ta ? "^T" : "") + " x " +
                     shape_str(B.shape) + (tb ? "^T" : ""));
  Tensor C({m, n});
  Eigen::Map<const RowMat> a(A.data.data(), Eigen::Index(ar), Eigen::Index(ac));
  Eigen::Map<const RowMat> b(B.data.data(), Eigen::Index(br), Eigen::Index(bc));
  Eigen::Map<RowMat> c(C.data.data(), Eigen::Index(m), Eigen::Index(n));
  if (m == 0 || n == 0) return C;
  if (k == 0) {
    c.setZero();
  } else if (!ta && !tb) {
    c.noalias() = a * b;
  } else if (ta && !tb) {
    c.noalias() = a.transpose() * b;
  } else if (!ta && tb) {
    c.noalias() = a * b.transpose();
  } else {
    c.noalias() = a.transpose() * b.transpose();
  }
  return C;
}

template <class F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& x, const Tensor& y, F f) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i], y.data[i]);
  return out;
}

}  // namespace detail

// ---- operations -----------------------------------------------------------

Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var broadcast_rows(const Var& row, std::size_t m);
Var sum_rows(const Var& a);
Var broadcast_cols(const Var& col, std::size_t n);
Var sum_cols(const Var& a);
Var broadcast_scalar(const Var& s, Shape shape);
Var sum(const Var& a);
Var sigmoid(const Var& a);
Var log_sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var reciprocal_above(const Var& a, double floor);
Var log(const Var& a, double floor = 1e-300);
Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
Var gather_rows(const Var& a, std::vector<std::size_t> index);
Var scatter_add_rows(const Var& g, std::vector<std::size_t> index, std::size_t n_rows);
Var pick(const Var& a, std::vector<std::size_t> index);
Var scatter_pick(const Var& g, std::vector<std::size_t> index, std::size_t n_cols);

inline Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  return Var::make("matmul", detail::gemm(a.value(), b.value(), ta, tb), {a, b},
                   [ta, tb](const Var& out, const Var& g) -> VarList {
                     const Var& A = out.node()->inputs[0];
                     const Var& B = out.node()->inputs[1];
                     if (!ta && !tb) return {matmul(g, B, false, true), matmul(A, g, true, false)};
                     if (ta && !tb) return {matmul(B, g, false, true), matmul(A, g, false, false)};
                     if (!ta && tb) return {matmul(g, B, false, false), matmul(g, A, true, false)};
                     return {matmul(B, g, true, true), matmul(g, A, true, true)};
                   });
}

inline Var transpose(const Var& a) {
  detail::require_rank2(a, "transpose");
  const auto m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = a.value().data[i * n + j];
  return Var::make("transpose", std::move(out), {a}, [](const Var&, const Var& g) -> VarList { return {transpose(g)}; });
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_numel(shape) != a.value().size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  Shape original = a.shape();
  return Var::make("reshape", Tensor(std::move(shape), a.value().data), {a},
                   [original](const Var&, const Var& g) -> VarList { return {reshape(g, original)}; });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  return Var::make("add", detail::zip(a.value(), b.value(), std::plus<>{}), {a, b},
                   [](const Var&, const Var& g) -> VarList { return {g, g}; });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  return Var::make("sub", detail::zip(a.value(), b.value(), std::minus<>{}), {a, b},
                   [](const Var&, const Var& g) -> VarList { return {g, neg(g)}; });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  return Var::make("mul", detail::zip(a.value(), b.value(), std::multiplies<>{}), {a, b},
                   [](const Var& out, const Var& g) -> VarList {
                     const Var& A = out.node()->inputs[0];
                     const Var& B = out.node()->inputs[1];
                     return {mul(g, B), mul(g, A)};
                   });
}

inline Var neg(const Var& a) {
  return Var::make("neg", detail::map(a.value(), [](double x) { return -x; }), {a},
                   [](const Var&, const Var& g) -> VarList { return {neg(g)}; });
}

inline Var scale(const Var& a, double c) {
  return Var::make("scale", detail::map(a.value(), [c](double x) { return c * x; }), {a},
                   [c](const Var&, const Var& g) -> VarList { return {scale(g, c)}; });
}

inline Var add_scalar(const Var& a, double c) {
  return Var::make("add_scalar", detail::map(a.value(), [c](double x) { return x + c; }), {a},
                   [](const Var&, const Var& g) -> VarList { return {g}; });
}

inline Var broadcast_rows(const Var& row, std::size_t m) {
  if (row.shape().size() != 2 || row.shape()[0] != 1)
    throw ShapeError("broadcast_rows: expected (1,n), got " + shape_str(row.shape()));
  const auto n = row.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    std::copy(row.value().data.begin(), row.value().data.end(), out.data.begin() + std::ptrdiff_t(i * n));
  return Var::make("broadcast_rows", std::move(out), {row},
                   [](const Var&, const Var& g) -> VarList { return {sum_rows(g)}; });
}

inline Var sum_rows(const Var& a) {
  detail::require_rank2(a, "sum_rows");
  const auto m = a.shape()[0], n = a.shape()[1];
  Tensor out({1, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[j] += a.value().data[i * n + j];
  return Var::make("sum_rows", std::move(out), {a},
                   [m](const Var&, const Var& g) -> VarList { return {broadcast_rows(g, m)}; });
}

inline Var broadcast_cols(const Var& col, std::size_t n) {
  if (col.shape().size() != 2 || col.shape()[1] != 1)
    throw ShapeError("broadcast_cols: expected (m,1), got " + shape_str(col.shape()));
  const auto m = col.shape()[0];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    std::fill_n(out.data.begin() + std::ptrdiff_t(i * n), n, col.value().data[i]);
  return Var::make("broadcast_cols", std::move(out), {col},
                   [](const Var&, const Var& g) -> VarList { return {sum_cols(g)}; });
}

inline Var sum_cols(const Var& a) {
  detail::require_rank2(a, "sum_cols");
  const auto m = a.shape()[0], n = a.shape()[1];
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += a.value().data[i * n + j];
    out.data[i] = acc;
  }
  return Var::make("sum_cols", std::move(out), {a},
                   [n](const Var&, const Var& g) -> VarList { return {broadcast_cols(g, n)}; });
}

inline Var broadcast_scalar(const Var& s, Shape shape) {
  if (s.value().size() != 1) throw ShapeError("broadcast_scalar: expected a single value");
  Shape original = s.shape();
  Tensor out(std::move(shape), s.value().data[0]);
  return Var::make("broadcast_scalar", std::move(out), {s},
                   [original](const Var&, const Var& g) -> VarList { return {reshape(sum(g), original)}; });
}

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data) acc += v;
  Shape original = a.shape();
  return Var::make("sum", Tensor::scalar(acc), {a},
                   [original](const Var&, const Var& g) -> VarList { return {broadcast_scalar(g, original)}; });
}

inline Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / double(a.value().size()));
}

inline Var add_row_bias(const Var& a, const Var& bias) {
  detail::require_rank2(a, "add_row_bias");
  return add(a, broadcast_rows(bias, a.shape()[0]));
}

inline Var sigmoid(const Var& a) {
  auto f = [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); };
  return Var::make("sigmoid", detail::map(a.value(), f), {a}, [](const Var& out, const Var& g) -> VarList {
    return {mul(g, mul(out, add_scalar(neg(out), 1.0)))};
  });
}

/// log(sigmoid(x)), evaluated without forming sigmoid(x).
inline Var log_sigmoid(const Var& a) {
  auto f = [](double x) { return std::min(x, 0.0) - std::log1p(std::exp(-std::abs(x))); };
  return Var::make("log_sigmoid", detail::map(a.value(), f), {a}, [](const Var& out, const Var& g) -> VarList {
    return {mul(g, sigmoid(neg(out.node()->inputs[0])))};
  });
}

inline Var tanh(const Var& a) {
  return Var::make("tanh", detail::map(a.value(), [](double x) { return std::tanh(x); }), {a},
                   [](const Var& out, const Var& g) -> VarList {
                     return {mul(g, add_scalar(neg(mul(out, out)), 1.0))};
                   });
}

inline Var exp(const Var& a) {
  return Var::make("exp", detail::map(a.value(), [](double x) { return std::exp(x); }), {a},
                   [](const Var& out, const Var& g) -> VarList { return {mul(g, out)}; });
}

/// 1/x where x > floor, 0 elsewhere. The derivative of a clamped log.
inline Var reciprocal_above(const Var& a, double floor) {
  auto f = [floor](double x) { return x > floor ? 1.0 / x : 0.0; };
  return Var::make("reciprocal", detail::map(a.value(), f), {a},
                   [](const Var& out, const Var& g) -> VarList { return {neg(mul(g, mul(out, out)))}; });
}

/// log(max(x, floor)); zero derivative inside the clamped region.
inline Var log(const Var& a, double floor) {
  auto f = [floor](double x) { return std::log(std::max(x, floor)); };
  return Var::make("log", detail::map(a.value(), f), {a}, [floor](const Var& out, const Var& g) -> VarList {
    return {mul(g, reciprocal_above(out.node()->inputs[0], floor))};
  });
}

inline Var softmax_rows(const Var& a) {
  detail::require_rank2(a, "softmax");
  const auto m = a.shape()[0], n = a.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.value().data.data() + i * n;
    double* y = out.data.data() + i * n;
    const double mx = n ? *std::max_element(x, x + n) : 0.0;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return Var::make("softmax", std::move(out), {a}, [n](const Var& out, const Var& g) -> VarList {
    return {mul(out, sub(g, broadcast_cols(sum_cols(mul(g, out)), n)))};
  });
}

inline Var log_softmax_rows(const Var& a) {
  detail::require_rank2(a, "log_softmax");
  const auto m = a.shape()[0], n = a.shape()[1];
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.value().data.data() + i * n;
    double* y = out.data.data() + i * n;
    const double mx = n ? *std::max_element(x, x + n) : 0.0;
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) y[j] = x[j] - lse;
  }
  return Var::make("log_softmax", std::move(out), {a}, [n](const Var& out, const Var& g) -> VarList {
    return {sub(g, mul(exp(out), broadcast_cols(sum_cols(g), n)))};
  });
}

/// Rows a[index[0]], a[index[1]], ... stacked.
inline Var gather_rows(const Var& a, std::vector<std::size_t> index) {
  detail::require_rank2(a, "gather_rows");
  const auto r = a.shape()[0], n = a.shape()[1];
  Tensor out({index.size(), n});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= r) throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range");
    std::copy_n(a.value().data.begin() + std::ptrdiff_t(index[i] * n), n, out.data.begin() + std::ptrdiff_t(i * n));
  }
  return Var::make("gather_rows", std::move(out), {a}, [index = std::move(index), r](const Var&, const Var& g) -> VarList {
    return {scatter_add_rows(g, index, r)};
  });
}

inline Var scatter_add_rows(const Var& g, std::vector<std::size_t> index, std::size_t n_rows) {
  detail::require_rank2(g, "scatter_add_rows");
  const auto n = g.shape()[1];
  if (g.shape()[0] != index.size()) throw ShapeError("scatter_add_rows: index length mismatch");
  Tensor out({n_rows, n});
  for (std::size_t i = 0; i < index.size(); ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[index[i] * n + j] += g.value().data[i * n + j];
  return Var::make("scatter_add_rows", std::move(out), {g},
                   [index = std::move(index)](const Var&, const Var& gg) -> VarList { return {gather_rows(gg, index)}; });
}

/// (m,1) column holding a[i, index[i]].
inline Var pick(const Var& a, std::vector<std::size_t> index) {
  detail::require_rank2(a, "pick");
  const auto m = a.shape()[0], n = a.shape()[1];
  if (index.size() != m) throw ShapeError("pick: index length mismatch");
  Tensor out({m, 1});
  for (std::size_t i = 0; i < m; ++i) {
    if (index[i] >= n) throw ShapeError("pick: index " + std::to_string(index[i]) + " out of range");
    out.data[i] = a.value().data[i * n + index[i]];
  }
  return Var::make("pick", std::move(out), {a}, [index = std::move(index), n](const Var&, const Var& g) -> VarList {
    return {scatter_pick(g, index, n)};
  });
}

inline Var scatter_pick(const Var& g, std::vector<std::size_t> index, std::size_t n_cols) {
  const auto m = index.size();
  if (g.value().size() != m) throw ShapeError("scatter_pick: index length mismatch");
  Tensor out({m, n_cols});
  for (std::size_t i = 0; i < m; ++i) out.data[i * n_cols + index[i]] = g.value().data[i];
  return Var::make("scatter_pick", std::move(out), {g},
                   [index = std::move(index)](const Var&, const Var& gg) -> VarList { return {pick(gg, index)}; });
}

/// sum(a * c) with c treated as a constant.
inline Var dot_const(const Var& a, const Tensor& c) { return sum(mul(a, constant(c))); }

// ---- differentiation ------------------------------------------------------

/// Gradients of the scalar `output` with respect to each of `inputs`.
/// Inputs that do not influence the output receive zeros. With
/// `create_graph`, the returned gradients are themselves differentiable.
inline VarList grad(const Var& output, const VarList& inputs, bool create_graph = false) {
  if (output.value().size() != 1)
    throw ShapeError("grad: output must be a scalar, got " + shape_str(output.shape()));

  VarList result;
  result.reserve(inputs.size());
  if (!output.requires_grad()) {
    for (const auto& in : inputs) result.emplace_back(Tensor(in.shape()));
    return result;
  }

  // Iterative post-order DFS over nodes that need gradients.
  std::vector<Var> order;
  std::unordered_map<const Node*, bool> visited;
  std::vector<std::pair<Var, std::size_t>> stack{{output, 0}};
  visited[output.node()] = true;
  while (!stack.empty()) {
    auto& [v, next] = stack.back();
    const auto& ins = v.node()->inputs;
    if (next < ins.size()) {
      const Var child = ins[next++];
      if (child.requires_grad() && !visited[child.node()]) {
        visited[child.node()] = true;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(v);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, Var> grads;
  {
    std::unique_ptr<NoGradGuard> guard;
    if (!create_graph) guard = std::make_unique<NoGradGuard>();
    grads[output.node()] = constant(Tensor(output.shape(), 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Var& v = *it;
      Node* node = v.node();
      if (!node->backward) continue;
      auto found = grads.find(node);
      if (found == grads.end()) continue;
      const Var g = found->second;
      VarList in_grads = node->backward(v, g);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        const Var& in = node->inputs[i];
        if (!in.requires_grad() || !in_grads[i].defined()) continue;
        auto [slot, inserted] = grads.try_emplace(in.node(), in_grads[i]);
        if (!inserted) slot->second = add(slot->second, in_grads[i]);
      }
    }
  }

  for (const auto& in : inputs) {
    auto found = grads.find(in.node());
    if (found == grads.end() || !in.requires_grad())
      result.emplace_back(Tensor(in.shape()));
    else
      result.push_back(found->second);
  }
  return result;
}

// ---- ParamVector-level API ------------------------------------------------

inline VarList leaves(const ParamVector& p, bool requires_grad = true) {
  VarList out;
  out.reserve(p.num_segments());
  for (const auto& s : p.segments()) out.emplace_back(s.second, requires_grad);
  return out;
}

inline ParamVector collect(const VarList& vars, const ParamVector& like) {
  if (vars.size() != like.num_segments()) throw ShapeError("collect: segment count mismatch");
  std::vector<ParamVector::Segment> segs;
  segs.reserve(vars.size());
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (vars[i].shape() != like[i].shape) throw ShapeError("collect: shape mismatch in '" + like.name(i) + "'");
    segs.emplace_back(like.name(i), vars[i].value());
  }
  return ParamVector(std::move(segs));
}

/// sum_i <grads[i], v[i]> with v constant.
inline Var inner_with(const VarList& grads, const ParamVector& v) {
  Var acc;
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Var term = dot_const(grads[i], v[i]);
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc.defined() ? acc : constant(Tensor::scalar(0.0));
}

template <class F>
concept UnaryScalarFn = std::invocable<F, const VarList&>;

template <class F>
concept BinaryScalarFn = std::invocable<F, const VarList&, const VarList&>;

template <UnaryScalarFn F>
double evaluate(F&& f, const ParamVector& x) {
  NoGradGuard guard;
  return std::forward<F>(f)(leaves(x, false)).item();
}

template <UnaryScalarFn F>
ParamVector grad(F&& f, const ParamVector& x) {
  const VarList xs = leaves(x);
  const Var y = std::forward<F>(f)(xs);
  return collect(grad(y, xs), x);
}

/// Hessian-vector product (d^2 f / dx^2) v.
template <UnaryScalarFn F>
ParamVector hvp(F&& f, const ParamVector& x, const ParamVector& v) {
  x.require_same_structure(v, "hvp");
  const VarList xs = leaves(x);
  const Var y = std::forward<F>(f)(xs);
  const VarList g = grad(y, xs, true);
  return collect(grad(inner_with(g, v), xs), x);
}

/// Mixed product (d^2 f / da db) v: the gradient in `a` of <df/db, v>.
template <BinaryScalarFn F>
ParamVector hvp_cross(F&& f, const ParamVector& a, const ParamVector& b, const ParamVector& v) {
  b.require_same_structure(v, "hvp_cross");
  const VarList as = leaves(a);
  const VarList bs = leaves(b);
  const Var y = std::forward<F>(f)(as, bs);
  const VarList g = grad(y, bs, true);
  return collect(grad(inner_with(g, v), as), a);
}

struct JointHvp {
  ParamVector cross;  // (d^2 f / da db) v
  ParamVector self;   // (d^2 f / db^2) v
};

/// Both products from one double-backward sweep over <df/db, v>.
template <BinaryScalarFn F>
JointHvp hvp_joint(F&& f, const ParamVector& a, const ParamVector& b, const ParamVector& v) {
  b.require_same_structure(v, "hvp_joint");
  const VarList as = leaves(a);
  const VarList bs = leaves(b);
  const Var y = std::forward<F>(f)(as, bs);
  const VarList g = grad(y, bs, true);
  VarList all = as;
  all.insert(all.end(), bs.begin(), bs.end());
  const VarList h = grad(inner_with(g, v), all);
  const VarList ha(h.begin(), h.begin() + std::ptrdiff_t(as.size()));
  const VarList hb(h.begin() + std::ptrdiff_t(as.size()), h.end());
  return {collect(ha, a), collect(hb, b)};
}

}  // namespace dlf::ad
