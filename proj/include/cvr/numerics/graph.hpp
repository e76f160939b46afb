#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <deque>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/numerics/kernels.hpp"
#include "cvr/numerics/tensor.hpp"

namespace cvr {

class Graph;

// Handle to one node of a Graph. Cheap to copy; valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;
};

// Tape of operation records for reverse-mode differentiation.
//
// Nodes are appended in evaluation order, so reverse creation order is a
// topological order. Backward walks it once, single-threaded, which makes
// gradient accumulation order (and therefore every gradient bit) a pure
// function of the forward program.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    const char* op = "leaf";
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until reached by backward
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var leaf(const Tensor& t, bool requires_grad) {
    t.validate();
    Node n;
    n.shape = t.shape;
    n.value = t.data;
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }
  Var leaf(Tensor&& t, bool requires_grad) {
    t.validate();
    Node n;
    n.shape = std::move(t.shape);
    n.value = std::move(t.data);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }
  Var constant(const Tensor& t) { return leaf(t, false); }
  Var constant(Tensor&& t) { return leaf(std::move(t), false); }
  Var constant(Shape s, std::vector<double> v) { return leaf(Tensor(std::move(s), std::move(v)), false); }
  Var param(const Tensor& t) { return leaf(t, true); }

  Var emit(const char* op, Shape shape, std::vector<double> value, std::vector<std::size_t> inputs,
           BackwardFn backward) {
    Node n;
    n.op = op;
    n.shape = std::move(shape);
    n.value = std::move(value);
    for (std::size_t in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Node& node(Var v) const { return nodes_[v.id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  const Shape& shape(Var v) const { return nodes_[v.id].shape; }
  const std::vector<double>& value(Var v) const { return nodes_[v.id].value; }
  const std::vector<double>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Tensor tensor(Var v) const { return Tensor(nodes_[v.id].shape, nodes_[v.id].value); }
  double item(Var v) const {
    if (nodes_[v.id].value.size() != 1) throw ContractError("item() on non-scalar node");
    return nodes_[v.id].value[0];
  }

  // Gradient accumulated into node `id`; allocated as zeros on first touch.
  std::vector<double>& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }

  // d(loss)/d(node), zeros when the node was not reached.
  std::vector<double> grad(Var v) const {
    const Node& n = nodes_[v.id];
    return n.grad.empty() ? std::vector<double>(n.value.size(), 0.0) : n.grad;
  }

  void backward(Var loss) {
    if (loss.graph != this) throw ContractError("loss node belongs to another graph");
    const Node& l = nodes_[loss.id];
    if (l.value.size() != 1)
      throw ContractError("backward requires a scalar loss, got shape " + shape_str(l.shape));
    for (Node& n : nodes_) n.grad.clear();
    if (!l.requires_grad) return;
    grad_buffer(loss.id)[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      n.backward(*this, id);
    }
  }

 private:
  Var push(Node&& n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // deque: references returned by value()/shape() survive appends
};

namespace detail {

inline Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw ContractError("Var is not bound to a graph");
  return *a.graph;
}

inline void require_same_graph(Var a, Var b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
}

inline void require_rank2(const Shape& s, const char* what) {
  if (s.size() != 2) throw DimensionError(std::string(what) + " expects a matrix, got " + shape_str(s));
}

inline void check_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (std::isnan(x)) throw NumericError(std::string(what) + ": NaN input");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(Var a, Var b) {
  detail::require_same_graph(a, b);
  Graph& g = detail::graph_of(a);
  const Shape sa = g.shape(a), sb = g.shape(b);
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw DimensionError("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(m * n, 0.0);
  kernels::gemm_nn(g.value(a).data(), g.value(b).data(), out.data(), m, k, n);
  return g.emit("matmul", {m, n}, std::move(out), {a.id, b.id}, [m, k, n](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const std::size_t ia = node.inputs[0], ib = node.inputs[1];
    const auto& dy = node.grad;
    if (gr.requires_grad(ia))
      kernels::gemm_nt(dy.data(), gr.value(ib).data(), gr.grad_buffer(ia).data(), m, n, k);
    if (gr.requires_grad(ib))
      kernels::gemm_tn(gr.value(ia).data(), dy.data(), gr.grad_buffer(ib).data(), m, k, n);
  });
}

// Batched product over the leading extent: [G x m x k] * [G x k x n], or with
// `transpose_b` the second operand is [G x n x k].
inline Var bmm(Var a, Var b, bool transpose_b = false) {
  detail::require_same_graph(a, b);
  Graph& g = detail::graph_of(a);
  const Shape sa = g.shape(a), sb = g.shape(b);
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] ||
      sa[2] != (transpose_b ? sb[2] : sb[1]))
    throw DimensionError("bmm shape mismatch: " + shape_str(sa) + " x " + shape_str(sb) +
                         (transpose_b ? " (transposed)" : ""));
  const std::size_t batch = sa[0], m = sa[1], k = sa[2], n = transpose_b ? sb[1] : sb[2];
  std::vector<double> out(batch * m * n, 0.0);
  const double* pa = g.value(a).data();
  const double* pb = g.value(b).data();
  for (std::size_t i = 0; i < batch; ++i) {
    if (transpose_b)
      kernels::gemm_nt(pa + i * m * k, pb + i * n * k, out.data() + i * m * n, m, k, n);
    else
      kernels::gemm_nn(pa + i * m * k, pb + i * k * n, out.data() + i * m * n, m, k, n);
  }
  return g.emit("bmm", {batch, m, n}, std::move(out), {a.id, b.id},
                [batch, m, k, n, transpose_b](Graph& gr, std::size_t self) {
                  const auto& node = gr.node(self);
                  const std::size_t ia = node.inputs[0], ib = node.inputs[1];
                  const auto& dy = node.grad;
                  const double* va = gr.value(ia).data();
                  const double* vb = gr.value(ib).data();
                  if (gr.requires_grad(ia)) {
                    double* ga = gr.grad_buffer(ia).data();
                    for (std::size_t i = 0; i < batch; ++i) {
                      // dA = dY * B^T   (or dY * B when B was given transposed)
                      if (transpose_b)
                        kernels::gemm_nn(dy.data() + i * m * n, vb + i * n * k, ga + i * m * k, m, n, k);
                      else
                        kernels::gemm_nt(dy.data() + i * m * n, vb + i * k * n, ga + i * m * k, m, n, k);
                    }
                  }
                  if (gr.requires_grad(ib)) {
                    double* gb = gr.grad_buffer(ib).data();
                    for (std::size_t i = 0; i < batch; ++i) {
                      // dB = A^T * dY   (or dY^T * A for the transposed operand)
                      if (transpose_b)
                        kernels::gemm_tn(dy.data() + i * m * n, va + i * m * k, gb + i * n * k, m, n, k);
                      else
                        kernels::gemm_tn(va + i * m * k, dy.data() + i * m * n, gb + i * k * n, m, k, n);
                    }
                  }
                });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

// Equal shapes, or one side holds a single element.
enum class Broadcast { kEqual, kLeftScalar, kRightScalar };

inline Broadcast broadcast_kind(const Shape& sa, const Shape& sb, const char* op) {
  if (sa == sb) return Broadcast::kEqual;
  if (shape_numel(sb) == 1) return Broadcast::kRightScalar;
  if (shape_numel(sa) == 1) return Broadcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(sa) + " and " +
                       shape_str(sb));
}

template <class Fwd, class DA, class DB>
Var binary(const char* op, Var a, Var b, Fwd fwd, DA dfa, DB dfb) {
  require_same_graph(a, b);
  Graph& g = graph_of(a);
  const Shape sa = g.shape(a), sb = g.shape(b);
  const Broadcast kind = broadcast_kind(sa, sb, op);
  const Shape out_shape = kind == Broadcast::kLeftScalar ? sb : sa;
  const auto& va = g.value(a);
  const auto& vb = g.value(b);
  const std::size_t n = shape_numel(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = va[kind == Broadcast::kLeftScalar ? 0 : i];
    const double y = vb[kind == Broadcast::kRightScalar ? 0 : i];
    out[i] = fwd(x, y);
  }
  return g.emit(op, out_shape, std::move(out), {a.id, b.id}, [kind, n, dfa, dfb](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const std::size_t ia = node.inputs[0], ib = node.inputs[1];
    const auto& dy = node.grad;
    const auto& xa = gr.value(ia);
    const auto& xb = gr.value(ib);
    const bool need_a = gr.requires_grad(ia), need_b = gr.requires_grad(ib);
    std::vector<double>* ga = need_a ? &gr.grad_buffer(ia) : nullptr;
    std::vector<double>* gb = need_b ? &gr.grad_buffer(ib) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t iaa = kind == Broadcast::kLeftScalar ? 0 : i;
      const std::size_t ibb = kind == Broadcast::kRightScalar ? 0 : i;
      if (ga) (*ga)[iaa] += dy[i] * dfa(xa[iaa], xb[ibb]);
      if (gb) (*gb)[ibb] += dy[i] * dfb(xa[iaa], xb[ibb]);
    }
  });
}

template <class Fwd, class Deriv>
Var unary(const char* op, Var a, Fwd fwd, Deriv deriv) {
  Graph& g = graph_of(a);
  const auto& va = g.value(a);
  std::vector<double> out(va.size());
  for (std::size_t i = 0; i < va.size(); ++i) out[i] = fwd(va[i]);
  return g.emit(op, g.shape(a), std::move(out), {a.id}, [deriv](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const std::size_t ia = node.inputs[0];
    const auto& x = gr.value(ia);
    const auto& y = node.value;
    const auto& dy = node.grad;
    auto& ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] += dy[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Var scale(Var a, double s) {
  return detail::unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

// relu'(0) := 0; NaN passes through.
inline Var relu(Var a) {
  return detail::unary(
      "relu", a, [](double x) { return x < 0.0 ? 0.0 : x; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var log1p(Var a) {
  return detail::unary(
      "log1p", a, [](double x) { return std::log1p(x); },
      [](double x, double) { return 1.0 / (1.0 + x); });
}

inline Var exp(Var a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

enum class ElementwiseOp { kAdd, kMul, kRelu, kLog1p };

// Dispatch form used where the op is data: binary ops take two inputs, unary one.
inline Var elementwise(ElementwiseOp op, std::span<const Var> inputs) {
  const std::size_t arity = (op == ElementwiseOp::kAdd || op == ElementwiseOp::kMul) ? 2 : 1;
  if (inputs.size() != arity)
    throw ContractError("elementwise: expected " + std::to_string(arity) + " inputs, got " +
                        std::to_string(inputs.size()));
  switch (op) {
    case ElementwiseOp::kAdd: return add(inputs[0], inputs[1]);
    case ElementwiseOp::kMul: return mul(inputs[0], inputs[1]);
    case ElementwiseOp::kRelu: return relu(inputs[0]);
    case ElementwiseOp::kLog1p: return log1p(inputs[0]);
  }
  throw ContractError("elementwise: unknown op");
}

// x[m x n] + bias[n] broadcast over rows.
inline Var add_bias(Var x, Var bias) {
  detail::require_same_graph(x, bias);
  Graph& g = detail::graph_of(x);
  const Shape sx = g.shape(x);
  const std::size_t n = sx.back();
  if (shape_numel(g.shape(bias)) != n)
    throw DimensionError("add_bias: bias " + shape_str(g.shape(bias)) + " does not match rows of " +
                         shape_str(sx));
  const auto& vx = g.value(x);
  const auto& vb = g.value(bias);
  std::vector<double> out(vx.size());
  const std::size_t m = vx.size() / n;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vx[i * n + j] + vb[j];
  return g.emit("add_bias", sx, std::move(out), {x.id, bias.id}, [m, n](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    if (gr.requires_grad(node.inputs[0])) {
      auto& gx = gr.grad_buffer(node.inputs[0]);
      for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
    }
    if (gr.requires_grad(node.inputs[1])) {
      auto& gb = gr.grad_buffer(node.inputs[1]);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
    }
  });
}

// x[m x n] scaled row-wise by c[m x 1].
inline Var mul_col(Var x, Var c) {
  detail::require_same_graph(x, c);
  Graph& g = detail::graph_of(x);
  const Shape sx = g.shape(x);
  detail::require_rank2(sx, "mul_col");
  const std::size_t m = sx[0], n = sx[1];
  if (shape_numel(g.shape(c)) != m)
    throw DimensionError("mul_col: column " + shape_str(g.shape(c)) + " does not match " + shape_str(sx));
  const auto& vx = g.value(x);
  const auto& vc = g.value(c);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = vx[i * n + j] * vc[i];
  return g.emit("mul_col", sx, std::move(out), {x.id, c.id}, [m, n](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const std::size_t ix = node.inputs[0], ic = node.inputs[1];
    const auto& dy = node.grad;
    const auto& vx2 = gr.value(ix);
    const auto& vc2 = gr.value(ic);
    if (gr.requires_grad(ix)) {
      auto& gx = gr.grad_buffer(ix);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += dy[i * n + j] * vc2[i];
    }
    if (gr.requires_grad(ic)) {
      auto& gc = gr.grad_buffer(ic);
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += dy[i * n + j] * vx2[i * n + j];
        gc[i] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalizations

// Softmax over the last extent, max-subtracted. NaN input is rejected.
inline Var softmax_rows(Var x) {
  Graph& g = detail::graph_of(x);
  const Shape sx = g.shape(x);
  const auto& vx = g.value(x);
  detail::check_finite(vx, "softmax_rows");
  const std::size_t n = sx.back();
  const std::size_t m = vx.size() / n;
  std::vector<double> out(vx.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = vx.data() + i * n;
    double* o = out.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(row[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= s;
  }
  return g.emit("softmax_rows", sx, std::move(out), {x.id}, [m, n](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    const auto& y = node.value;
    auto& gx = gr.grad_buffer(node.inputs[0]);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (dy[i * n + j] - dot);
    }
  });
}

// Per-row standardization over the last extent (no learned affine).
inline Var layer_norm_rows(Var x, double eps = 1e-5) {
  Graph& g = detail::graph_of(x);
  const Shape sx = g.shape(x);
  const auto& vx = g.value(x);
  const std::size_t n = sx.back();
  const std::size_t m = vx.size() / n;
  std::vector<double> out(vx.size());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = vx.data() + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = (row[j] - mean) * inv_std[i];
  }
  return g.emit("layer_norm_rows", sx, std::move(out), {x.id},
                [m, n, inv_std = std::move(inv_std)](Graph& gr, std::size_t self) {
                  const auto& node = gr.node(self);
                  const auto& dy = node.grad;
                  const auto& y = node.value;
                  auto& gx = gr.grad_buffer(node.inputs[0]);
                  const double inv_n = 1.0 / static_cast<double>(n);
                  for (std::size_t i = 0; i < m; ++i) {
                    double sum_dy = 0.0, sum_dy_y = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                      sum_dy += dy[i * n + j];
                      sum_dy_y += dy[i * n + j] * y[i * n + j];
                    }
                    for (std::size_t j = 0; j < n; ++j)
                      gx[i * n + j] += inv_std[i] *
                                       (dy[i * n + j] - inv_n * sum_dy - y[i * n + j] * inv_n * sum_dy_y);
                  }
                });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var x) {
  Graph& g = detail::graph_of(x);
  double s = 0.0;
  for (double v : g.value(x)) s += v;
  return g.emit("sum", {1}, {s}, {x.id}, [](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const double d = node.grad[0];
    for (double& gx : gr.grad_buffer(node.inputs[0])) gx += d;
  });
}

inline Var mean(Var x) {
  Graph& g = detail::graph_of(x);
  const double n = static_cast<double>(g.value(x).size());
  return scale(sum(x), 1.0 / n);
}

// [B*S x d] -> [B x d]: average each run of `group` consecutive rows.
inline Var mean_pool_rows(Var x, std::size_t group) {
  Graph& g = detail::graph_of(x);
  const Shape sx = g.shape(x);
  detail::require_rank2(sx, "mean_pool_rows");
  if (group == 0 || sx[0] % group != 0)
    throw DimensionError("mean_pool_rows: " + std::to_string(sx[0]) + " rows not divisible by " +
                         std::to_string(group));
  const std::size_t b = sx[0] / group, d = sx[1];
  const auto& vx = g.value(x);
  std::vector<double> out(b * d, 0.0);
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t t = 0; t < group; ++t)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] += vx[(i * group + t) * d + j];
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= inv;
  }
  return g.emit("mean_pool_rows", {b, d}, std::move(out), {x.id}, [b, d, group, inv](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    auto& gx = gr.grad_buffer(node.inputs[0]);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < group; ++t)
        for (std::size_t j = 0; j < d; ++j) gx[(i * group + t) * d + j] += dy[i * d + j] * inv;
  });
}

// ---------------------------------------------------------------------------
// Layout

inline Var reshape(Var x, Shape shape) {
  Graph& g = detail::graph_of(x);
  if (shape_numel(shape) != g.value(x).size())
    throw DimensionError("reshape: cannot view " + shape_str(g.shape(x)) + " as " + shape_str(shape));
  return g.emit("reshape", std::move(shape), g.value(x), {x.id}, [](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    auto& gx = gr.grad_buffer(node.inputs[0]);
    for (std::size_t i = 0; i < dy.size(); ++i) gx[i] += dy[i];
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Graph& g = detail::graph_of(parts[0]);
  std::size_t rows = 0, total = 0;
  std::vector<std::size_t> widths, ids;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    detail::require_same_graph(parts[0], parts[p]);
    const Shape& s = g.shape(parts[p]);
    detail::require_rank2(s, "concat_cols");
    if (p == 0) rows = s[0];
    if (s[0] != rows)
      throw DimensionError("concat_cols: row mismatch " + shape_str(g.shape(parts[0])) + " vs " + shape_str(s));
    widths.push_back(s[1]);
    ids.push_back(parts[p].id);
    total += s[1];
  }
  std::vector<double> out(rows * total);
  for (std::size_t i = 0, off = 0; i < parts.size(); off += widths[i], ++i) {
    const auto& v = g.value(parts[i]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(v.data() + r * widths[i], widths[i], out.data() + r * total + off);
  }
  return g.emit("concat_cols", {rows, total}, std::move(out), ids, [rows, total, widths](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    for (std::size_t i = 0, off = 0; i < widths.size(); off += widths[i], ++i) {
      if (!gr.requires_grad(node.inputs[i])) continue;
      auto& gx = gr.grad_buffer(node.inputs[i]);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < widths[i]; ++j) gx[r * widths[i] + j] += dy[r * total + off + j];
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_cols(Var x, std::size_t begin, std::size_t width) {
  Graph& g = detail::graph_of(x);
  const Shape sx = g.shape(x);
  detail::require_rank2(sx, "slice_cols");
  if (width == 0 || begin + width > sx[1])
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + width) +
                         ") out of range for " + shape_str(sx));
  const std::size_t rows = sx[0], n = sx[1];
  const auto& v = g.value(x);
  std::vector<double> out(rows * width);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * n + begin, width, out.data() + r * width);
  return g.emit("slice_cols", {rows, width}, std::move(out), {x.id}, [rows, n, begin, width](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    auto& gx = gr.grad_buffer(node.inputs[0]);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < width; ++j) gx[r * n + begin + j] += dy[r * width + j];
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Graph& g = detail::graph_of(parts[0]);
  const std::size_t cols = g.shape(parts[0]).back();
  std::vector<double> out;
  std::vector<std::size_t> ids, sizes;
  for (Var p : parts) {
    detail::require_same_graph(parts[0], p);
    const Shape& s = g.shape(p);
    detail::require_rank2(s, "concat_rows");
    if (s[1] != cols) throw DimensionError("concat_rows: column mismatch " + shape_str(s));
    out.insert(out.end(), g.value(p).begin(), g.value(p).end());
    ids.push_back(p.id);
    sizes.push_back(g.value(p).size());
  }
  const std::size_t rows = out.size() / cols;
  return g.emit("concat_rows", {rows, cols}, std::move(out), ids, [sizes](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); off += sizes[i], ++i) {
      if (!gr.requires_grad(node.inputs[i])) continue;
      auto& gx = gr.grad_buffer(node.inputs[i]);
      for (std::size_t j = 0; j < sizes[i]; ++j) gx[j] += dy[off + j];
    }
  });
}

// out row r = x row index[r]; backward scatter-adds.
inline Var gather_rows(Var x, std::vector<std::size_t> index) {
  Graph& g = detail::graph_of(x);
  const Shape sx = g.shape(x);
  detail::require_rank2(sx, "gather_rows");
  const std::size_t n = sx[1];
  const auto& v = g.value(x);
  std::vector<double> out(index.size() * n);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= sx[0]) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(v.data() + index[r] * n, n, out.data() + r * n);
  }
  const std::size_t rows = index.size();
  return g.emit("gather_rows", {rows, n}, std::move(out), {x.id}, [n, index = std::move(index)](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    auto& gx = gr.grad_buffer(node.inputs[0]);
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t j = 0; j < n; ++j) gx[index[r] * n + j] += dy[r * n + j];
  });
}

// View x as blocks of `perm.size()` elements; out[blk][i] = x[blk][perm[i]].
inline Var permute_within_blocks(Var x, std::vector<std::size_t> perm) {
  Graph& g = detail::graph_of(x);
  const auto& v = g.value(x);
  const std::size_t block = perm.size();
  if (block == 0 || v.size() % block != 0)
    throw DimensionError("permute_within_blocks: block size does not divide " + shape_str(g.shape(x)));
  for (std::size_t p : perm)
    if (p >= block) throw ContractError("permute_within_blocks: index out of range");
  std::vector<double> out(v.size());
  const std::size_t nblk = v.size() / block;
  for (std::size_t b = 0; b < nblk; ++b)
    for (std::size_t i = 0; i < block; ++i) out[b * block + i] = v[b * block + perm[i]];
  return g.emit("permute_within_blocks", g.shape(x), std::move(out), {x.id},
                [nblk, perm = std::move(perm)](Graph& gr, std::size_t self) {
                  const auto& node = gr.node(self);
                  const auto& dy = node.grad;
                  auto& gx = gr.grad_buffer(node.inputs[0]);
                  const std::size_t blk = perm.size();
                  for (std::size_t b = 0; b < nblk; ++b)
                    for (std::size_t i = 0; i < blk; ++i) gx[b * blk + perm[i]] += dy[b * blk + i];
                });
}

// Mean-pooled embedding lookup: out row r = mean of table rows in bags[r];
// an empty bag yields a zero row.
inline Var embedding_bag(Var table, const std::vector<std::vector<std::uint32_t>>& bags) {
  Graph& g = detail::graph_of(table);
  const Shape st = g.shape(table);
  detail::require_rank2(st, "embedding_bag");
  const std::size_t vocab = st[0], d = st[1];
  const auto& t = g.value(table);
  std::vector<double> out(bags.size() * d, 0.0);
  for (std::size_t r = 0; r < bags.size(); ++r) {
    if (bags[r].empty()) continue;
    double* o = out.data() + r * d;
    for (std::uint32_t idx : bags[r]) {
      if (idx >= vocab) throw DimensionError("embedding_bag: row index out of range");
      const double* row = t.data() + static_cast<std::size_t>(idx) * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += row[j];
    }
    const double inv = 1.0 / static_cast<double>(bags[r].size());
    for (std::size_t j = 0; j < d; ++j) o[j] *= inv;
  }
  return g.emit("embedding_bag", {bags.size(), d}, std::move(out), {table.id}, [d, bags](Graph& gr, std::size_t self) {
    const auto& node = gr.node(self);
    const auto& dy = node.grad;
    auto& gt = gr.grad_buffer(node.inputs[0]);
    for (std::size_t r = 0; r < bags.size(); ++r) {
      if (bags[r].empty()) continue;
      const double inv = 1.0 / static_cast<double>(bags[r].size());
      for (std::uint32_t idx : bags[r])
        for (std::size_t j = 0; j < d; ++j) gt[static_cast<std::size_t>(idx) * d + j] += dy[r * d + j] * inv;
    }
  });
}

}  // namespace cvr
