#pragma once

// Reverse-mode differentiation over a linear tape of recorded operations.
//
// A Tape owns every value produced while it is active. Operations append a
// node whose inputs always precede it, so the node order is a topological
// order and backward() is a single reverse sweep. Each tape supports exactly
// one backward pass; build a fresh tape for the next step.
//
//   Tape tape;
//   Var x = tape.variable(Tensor::row({1, 2, 3}));
//   Var s = sum(mul(x, x));
//   tape.backward(s);
//   tape.grad(x);  // [2, 4, 6]

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gradxkg/errors.hpp"
#include "gradxkg/tensor.hpp"

namespace gradxkg {

class Tape;

enum class OpKind : std::uint8_t {
  leaf,
  matmul,
  add,
  sub,
  mul,
  relu,
  sigmoid,
  tanh,
  softplus,
  scale,
  shift,
  scale_by,  // tensor times a 1x1 tensor
  sum_all,
  mean_all,
  sum_axis,
  mean_axis,
  reshape,
};

const char* op_name(OpKind kind);

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = std::numeric_limits<std::size_t>::max();

  bool valid() const { return tape != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Tape {
 public:
  struct Node {
    OpKind op = OpKind::leaf;
    std::size_t lhs = npos;
    std::size_t rhs = npos;
    Tensor value;
    double scalar = 0.0;
    std::size_t axis = 0;
    bool requires_grad = false;
  };

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable leaf (parameter or input of interest).
  Var variable(Tensor value) { return push_leaf(std::move(value), true); }
  // Leaf excluded from differentiation (adjacency matrices, selectors).
  Var constant(Tensor value) { return push_leaf(std::move(value), false); }

  // After backward, `target` additionally receives the final gradient of
  // `source`. `target` must be a differentiable leaf; leaves do not propagate,
  // so this exposes a gradient under a second name without double counting.
  void alias_gradient(Var target, Var source);

  Var record(OpKind op, std::size_t lhs, std::size_t rhs, Tensor value, double scalar = 0.0,
             std::size_t axis = 0);

  const Tensor& value(Var v) const { return node(v).value; }
  const Node& node(Var v) const {
    check_owned(v);
    return nodes_[v.id];
  }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  // grads[v] = d root / d v for every differentiable node. Root must be 1x1.
  void backward(Var root);

  // Gradient of the backward root with respect to `v`; zeros when `v` is not
  // an antecedent of the root.
  Tensor grad(Var v) const;
  bool has_grad_entry(Var v) const;

  void reset() {
    nodes_.clear();
    grads_.clear();
    aliases_.clear();
    backward_done_ = false;
  }

 private:
  Var push_leaf(Tensor value, bool requires_grad) {
    kernels::require_finite(value, "leaf");
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  void check_owned(Var v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw DimensionError("value is not on this tape");
  }

  void accumulate(std::size_t id, const Tensor& g) {
    if (id == npos || !nodes_[id].requires_grad) return;
    auto& slot = grads_[id];
    if (!slot) {
      slot = g;
    } else {
      kernels::add_into(*slot, g);
    }
  }

  void propagate(std::size_t id, const Tensor& g);

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  std::vector<std::pair<std::size_t, std::size_t>> aliases_;  // (source, target)
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const {
  if (!tape) throw DimensionError("empty Var");
  return tape->value(*this);
}

inline const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::softplus: return "softplus";
    case OpKind::scale: return "scale";
    case OpKind::shift: return "shift";
    case OpKind::scale_by: return "scale_by";
    case OpKind::sum_all: return "sum";
    case OpKind::mean_all: return "mean";
    case OpKind::sum_axis: return "sum_axis";
    case OpKind::mean_axis: return "mean_axis";
    case OpKind::reshape: return "reshape";
  }
  return "?";
}

inline Var Tape::record(OpKind op, std::size_t lhs, std::size_t rhs, Tensor value, double scalar,
                        std::size_t axis) {
  if (backward_done_) throw std::logic_error("tape already consumed by backward; reset it first");
  kernels::require_finite(value, op_name(op));
  Node n;
  n.op = op;
  n.lhs = lhs;
  n.rhs = rhs;
  n.value = std::move(value);
  n.scalar = scalar;
  n.axis = axis;
  n.requires_grad = (lhs != npos && nodes_[lhs].requires_grad) ||
                    (rhs != npos && nodes_[rhs].requires_grad);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

inline void Tape::alias_gradient(Var target, Var source) {
  check_owned(target);
  check_owned(source);
  const Node& t = nodes_[target.id];
  if (t.op != OpKind::leaf || !t.requires_grad) {
    throw std::logic_error("alias_gradient target must be a differentiable leaf");
  }
  if (t.value.shape() != nodes_[source.id].value.shape()) {
    throw DimensionError("alias_gradient shape mismatch");
  }
  aliases_.emplace_back(source.id, target.id);
}

inline void Tape::backward(Var root) {
  check_owned(root);
  if (backward_done_) throw std::logic_error("backward already run on this tape");
  if (nodes_[root.id].value.size() != 1) {
    throw DimensionError("backward root must be scalar, got " +
                         shape_string(nodes_[root.id].value.shape()));
  }
  grads_.assign(nodes_.size(), std::nullopt);
  backward_done_ = true;
  if (!nodes_[root.id].requires_grad) return;
  grads_[root.id] = Tensor(nodes_[root.id].value.shape(), 1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    if (!grads_[i]) continue;
    kernels::require_finite(*grads_[i], "backward");
    for (const auto& [src, dst] : aliases_) {
      if (src == i) accumulate(dst, *grads_[i]);
    }
    if (nodes_[i].op != OpKind::leaf) propagate(i, *grads_[i]);
  }
}

inline void Tape::propagate(std::size_t id, const Tensor& g) {
  const Node& n = nodes_[id];
  const auto wants = [&](std::size_t in) { return in != npos && nodes_[in].requires_grad; };
  switch (n.op) {
    case OpKind::leaf:
      break;
    case OpKind::matmul: {
      const Tensor& a = nodes_[n.lhs].value;
      const Tensor& b = nodes_[n.rhs].value;
      if (wants(n.lhs)) accumulate(n.lhs, kernels::matmul_nt(g, b));
      if (wants(n.rhs)) accumulate(n.rhs, kernels::matmul_tn(a, g));
      break;
    }
    case OpKind::add:
      accumulate(n.lhs, g);
      accumulate(n.rhs, g);
      break;
    case OpKind::sub:
      accumulate(n.lhs, g);
      if (wants(n.rhs)) accumulate(n.rhs, kernels::map(g, [](double v) { return -v; }));
      break;
    case OpKind::mul: {
      const Tensor& a = nodes_[n.lhs].value;
      const Tensor& b = nodes_[n.rhs].value;
      if (wants(n.lhs)) accumulate(n.lhs, kernels::zip(g, b, "mul", std::multiplies<>{}));
      if (wants(n.rhs)) accumulate(n.rhs, kernels::zip(g, a, "mul", std::multiplies<>{}));
      break;
    }
    case OpKind::relu: {
      // Subgradient at 0 is 0.
      const Tensor& x = nodes_[n.lhs].value;
      accumulate(n.lhs, kernels::zip(g, x, "relu", [](double gv, double xv) { return xv > 0 ? gv : 0.0; }));
      break;
    }
    case OpKind::sigmoid:
      accumulate(n.lhs, kernels::zip(g, n.value, "sigmoid",
                                     [](double gv, double y) { return gv * y * (1.0 - y); }));
      break;
    case OpKind::tanh:
      accumulate(n.lhs, kernels::zip(g, n.value, "tanh",
                                     [](double gv, double y) { return gv * (1.0 - y * y); }));
      break;
    case OpKind::softplus: {
      const Tensor& x = nodes_[n.lhs].value;
      accumulate(n.lhs, kernels::zip(g, x, "softplus",
                                     [](double gv, double xv) { return gv * kernels::sigmoid(xv); }));
      break;
    }
    case OpKind::scale: {
      const double c = n.scalar;
      accumulate(n.lhs, kernels::map(g, [c](double v) { return v * c; }));
      break;
    }
    case OpKind::shift:
      accumulate(n.lhs, g);
      break;
    case OpKind::scale_by: {
      const Tensor& x = nodes_[n.lhs].value;
      const double c = nodes_[n.rhs].value.item();
      if (wants(n.lhs)) accumulate(n.lhs, kernels::map(g, [c](double v) { return v * c; }));
      if (wants(n.rhs)) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * x[i];
        accumulate(n.rhs, Tensor(nodes_[n.rhs].value.shape(), dot));
      }
      break;
    }
    case OpKind::sum_all:
      accumulate(n.lhs, Tensor(nodes_[n.lhs].value.shape(), g.item()));
      break;
    case OpKind::mean_all: {
      const auto& in = nodes_[n.lhs].value;
      accumulate(n.lhs, Tensor(in.shape(), g.item() / static_cast<double>(in.size())));
      break;
    }
    case OpKind::sum_axis:
      accumulate(n.lhs, kernels::broadcast_axis(g, nodes_[n.lhs].value.shape(), n.axis));
      break;
    case OpKind::mean_axis: {
      const auto& shape = nodes_[n.lhs].value.shape();
      const double inv = 1.0 / static_cast<double>(shape[n.axis]);
      accumulate(n.lhs, kernels::map(kernels::broadcast_axis(g, shape, n.axis),
                                     [inv](double v) { return v * inv; }));
      break;
    }
    case OpKind::reshape:
      accumulate(n.lhs, g.reshaped(nodes_[n.lhs].value.shape()));
      break;
  }
}

inline Tensor Tape::grad(Var v) const {
  check_owned(v);
  if (!backward_done_) throw std::logic_error("grad requested before backward");
  if (grads_[v.id]) return *grads_[v.id];
  return Tensor(nodes_[v.id].value.shape(), 0.0);
}

inline bool Tape::has_grad_entry(Var v) const {
  check_owned(v);
  return backward_done_ && grads_[v.id].has_value();
}

// ---- taped operations ------------------------------------------------------

namespace detail {
inline Tape& same_tape(Var a, Var b) {
  if (!a.tape || a.tape != b.tape) throw DimensionError("operands live on different tapes");
  return *a.tape;
}
}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  return t.record(OpKind::matmul, a.id, b.id, kernels::matmul(a.value(), b.value()));
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  return t.record(OpKind::add, a.id, b.id, kernels::zip(a.value(), b.value(), "add", std::plus<>{}));
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  return t.record(OpKind::sub, a.id, b.id, kernels::zip(a.value(), b.value(), "sub", std::minus<>{}));
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  return t.record(OpKind::mul, a.id, b.id,
                  kernels::zip(a.value(), b.value(), "mul", std::multiplies<>{}));
}

inline Var relu(Var a) {
  return a.tape->record(OpKind::relu, a.id, Tape::npos,
                        kernels::map(a.value(), [](double v) { return v > 0 ? v : 0.0; }));
}

inline Var sigmoid(Var a) {
  return a.tape->record(OpKind::sigmoid, a.id, Tape::npos,
                        kernels::map(a.value(), [](double v) { return kernels::sigmoid(v); }));
}

inline Var tanh(Var a) {
  return a.tape->record(OpKind::tanh, a.id, Tape::npos,
                        kernels::map(a.value(), [](double v) { return std::tanh(v); }));
}

inline Var softplus(Var a) {
  return a.tape->record(OpKind::softplus, a.id, Tape::npos,
                        kernels::map(a.value(), [](double v) { return kernels::softplus(v); }));
}

inline Var scale(Var a, double c) {
  return a.tape->record(OpKind::scale, a.id, Tape::npos,
                        kernels::map(a.value(), [c](double v) { return v * c; }), c);
}

// a + c elementwise.
inline Var shift(Var a, double c) {
  return a.tape->record(OpKind::shift, a.id, Tape::npos,
                        kernels::map(a.value(), [c](double v) { return v + c; }), c);
}

inline Var scale_by(Var a, Var c) {
  Tape& t = detail::same_tape(a, c);
  const double cv = c.value().item();
  return t.record(OpKind::scale_by, a.id, c.id, kernels::map(a.value(), [cv](double v) { return v * cv; }));
}

inline Var sum(Var a) {
  const auto& v = a.value().data();
  double acc = 0.0;
  for (double x : v) acc += x;
  return a.tape->record(OpKind::sum_all, a.id, Tape::npos, Tensor::scalar(acc));
}

inline Var mean(Var a) {
  const auto& v = a.value().data();
  double acc = 0.0;
  for (double x : v) acc += x;
  return a.tape->record(OpKind::mean_all, a.id, Tape::npos,
                        Tensor::scalar(acc / static_cast<double>(v.size())));
}

// Reductions keep the reduced axis with extent 1.
inline Var sum(Var a, std::size_t axis) {
  return a.tape->record(OpKind::sum_axis, a.id, Tape::npos, kernels::sum_axis(a.value(), axis), 0.0, axis);
}

inline Var mean(Var a, std::size_t axis) {
  Tensor s = kernels::sum_axis(a.value(), axis);
  const double inv = 1.0 / static_cast<double>(a.shape()[axis]);
  for (auto& v : s.data()) v *= inv;
  return a.tape->record(OpKind::mean_axis, a.id, Tape::npos, std::move(s), 0.0, axis);
}

inline Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) throw DimensionError("reshape: size mismatch");
  return a.tape->record(OpKind::reshape, a.id, Tape::npos, a.value().reshaped(std::move(shape)));
}

// ---- element-wise dispatch by kind -----------------------------------------

enum class EwiseKind { add, sub, mul, relu, sigmoid, scale };

inline Var ewise(EwiseKind kind, Var a, std::optional<Var> b = std::nullopt, double c = 0.0) {
  const auto need_b = [&]() -> Var {
    if (!b) throw DimensionError("binary element-wise op requires a second operand");
    return *b;
  };
  switch (kind) {
    case EwiseKind::add: return b ? add(a, *b) : shift(a, c);
    case EwiseKind::sub: return b ? sub(a, *b) : shift(a, -c);
    case EwiseKind::mul: return mul(a, need_b());
    case EwiseKind::relu: return relu(a);
    case EwiseKind::sigmoid: return sigmoid(a);
    case EwiseKind::scale: return scale(a, c);
  }
  return a;
}

// ---- finite-difference verification ----------------------------------------

// Builds a scalar on `tape` from the differentiable input `x`.
using TapedScalarFn = std::function<Var(Tape&, Var)>;

inline double evaluate_scalar(const TapedScalarFn& f, const Tensor& x) {
  Tape tape;
  Var out = f(tape, tape.constant(x));
  const double v = out.value().item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
  return v;
}

inline Tensor analytic_gradient(const TapedScalarFn& f, const Tensor& x) {
  Tape tape;
  Var xv = tape.variable(x);
  Var out = f(tape, xv);
  if (!std::isfinite(out.value().item())) throw NumericError("finite_diff_check: non-finite function value");
  tape.backward(out);
  return tape.grad(xv);
}

inline Tensor central_difference(const TapedScalarFn& f, const Tensor& x, double eps) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = evaluate_scalar(f, probe);
    probe[i] = orig - eps;
    const double down = evaluate_scalar(f, probe);
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// max_i |analytic_i - fd_i| / (|fd_i| + 1e-12)
inline double finite_diff_check(const TapedScalarFn& f, const Tensor& x, double eps = 1e-5) {
  const Tensor analytic = analytic_gradient(f, x);
  const Tensor numeric = central_difference(f, x, eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / (std::abs(numeric[i]) + 1e-12));
  }
  return worst;
}

}  // namespace gradxkg
