#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "auxue/diffkit/special.hpp"
#include "auxue/diffkit/tensor.hpp"
#include "auxue/error.hpp"

namespace auxue::ad {

enum class OpKind {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  MatMul,
  MatMulNT,
  Neg,
  Abs,
  Exp,
  Log,
  Pow,
  PowVar,
  Sqrt,
  Relu,
  Softplus,
  Sum,
  Mean,
  Lgamma,
  Digamma,
  Transpose,
  AddRowBroadcast,
  MulColBroadcast,
  RowSum,
  RowNorm,
  ClampMin,
  SliceCols,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::MatMul: return "matmul";
    case OpKind::MatMulNT: return "matmul_nt";
    case OpKind::Neg: return "neg";
    case OpKind::Abs: return "abs";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Pow: return "pow";
    case OpKind::PowVar: return "pow_var";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Relu: return "relu";
    case OpKind::Softplus: return "softplus";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Lgamma: return "lgamma";
    case OpKind::Digamma: return "digamma";
    case OpKind::Transpose: return "transpose";
    case OpKind::AddRowBroadcast: return "add_row_broadcast";
    case OpKind::MulColBroadcast: return "mul_col_broadcast";
    case OpKind::RowSum: return "row_sum";
    case OpKind::RowNorm: return "row_norm";
    case OpKind::ClampMin: return "clamp_min";
    case OpKind::SliceCols: return "slice_cols";
  }
  return "?";
}

struct GradNode;
using NodePtr = std::shared_ptr<GradNode>;

// One vertex of the computation graph. `value` is fixed once the node is
// built; `adjoint` is (re)populated by backward().
struct GradNode {
  OpKind op = OpKind::Constant;
  std::vector<NodePtr> parents;
  Tensor value;
  Tensor adjoint;
  bool requires_grad = false;
  bool has_adjoint = false;
  // Pushes this node's adjoint into its parents' adjoints.
  std::function<void(GradNode&)> propagate;

  // Accumulates `g` into the adjoint (allocating zeros on first touch).
  void accumulate(Tensor g) {
    if (!has_adjoint) {
      adjoint = std::move(g);
      has_adjoint = true;
      return;
    }
    auto dst = adjoint.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
};

// Handle to a graph node. Cheap to copy; copies alias the same node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  OpKind op() const { return node_->op; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const { return node_->value.item(); }

  // Adjoint after backward(); zeros if the node was not reached.
  Tensor grad() const {
    if (node_->has_adjoint) return node_->adjoint;
    return Tensor::zeros(node_->value.shape());
  }

  const NodePtr& node() const { return node_; }
  bool valid() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

// Trainable leaf: gradients are accumulated for it.
inline Var parameter(Tensor value) {
  auto n = std::make_shared<GradNode>();
  n->op = OpKind::Leaf;
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

// Non-trainable input.
inline Var constant(Tensor value) {
  auto n = std::make_shared<GradNode>();
  n->op = OpKind::Constant;
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var constant(double v) { return constant(Tensor::scalar(v)); }

// Cuts the graph: same value, no gradient flows to the source.
inline Var detach(const Var& x) { return constant(x.value()); }

namespace detail {

inline Var make_node(OpKind op, std::vector<Var> parents, Tensor value,
                     std::function<void(GradNode&)> propagate) {
  auto n = std::make_shared<GradNode>();
  n->op = op;
  n->value = std::move(value);
  for (auto& p : parents) {
    n->requires_grad = n->requires_grad || p.requires_grad();
    n->parents.push_back(p.node());
  }
  if (n->requires_grad) n->propagate = std::move(propagate);
  return Var(std::move(n));
}

inline Tensor map(const Tensor& x, const std::function<double(double)>& f) {
  Tensor out = x;
  for (auto& v : out.data()) v = f(v);
  return out;
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(op, to_string(t.shape()), "[rank 2]");
}

// Elementwise binary op with scalar broadcast on either side. The derivative
// functors receive (a, b, out) at one element and return d out / d a or b.
template <class F, class DA, class DB>
Var binary(OpKind op, const Var& a, const Var& b, F f, DA da, DB db) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool a_scalar = av.is_scalar();
  const bool b_scalar = bv.is_scalar();
  if (av.shape() != bv.shape() && !a_scalar && !b_scalar) {
    throw ShapeError(op_name(op), to_string(av.shape()), to_string(bv.shape()));
  }
  const Shape out_shape =
      (av.shape() == bv.shape()) ? av.shape() : (a_scalar ? bv.shape() : av.shape());
  const std::size_t n = element_count(out_shape);
  std::vector<double> out(n);
  const std::size_t sa = (av.size() == n) ? 1 : 0;
  const std::size_t sb = (bv.size() == n) ? 1 : 0;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i * sa], bv[i * sb]);
  return make_node(op, {a, b}, Tensor(out_shape, std::move(out)),
                   [sa, sb, n, da, db](GradNode& self) {
                     const Tensor& g = self.adjoint;
                     const Tensor& x = self.parents[0]->value;
                     const Tensor& y = self.parents[1]->value;
                     if (self.parents[0]->requires_grad) {
                       Tensor ga = Tensor::zeros(x.shape());
                       for (std::size_t i = 0; i < n; ++i) {
                         ga[i * sa] += g[i] * da(x[i * sa], y[i * sb], self.value[i]);
                       }
                       self.parents[0]->accumulate(std::move(ga));
                     }
                     if (self.parents[1]->requires_grad) {
                       Tensor gb = Tensor::zeros(y.shape());
                       for (std::size_t i = 0; i < n; ++i) {
                         gb[i * sb] += g[i] * db(x[i * sa], y[i * sb], self.value[i]);
                       }
                       self.parents[1]->accumulate(std::move(gb));
                     }
                   });
}

// Elementwise unary op; `d` receives (x, out) and returns d out / d x.
template <class F, class D>
Var unary(OpKind op, const Var& a, F f, D d) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = f(v);
  return make_node(op, {a}, std::move(out), [d](GradNode& self) {
    const Tensor& x = self.parents[0]->value;
    Tensor gx = Tensor::uninitialized(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      gx[i] = self.adjoint[i] * d(x[i], self.value[i]);
    }
    self.parents[0]->accumulate(std::move(gx));
  });
}

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

inline ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic.

inline Var add(const Var& a, const Var& b) {
  return detail::binary(
      OpKind::Add, a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary(
      OpKind::Sub, a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary(
      OpKind::Mul, a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Var div(const Var& a, const Var& b) {
  for (double v : b.value().data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return detail::binary(
      OpKind::Div, a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator+(const Var& a, double b) { return add(a, constant(b)); }
inline Var operator+(double a, const Var& b) { return add(constant(a), b); }
inline Var operator-(const Var& a, double b) { return sub(a, constant(b)); }
inline Var operator-(double a, const Var& b) { return sub(constant(a), b); }
inline Var operator*(const Var& a, double b) { return mul(a, constant(b)); }
inline Var operator*(double a, const Var& b) { return mul(constant(a), b); }
inline Var operator/(const Var& a, double b) { return div(a, constant(b)); }
inline Var operator/(double a, const Var& b) { return div(constant(a), b); }

inline Var neg(const Var& a) {
  return detail::unary(
      OpKind::Neg, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Var operator-(const Var& a) { return neg(a); }

inline Var abs(const Var& a) {
  return detail::unary(
      OpKind::Abs, a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var exp(const Var& a) {
  return detail::unary(
      OpKind::Exp, a, [](double x) { return std::exp(x); },
      [](double, double out) { return out; });
}

inline Var log(const Var& a) {
  for (double v : a.value().data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
  }
  return detail::unary(
      OpKind::Log, a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

// x^p for a constant real exponent p.
inline Var pow(const Var& a, double p) {
  const bool integral = std::floor(p) == p;
  for (double v : a.value().data()) {
    if (v < 0.0 && !integral) {
      throw DomainError("pow: negative base with non-integer exponent");
    }
    if (v == 0.0 && p < 1.0 && p != 0.0) {
      throw DomainError("pow: derivative undefined at zero base for exponent < 1");
    }
  }
  return detail::unary(
      OpKind::Pow, a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

// base^exponent with both operands differentiable; base >= 0. At base = 0
// the value is 0 and the exponent's derivative (base^e log base) is taken at
// its limit 0.
inline Var pow(const Var& base, const Var& exponent) {
  for (double v : base.value().data()) {
    if (v < 0.0) throw DomainError("pow: negative base with variable exponent");
  }
  return detail::binary(
      OpKind::PowVar, base, exponent, [](double x, double e) { return std::pow(x, e); },
      [](double x, double e, double) { return x == 0.0 ? 0.0 : e * std::pow(x, e - 1.0); },
      [](double x, double, double out) { return x == 0.0 ? 0.0 : out * std::log(x); });
}

inline Var sqrt(const Var& a) {
  for (double v : a.value().data()) {
    if (v < 0.0) throw DomainError("sqrt: negative argument");
  }
  return detail::unary(
      OpKind::Sqrt, a, [](double x) { return std::sqrt(x); },
      [](double, double out) { return out > 0.0 ? 0.5 / out : 0.0; });
}

inline Var relu(const Var& a) {
  return detail::unary(
      OpKind::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var softplus(const Var& a) {
  return detail::unary(
      OpKind::Softplus, a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

// max(x, floor) elementwise; gradient passes only where x > floor.
inline Var clamp_min(const Var& a, double floor) {
  return detail::unary(
      OpKind::ClampMin, a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

inline Var lgamma(const Var& a) {
  return detail::unary(
      OpKind::Lgamma, a, [](double x) { return special::lgamma(x); },
      [](double x, double) { return special::digamma(x); });
}

inline Var digamma(const Var& a) {
  return detail::unary(
      OpKind::Digamma, a, [](double x) { return special::digamma(x); },
      [](double x, double) { return special::trigamma(x); });
}

// ---------------------------------------------------------------------------
// Reductions.

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make_node(OpKind::Sum, {a}, Tensor::scalar(s), [](GradNode& self) {
    self.parents[0]->accumulate(Tensor::full(self.parents[0]->value.shape(), self.adjoint[0]));
  });
}

inline Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return detail::make_node(OpKind::Mean, {a}, Tensor::scalar(s / n), [n](GradNode& self) {
    self.parents[0]->accumulate(
        Tensor::full(self.parents[0]->value.shape(), self.adjoint[0] / n));
  });
}

// [n x m] -> [n x 1]
inline Var row_sum(const Var& a) {
  const Tensor& x = a.value();
  detail::require_matrix(x, "row_sum");
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) out[r] += x.at(r, c);
  }
  return detail::make_node(OpKind::RowSum, {a}, Tensor::column(std::move(out)),
                           [n, m](GradNode& self) {
                             Tensor g = Tensor::uninitialized({n, m});
                             for (std::size_t r = 0; r < n; ++r) {
                               for (std::size_t c = 0; c < m; ++c) g.at(r, c) = self.adjoint[r];
                             }
                             self.parents[0]->accumulate(std::move(g));
                           });
}

// Euclidean norm of each row: [n x m] -> [n x 1]. Subgradient 0 at a zero row.
inline Var row_norm(const Var& a) {
  const Tensor& x = a.value();
  detail::require_matrix(x, "row_norm");
  const std::size_t n = x.rows(), m = x.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m; ++c) s += x.at(r, c) * x.at(r, c);
    out[r] = std::sqrt(s);
  }
  return detail::make_node(OpKind::RowNorm, {a}, Tensor::column(std::move(out)),
                           [n, m](GradNode& self) {
                             const Tensor& x = self.parents[0]->value;
                             Tensor g = Tensor::zeros({n, m});
                             for (std::size_t r = 0; r < n; ++r) {
                               const double norm = self.value[r];
                               if (norm == 0.0) continue;
                               for (std::size_t c = 0; c < m; ++c) {
                                 g.at(r, c) = self.adjoint[r] * x.at(r, c) / norm;
                               }
                             }
                             self.parents[0]->accumulate(std::move(g));
                           });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout.

inline Var matmul(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::require_matrix(x, "matmul");
  detail::require_matrix(y, "matmul");
  if (x.cols() != y.rows()) {
    throw ShapeError("matmul", to_string(x.shape()), to_string(y.shape()));
  }
  Tensor out = Tensor::uninitialized({x.rows(), y.cols()});
  detail::MutMap(out.data().data(), static_cast<Eigen::Index>(x.rows()),
                 static_cast<Eigen::Index>(y.cols())).noalias() =
      detail::as_matrix(x) * detail::as_matrix(y);
  return detail::make_node(OpKind::MatMul, {a, b}, std::move(out), [](GradNode& self) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& y = self.parents[1]->value;
    const auto g = detail::as_matrix(self.adjoint);
    if (self.parents[0]->requires_grad) {
      Tensor gx = Tensor::uninitialized(x.shape());
      detail::MutMap(gx.data().data(), static_cast<Eigen::Index>(x.rows()),
                     static_cast<Eigen::Index>(x.cols())).noalias() =
          g * detail::as_matrix(y).transpose();
      self.parents[0]->accumulate(std::move(gx));
    }
    if (self.parents[1]->requires_grad) {
      Tensor gy = Tensor::uninitialized(y.shape());
      detail::MutMap(gy.data().data(), static_cast<Eigen::Index>(y.rows()),
                     static_cast<Eigen::Index>(y.cols())).noalias() =
          detail::as_matrix(x).transpose() * g;
      self.parents[1]->accumulate(std::move(gy));
    }
  });
}

// a [n x k] times b^T for b [m x k]; same as matmul(a, transpose(b))
// without materializing the transpose.
inline Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  detail::require_matrix(x, "matmul_nt");
  detail::require_matrix(y, "matmul_nt");
  if (x.cols() != y.cols()) {
    throw ShapeError("matmul_nt", to_string(x.shape()), to_string(y.shape()));
  }
  Tensor out = Tensor::uninitialized({x.rows(), y.rows()});
  detail::MutMap(out.data().data(), static_cast<Eigen::Index>(x.rows()),
                 static_cast<Eigen::Index>(y.rows())).noalias() =
      detail::as_matrix(x) * detail::as_matrix(y).transpose();
  return detail::make_node(OpKind::MatMulNT, {a, b}, std::move(out), [](GradNode& self) {
    const Tensor& x = self.parents[0]->value;
    const Tensor& y = self.parents[1]->value;
    const auto g = detail::as_matrix(self.adjoint);
    if (self.parents[0]->requires_grad) {
      Tensor gx = Tensor::uninitialized(x.shape());
      detail::MutMap(gx.data().data(), static_cast<Eigen::Index>(x.rows()),
                     static_cast<Eigen::Index>(x.cols())).noalias() = g * detail::as_matrix(y);
      self.parents[0]->accumulate(std::move(gx));
    }
    if (self.parents[1]->requires_grad) {
      Tensor gy = Tensor::uninitialized(y.shape());
      detail::MutMap(gy.data().data(), static_cast<Eigen::Index>(y.rows()),
                     static_cast<Eigen::Index>(y.cols())).noalias() =
          g.transpose() * detail::as_matrix(x);
      self.parents[1]->accumulate(std::move(gy));
    }
  });
}

inline Var transpose(const Var& a) {
  const Tensor& x = a.value();
  detail::require_matrix(x, "transpose");
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::uninitialized({m, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < m; ++c) out.at(c, r) = x.at(r, c);
  }
  return detail::make_node(OpKind::Transpose, {a}, std::move(out), [n, m](GradNode& self) {
    Tensor g = Tensor::uninitialized({n, m});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < m; ++c) g.at(r, c) = self.adjoint.at(c, r);
    }
    self.parents[0]->accumulate(std::move(g));
  });
}

// A[n x m] + row[1 x m] added to every row (bias add).
inline Var add_row_broadcast(const Var& a, const Var& row) {
  const Tensor& x = a.value();
  const Tensor& r = row.value();
  detail::require_matrix(x, "add_row_broadcast");
  if (r.size() != x.cols() || (r.rank() == 2 && r.rows() != 1)) {
    throw ShapeError("add_row_broadcast", to_string(x.shape()), to_string(r.shape()));
  }
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < m; ++c) out.at(i, c) += r[c];
  }
  return detail::make_node(OpKind::AddRowBroadcast, {a, row}, std::move(out),
                           [n, m](GradNode& self) {
                             if (self.parents[0]->requires_grad) {
                               self.parents[0]->accumulate(self.adjoint);
                             }
                             if (self.parents[1]->requires_grad) {
                               Tensor g = Tensor::zeros(self.parents[1]->value.shape());
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t c = 0; c < m; ++c) g[c] += self.adjoint.at(i, c);
                               }
                               self.parents[1]->accumulate(std::move(g));
                             }
                           });
}

// A[n x m] with row i scaled by col[i] (col is [n x 1]).
inline Var mul_col_broadcast(const Var& a, const Var& col) {
  const Tensor& x = a.value();
  const Tensor& s = col.value();
  detail::require_matrix(x, "mul_col_broadcast");
  if (s.size() != x.rows() || (s.rank() == 2 && s.cols() != 1)) {
    throw ShapeError("mul_col_broadcast", to_string(x.shape()), to_string(s.shape()));
  }
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < m; ++c) out.at(i, c) *= s[i];
  }
  return detail::make_node(OpKind::MulColBroadcast, {a, col}, std::move(out),
                           [n, m](GradNode& self) {
                             const Tensor& x = self.parents[0]->value;
                             const Tensor& s = self.parents[1]->value;
                             if (self.parents[0]->requires_grad) {
                               Tensor g = Tensor::uninitialized(x.shape());
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t c = 0; c < m; ++c) {
                                   g.at(i, c) = self.adjoint.at(i, c) * s[i];
                                 }
                               }
                               self.parents[0]->accumulate(std::move(g));
                             }
                             if (self.parents[1]->requires_grad) {
                               Tensor g = Tensor::zeros(s.shape());
                               for (std::size_t i = 0; i < n; ++i) {
                                 for (std::size_t c = 0; c < m; ++c) {
                                   g[i] += self.adjoint.at(i, c) * x.at(i, c);
                                 }
                               }
                               self.parents[1]->accumulate(std::move(g));
                             }
                           });
}

// Columns [begin, begin + count) of a matrix.
inline Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  detail::require_matrix(x, "slice_cols");
  if (begin + count > x.cols() || count == 0) {
    throw ShapeError("slice_cols", to_string(x.shape()),
                     "[cols " + std::to_string(begin) + ".." + std::to_string(begin + count) + ")");
  }
  const std::size_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::uninitialized({n, count});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < count; ++c) out.at(i, c) = x.at(i, begin + c);
  }
  return detail::make_node(OpKind::SliceCols, {a}, std::move(out),
                           [n, m, begin, count](GradNode& self) {
                             Tensor g = Tensor::zeros({n, m});
                             for (std::size_t i = 0; i < n; ++i) {
                               for (std::size_t c = 0; c < count; ++c) {
                                 g.at(i, begin + c) = self.adjoint.at(i, c);
                               }
                             }
                             self.parents[0]->accumulate(std::move(g));
                           });
}

// ---------------------------------------------------------------------------
// Reverse pass.

// Adjoints of the trainable leaves reached from a root.
class Gradients {
 public:
  void set(const GradNode* node, Tensor g) { grads_[node] = std::move(g); }

  bool contains(const Var& v) const { return grads_.count(v.node().get()) > 0; }

  // Zeros for leaves the root does not depend on.
  Tensor operator[](const Var& v) const {
    auto it = grads_.find(v.node().get());
    if (it == grads_.end()) return Tensor::zeros(v.shape());
    return it->second;
  }

  // Moves the gradient out (zeros if absent); later lookups see zeros.
  Tensor release(const Var& v) {
    auto it = grads_.find(v.node().get());
    if (it == grads_.end()) return Tensor::zeros(v.shape());
    Tensor g = std::move(it->second);
    grads_.erase(it);
    return g;
  }

  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const GradNode*, Tensor> grads_;
};

// Reverse-topological accumulation from a scalar root. Adjoints of every
// node reachable through differentiable edges are reset and repopulated, so
// calling backward twice on the same graph gives the same result.
inline Gradients backward(const Var& root) {
  if (!root.value().is_scalar()) {
    throw ContractError("backward: root must be scalar, got shape " +
                        to_string(root.shape()));
  }
  std::vector<GradNode*> order;
  std::unordered_set<const GradNode*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<GradNode*, std::size_t>> stack;
  if (root.requires_grad()) stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      GradNode* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (GradNode* n : order) {
    n->has_adjoint = false;
    n->adjoint = Tensor();
  }
  Gradients out;
  if (order.empty()) return out;
  root.node()->adjoint = Tensor::full(root.shape(), 1.0);
  root.node()->has_adjoint = true;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    GradNode* n = *it;
    if (!n->has_adjoint) {
      n->adjoint = Tensor::zeros(n->value.shape());
      n->has_adjoint = true;
    }
    if (n->op == OpKind::Leaf) {
      out.set(n, n->adjoint);
    } else if (n->propagate) {
      n->propagate(*n);
    }
  }
  return out;
}

}  // namespace auxue::ad
