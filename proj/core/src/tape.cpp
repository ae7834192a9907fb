#include "iwprm/tape.hpp"

#include <cassert>
#include <cmath>
#include <optional>
#include <string>

#include "iwprm/errors.hpp"

namespace iwprm {
namespace {

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string("tape: ") + op + " shape mismatch " + shape_str(a.shape) +
                        " vs " + shape_str(b.shape));
}

void check_finite(const char* op, const Tensor& t) {
  if (!t.all_finite()) {
    throw NumericError(std::string("tape: non-finite output of ") + op);
  }
}

// ---- forward kernels -------------------------------------------------------

Tensor k_add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail("add", a, b);
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor k_sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail("sub", a, b);
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor k_mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail("mul", a, b);
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

Tensor k_div(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_fail("div", a, b);
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] /= b[i];
  return out;
}

Tensor k_neg(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = -v;
  return out;
}

Tensor k_add_scalar(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.data) v += c;
  return out;
}

Tensor k_mul_scalar(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.data) v *= c;
  return out;
}

Tensor k_matvec(const Tensor& w, const Tensor& x) {
  if (w.shape.size() != 2 || x.shape.size() != 1 || w.cols() != x.rows()) shape_fail("matvec", w, x);
  Tensor out = Tensor::zeros({w.rows()});
  const int64_t m = w.rows(), n = w.cols();
  for (int64_t r = 0; r < m; ++r) {
    double acc = 0.0;
    const double* wr = w.data.data() + r * n;
    for (int64_t c = 0; c < n; ++c) acc += wr[c] * x[c];
    out[r] = acc;
  }
  return out;
}

Tensor k_tmatvec(const Tensor& w, const Tensor& x) {
  if (w.shape.size() != 2 || x.shape.size() != 1 || w.rows() != x.rows()) shape_fail("tmatvec", w, x);
  const int64_t m = w.rows(), n = w.cols();
  Tensor out = Tensor::zeros({n});
  for (int64_t r = 0; r < m; ++r) {
    const double* wr = w.data.data() + r * n;
    const double xr = x[r];
    for (int64_t c = 0; c < n; ++c) out[c] += wr[c] * xr;
  }
  return out;
}

Tensor k_outer(const Tensor& u, const Tensor& v) {
  if (u.shape.size() != 1 || v.shape.size() != 1) shape_fail("outer", u, v);
  const int64_t m = u.rows(), n = v.rows();
  Tensor out = Tensor::zeros({m, n});
  for (int64_t r = 0; r < m; ++r) {
    const double ur = u[r];
    double* row = out.data.data() + r * n;
    for (int64_t c = 0; c < n; ++c) row[c] = ur * v[c];
  }
  return out;
}

Tensor k_sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data) acc += v;
  return Tensor::scalar(acc);
}

Tensor k_broadcast(const Tensor& s, const Shape& shape) { return Tensor::full(shape, s.item()); }

Tensor k_gather_row(const Tensor& e, int64_t row) {
  if (e.shape.size() != 2 || row < 0 || row >= e.rows()) {
    throw ValidationError("tape: gather_row index " + std::to_string(row) + " out of range for " +
                          shape_str(e.shape));
  }
  const int64_t d = e.cols();
  Tensor out = Tensor::zeros({d});
  const double* src = e.data.data() + row * d;
  for (int64_t i = 0; i < d; ++i) out[i] = src[i];
  return out;
}

Tensor k_scatter_row(const Tensor& v, int64_t row, int64_t n_rows) {
  if (v.shape.size() != 1 || row < 0 || row >= n_rows) {
    throw ValidationError("tape: scatter_row index out of range");
  }
  const int64_t d = v.rows();
  Tensor out = Tensor::zeros({n_rows, d});
  double* dst = out.data.data() + row * d;
  for (int64_t i = 0; i < d; ++i) dst[i] = v[i];
  return out;
}

Tensor k_index(const Tensor& v, int64_t i) {
  if (i < 0 || i >= v.numel()) throw ValidationError("tape: index out of range");
  return Tensor::scalar(v[i]);
}

Tensor k_scatter_index(const Tensor& s, int64_t i, int64_t n) {
  if (i < 0 || i >= n) throw ValidationError("tape: scatter_index out of range");
  Tensor out = Tensor::zeros({n});
  out[i] = s.item();
  return out;
}

double sigmoid1(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor k_sigmoid(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = sigmoid1(v);
  return out;
}

Tensor k_tanh(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = std::tanh(v);
  return out;
}

Tensor k_relu(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor k_relu_mask(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = v > 0.0 ? 1.0 : 0.0;
  return out;
}

Tensor k_exp(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = std::exp(v);
  return out;
}

Tensor k_log(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = std::log(v);
  return out;
}

Tensor k_sqrt(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = std::sqrt(v);
  return out;
}

// max(x,0) + log1p(exp(-|x|)); the stable route for log(1+e^x)
Tensor k_softplus(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = (v > 0.0 ? v : 0.0) + std::log1p(std::exp(-std::abs(v)));
  return out;
}

}  // namespace

// ---- node construction -----------------------------------------------------

Value Tape::push(Node n) {
  assert(n.a < static_cast<int32_t>(nodes_.size()) && n.b < static_cast<int32_t>(nodes_.size()));
  nodes_.push_back(std::move(n));
  return Value{static_cast<int32_t>(nodes_.size() - 1)};
}

Value Tape::emit(Op op, int32_t a, int32_t b, Tensor out, double scalar, int64_t i0) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  n.scalar = scalar;
  n.i0 = i0;
  n.val = std::move(out);
  n.requires_grad = (a >= 0 && node(a).requires_grad) || (b >= 0 && node(b).requires_grad);
  return push(std::move(n));
}

Value Tape::leaf(Tensor t) {
  check_finite("leaf", t);
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(t);
  n.requires_grad = true;
  Value v = push(std::move(n));
  leaves_.push_back(v);
  return v;
}

Value Tape::constant(Tensor t) {
  check_finite("constant", t);
  Node n;
  n.op = Op::kConstant;
  n.val = std::move(t);
  n.requires_grad = false;
  return push(std::move(n));
}

#define IWPRM_EMIT1(NAME, OP, KERNEL)                      \
  Value Tape::NAME(Value a) {                              \
    Tensor out = KERNEL(val(a));                           \
    check_finite(#NAME, out);                              \
    return emit(OP, a.id, -1, std::move(out));             \
  }

#define IWPRM_EMIT2(NAME, OP, KERNEL)                      \
  Value Tape::NAME(Value a, Value b) {                     \
    Tensor out = KERNEL(val(a), val(b));                   \
    check_finite(#NAME, out);                              \
    return emit(OP, a.id, b.id, std::move(out));           \
  }

IWPRM_EMIT2(add, Op::kAdd, k_add)
IWPRM_EMIT2(sub, Op::kSub, k_sub)
IWPRM_EMIT2(mul, Op::kMul, k_mul)
IWPRM_EMIT2(div, Op::kDiv, k_div)
IWPRM_EMIT1(neg, Op::kNeg, k_neg)
IWPRM_EMIT2(matvec, Op::kMatVec, k_matvec)
IWPRM_EMIT2(tmatvec, Op::kTMatVec, k_tmatvec)
IWPRM_EMIT2(outer, Op::kOuter, k_outer)
IWPRM_EMIT1(sum, Op::kSum, k_sum)
IWPRM_EMIT1(sigmoid, Op::kSigmoid, k_sigmoid)
IWPRM_EMIT1(tanh_, Op::kTanh, k_tanh)
IWPRM_EMIT1(relu, Op::kRelu, k_relu)
IWPRM_EMIT1(exp_, Op::kExp, k_exp)
IWPRM_EMIT1(log_, Op::kLog, k_log)
IWPRM_EMIT1(sqrt_, Op::kSqrt, k_sqrt)
IWPRM_EMIT1(softplus, Op::kSoftplus, k_softplus)

#undef IWPRM_EMIT1
#undef IWPRM_EMIT2

Value Tape::add_scalar(Value a, double c) {
  Tensor out = k_add_scalar(val(a), c);
  check_finite("add_scalar", out);
  return emit(Op::kAddScalar, a.id, -1, std::move(out), c);
}

Value Tape::mul_scalar(Value a, double c) {
  Tensor out = k_mul_scalar(val(a), c);
  check_finite("mul_scalar", out);
  return emit(Op::kMulScalar, a.id, -1, std::move(out), c);
}

Value Tape::broadcast(Value s, Shape shape) {
  Tensor out = k_broadcast(val(s), shape);
  check_finite("broadcast", out);
  return emit(Op::kBroadcast, s.id, -1, std::move(out));
}

Value Tape::gather_row(Value e, int64_t row) {
  Tensor out = k_gather_row(val(e), row);
  return emit(Op::kGatherRow, e.id, -1, std::move(out), 0.0, row);
}

Value Tape::scatter_row(Value v, int64_t row, int64_t n_rows) {
  Tensor out = k_scatter_row(val(v), row, n_rows);
  return emit(Op::kScatterRow, v.id, -1, std::move(out), 0.0, row);
}

Value Tape::index(Value v, int64_t i) {
  Tensor out = k_index(val(v), i);
  return emit(Op::kIndex, v.id, -1, std::move(out), 0.0, i);
}

Value Tape::scatter_index(Value s, int64_t i, int64_t n) {
  Tensor out = k_scatter_index(val(s), i, n);
  return emit(Op::kScatterIndex, s.id, -1, std::move(out), 0.0, i);
}

// ---- backward --------------------------------------------------------------

namespace {

// Adjoint arithmetic over raw tensors.
struct RawAdjoints {
  Tape& t;
  using V = Tensor;

  const Tensor& lift(int32_t id) const { return t.node(id).val; }
  static V add(const V& a, const V& b) { return k_add(a, b); }
  static V neg(const V& a) { return k_neg(a); }
  static V mul(const V& a, const V& b) { return k_mul(a, b); }
  static V div(const V& a, const V& b) { return k_div(a, b); }
  static V mul_scalar(const V& a, double c) { return k_mul_scalar(a, c); }
  static V add_scalar(const V& a, double c) { return k_add_scalar(a, c); }
  static V matvec(const V& w, const V& x) { return k_matvec(w, x); }
  static V tmatvec(const V& w, const V& x) { return k_tmatvec(w, x); }
  static V outer(const V& u, const V& v) { return k_outer(u, v); }
  static V sum(const V& a) { return k_sum(a); }
  static V broadcast(const V& s, const Shape& shape) { return k_broadcast(s, shape); }
  static V gather_row(const V& e, int64_t r) { return k_gather_row(e, r); }
  V scatter_row(const V& v, int64_t r, int32_t src_node) const {
    return k_scatter_row(v, r, t.node(src_node).val.rows());
  }
  static V index(const V& v, int64_t i) { return k_index(v, i); }
  V scatter_index(const V& s, int64_t i, int32_t src_node) const {
    return k_scatter_index(s, i, t.node(src_node).val.numel());
  }
  static V sigmoid(const V& a) { return k_sigmoid(a); }
  V relu_mask(int32_t src_node) const { return k_relu_mask(t.node(src_node).val); }
  static V ones_scalar() { return Tensor::scalar(1.0); }
  static V zeros_like(const Tensor& ref) { return Tensor::zeros(ref.shape); }
};

// Adjoint arithmetic as new tape nodes; gradients stay differentiable.
struct TapedAdjoints {
  Tape& t;
  using V = Value;

  V lift(int32_t id) const { return Value{id}; }
  V add(V a, V b) const { return t.add(a, b); }
  V neg(V a) const { return t.neg(a); }
  V mul(V a, V b) const { return t.mul(a, b); }
  V div(V a, V b) const { return t.div(a, b); }
  V mul_scalar(V a, double c) const { return t.mul_scalar(a, c); }
  V add_scalar(V a, double c) const { return t.add_scalar(a, c); }
  V matvec(V w, V x) const { return t.matvec(w, x); }
  V tmatvec(V w, V x) const { return t.tmatvec(w, x); }
  V outer(V u, V v) const { return t.outer(u, v); }
  V sum(V a) const { return t.sum(a); }
  V broadcast(V s, const Shape& shape) const { return t.broadcast(s, shape); }
  V gather_row(V e, int64_t r) const { return t.gather_row(e, r); }
  V scatter_row(V v, int64_t r, int32_t src_node) const {
    return t.scatter_row(v, r, t.node(src_node).val.rows());
  }
  V index(V v, int64_t i) const { return t.index(v, i); }
  V scatter_index(V s, int64_t i, int32_t src_node) const {
    return t.scatter_index(s, i, t.node(src_node).val.numel());
  }
  V sigmoid(V a) const { return t.sigmoid(a); }
  V relu_mask(int32_t src_node) const { return t.constant(k_relu_mask(t.node(src_node).val)); }
  V ones_scalar() const { return t.constant(Tensor::scalar(1.0)); }
  V zeros_like(const Tensor& ref) const { return t.constant(Tensor::zeros(ref.shape)); }
};

// Single reverse sweep shared by both adjoint modes. Appending nodes during
// the sweep (taped mode) is safe: new ids are larger than `top` and are never
// revisited by this pass.
template <class A>
std::vector<typename A::V> run_backward(Tape& t, Value loss, std::span<const Value> wrt, A adj) {
  using V = typename A::V;
  if (!loss.ok() || t.node(loss.id).val.numel() != 1) {
    throw ValidationError("tape: backward requires a scalar loss");
  }

  const int32_t top = loss.id;
  std::vector<std::optional<V>> grad(static_cast<size_t>(top) + 1);
  grad[static_cast<size_t>(top)] = adj.ones_scalar();

  auto acc = [&](int32_t id, V g) {
    if (id < 0 || !t.node(id).requires_grad) return;
    auto& slot = grad[static_cast<size_t>(id)];
    slot = slot ? adj.add(*slot, std::move(g)) : std::move(g);
  };

  for (int32_t i = top; i >= 0; --i) {
    if (!grad[static_cast<size_t>(i)] || !t.node(i).requires_grad) continue;
    const V& g = *grad[static_cast<size_t>(i)];
    // Copy fields: taped-mode appends may reallocate the node storage.
    const Op op = t.node(i).op;
    const int32_t a = t.node(i).a, b = t.node(i).b;
    const double scalar = t.node(i).scalar;
    const int64_t i0 = t.node(i).i0;

    switch (op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kAdd:
        acc(a, g);
        acc(b, g);
        break;
      case Op::kSub:
        acc(a, g);
        acc(b, adj.neg(g));
        break;
      case Op::kMul:
        acc(a, adj.mul(g, adj.lift(b)));
        acc(b, adj.mul(g, adj.lift(a)));
        break;
      case Op::kDiv:
        // out = a/b: da = g/b, db = -g*out/b
        acc(a, adj.div(g, adj.lift(b)));
        acc(b, adj.neg(adj.div(adj.mul(g, adj.lift(i)), adj.lift(b))));
        break;
      case Op::kNeg:
        acc(a, adj.neg(g));
        break;
      case Op::kAddScalar:
        acc(a, g);
        break;
      case Op::kMulScalar:
        acc(a, adj.mul_scalar(g, scalar));
        break;
      case Op::kMatVec:
        acc(a, adj.outer(g, adj.lift(b)));
        acc(b, adj.tmatvec(adj.lift(a), g));
        break;
      case Op::kTMatVec:
        // out = W^T x: dW = x (x) g, dx = W g
        acc(a, adj.outer(adj.lift(b), g));
        acc(b, adj.matvec(adj.lift(a), g));
        break;
      case Op::kOuter:
        acc(a, adj.matvec(g, adj.lift(b)));
        acc(b, adj.tmatvec(g, adj.lift(a)));
        break;
      case Op::kSum:
        acc(a, adj.broadcast(g, t.node(a).val.shape));
        break;
      case Op::kBroadcast:
        acc(a, adj.sum(g));
        break;
      case Op::kGatherRow:
        acc(a, adj.scatter_row(g, i0, a));
        break;
      case Op::kScatterRow:
        acc(a, adj.gather_row(g, i0));
        break;
      case Op::kIndex:
        acc(a, adj.scatter_index(g, i0, a));
        break;
      case Op::kScatterIndex:
        acc(a, adj.index(g, i0));
        break;
      case Op::kSigmoid: {
        // g * y * (1 - y)
        auto&& y = adj.lift(i);
        acc(a, adj.mul(g, adj.mul(y, adj.add_scalar(adj.neg(y), 1.0))));
        break;
      }
      case Op::kTanh: {
        auto&& y = adj.lift(i);
        acc(a, adj.mul(g, adj.add_scalar(adj.neg(adj.mul(y, y)), 1.0)));
        break;
      }
      case Op::kRelu:
        acc(a, adj.mul(g, adj.relu_mask(a)));
        break;
      case Op::kExp:
        acc(a, adj.mul(g, adj.lift(i)));
        break;
      case Op::kLog:
        acc(a, adj.div(g, adj.lift(a)));
        break;
      case Op::kSqrt:
        acc(a, adj.div(adj.mul_scalar(g, 0.5), adj.lift(i)));
        break;
      case Op::kSoftplus:
        acc(a, adj.mul(g, adj.sigmoid(adj.lift(a))));
        break;
    }
  }

  std::vector<V> out;
  out.reserve(wrt.size());
  for (Value w : wrt) {
    if (w.id <= top && grad[static_cast<size_t>(w.id)]) {
      out.push_back(*grad[static_cast<size_t>(w.id)]);
    } else {
      out.push_back(adj.zeros_like(t.node(w.id).val));
    }
  }
  return out;
}

}  // namespace

std::vector<Tensor> Tape::gradients(Value loss, std::span<const Value> wrt) {
  return run_backward(*this, loss, wrt, RawAdjoints{*this});
}

std::vector<Value> Tape::gradients_taped(Value loss, std::span<const Value> wrt) {
  return run_backward(*this, loss, wrt, TapedAdjoints{*this});
}

std::vector<std::pair<Value, Tensor>> Tape::gradients_all(Value loss) {
  auto grads = gradients(loss, leaves_);
  std::vector<std::pair<Value, Tensor>> out;
  out.reserve(leaves_.size());
  for (size_t i = 0; i < leaves_.size(); ++i) out.emplace_back(leaves_[i], std::move(grads[i]));
  return out;
}

}  // namespace iwprm
