#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "iwprm/tensor.hpp"

namespace iwprm {

enum class Op : uint8_t {
  kLeaf,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kAddScalar,
  kMulScalar,
  kMatVec,        // W[m,n] * x[n] -> [m]
  kTMatVec,       // W[m,n]^T * x[m] -> [n]
  kOuter,         // u[m] (x) v[n] -> [m,n]
  kSum,           // all elements -> scalar
  kBroadcast,     // scalar -> given shape
  kGatherRow,     // E[V,d], row r -> [d]
  kScatterRow,    // v[d] into zeros[V,d] at row r
  kIndex,         // v[n], i -> scalar
  kScatterIndex,  // scalar into zeros[n] at i
  kSigmoid,
  kTanh,
  kRelu,
  kExp,
  kLog,
  kSqrt,
  kSoftplus,
};

// Handle to a tape node.
struct Value {
  int32_t id = -1;
  bool ok() const { return id >= 0; }
};

// One op record. `a` and `b` are upstream node ids (-1 if unused); `scalar`
// and `i0` carry op payload (scalar constants, gather/scatter positions,
// scatter target sizes). The forward result is stored eagerly in `val`.
struct Node {
  Op op = Op::kConstant;
  int32_t a = -1;
  int32_t b = -1;
  double scalar = 0.0;
  int64_t i0 = 0;
  Tensor val;
  bool requires_grad = false;
};

// Append-only reverse-mode tape with eager evaluation.
//
// Nodes are topologically ordered by construction (inputs always have smaller
// ids), so backward is a single reverse sweep. Two adjoint modes share the
// same vjp rules:
//
//   gradients()       adjoints computed with raw tensor arithmetic; cheapest,
//                     used for committed optimizer steps and final
//                     hypergradient extraction.
//   gradients_taped() adjoints emitted as tape nodes, so the gradient itself
//                     is differentiable. Differentiating through one unrolled
//                     optimizer step re-tapes the lower gradient this way and
//                     then runs a second (raw) backward from the meta loss.
//
// Every op kernel validates that its output is finite and throws NumericError
// otherwise, which the training loop surfaces as a numeric failure.
class Tape {
 public:
  Value leaf(Tensor t);
  Value constant(Tensor t);
  Value constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);
  Value div(Value a, Value b);
  Value neg(Value a);
  Value add_scalar(Value a, double c);
  Value mul_scalar(Value a, double c);
  Value matvec(Value w, Value x);
  Value tmatvec(Value w, Value x);
  Value outer(Value u, Value v);
  Value sum(Value a);
  Value broadcast(Value s, Shape shape);
  Value gather_row(Value e, int64_t row);
  Value scatter_row(Value v, int64_t row, int64_t n_rows);
  Value index(Value v, int64_t i);
  Value scatter_index(Value s, int64_t i, int64_t n);
  Value sigmoid(Value a);
  Value tanh_(Value a);
  Value relu(Value a);
  Value exp_(Value a);
  Value log_(Value a);
  Value sqrt_(Value a);
  Value softplus(Value a);

  const Tensor& val(Value v) const { return node(v.id).val; }
  double scalar_value(Value v) const { return node(v.id).val.item(); }
  const Node& node(int32_t id) const { return nodes_[static_cast<size_t>(id)]; }
  size_t size() const { return nodes_.size(); }
  const std::vector<Value>& leaves() const { return leaves_; }
  void reserve(size_t n) { nodes_.reserve(n); }

  // d(loss)/d(w) for each w in wrt; zero tensors for leaves the loss does not
  // reach. Throws if loss is not scalar.
  std::vector<Tensor> gradients(Value loss, std::span<const Value> wrt);

  // Same results as gradients(), but the adjoints are tape nodes and remain
  // differentiable with respect to anything they depend on.
  std::vector<Value> gradients_taped(Value loss, std::span<const Value> wrt);

  // Gradients for every registered leaf, paired with the leaf handle.
  std::vector<std::pair<Value, Tensor>> gradients_all(Value loss);

 private:
  Value push(Node n);
  Value emit(Op op, int32_t a, int32_t b, Tensor out, double scalar = 0.0, int64_t i0 = 0);

  std::vector<Node> nodes_;
  std::vector<Value> leaves_;
};

}  // namespace iwprm
