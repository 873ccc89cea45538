#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape is an append-only list of nodes in topological order: every node's
// parents have strictly smaller ids. Operations are free functions that take
// the tape and Var handles and push one node. Local partials are not
// materialized; each op's vector-Jacobian product is computed during the
// reverse sweep from the stored parent values.
//
// Broadcasting is limited to a 1x1 operand against a tensor (add/sub/mul),
// plus the explicit add_rowwise (bias) and broadcast (fill) ops.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "toflow/tensor.hpp"

namespace toflow::ad {

enum class Op : std::uint8_t {
  Leaf,
  MatMul,      // a * b
  MatMulNT,    // a * b^T
  Add,
  Sub,
  Mul,         // elementwise
  Scale,       // c * a
  Shift,       // a + c
  Tanh,
  Sum,         // -> 1x1
  Mean,        // -> 1x1
  Dot,         // <a, b> -> 1x1
  ConcatCols,  // [a | b]
  SliceCols,   // a[:, begin:end]
  AddRowwise,  // a + 1 * row
  RowSum,      // per-row sum -> Bx1
  Broadcast,   // 1x1 -> filled tensor
};

std::string_view op_name(Op op) noexcept;

struct Var {
  static constexpr std::uint32_t kInvalid = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t id = kInvalid;

  bool valid() const noexcept { return id != kInvalid; }
  bool operator==(const Var&) const = default;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  // Input or parameter node. Values must be finite.
  Var leaf(Tensor value);

  const Tensor& value(Var v) const;
  Op op(Var v) const;
  std::span<const Var> parents(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }
  bool contains(Var v) const noexcept { return v.valid() && v.id < nodes_.size(); }
  void clear() noexcept { nodes_.clear(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  // Diagonal of d(node)/d(parent) for elementwise nodes (Add, Sub, Mul,
  // Scale, Shift, Tanh) with same-shape operands. Throws for other ops.
  Tensor local_partial(Var v, std::size_t parent_index) const;

  // Used by the op functions below; not for general callers.
  Var push(Op op, Tensor value, std::initializer_list<Var> parents, double scalar = 0.0,
           std::size_t aux0 = 0, std::size_t aux1 = 0);

  struct Node {
    Op op = Op::Leaf;
    std::uint8_t n_parents = 0;
    Var parent[2];
    double scalar = 0.0;
    std::size_t aux0 = 0;
    std::size_t aux1 = 0;
    Tensor value;
  };
  const Node& node(Var v) const;

 private:
  std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
Var matmul_nt(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double c);
Var shift(Tape& t, Var a, double c);
Var tanh(Tape& t, Var a);
Var sum(Tape& t, Var a);
Var mean(Tape& t, Var a);
Var dot(Tape& t, Var a, Var b);
Var concat_cols(Tape& t, Var a, Var b);
Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end);
Var add_rowwise(Tape& t, Var a, Var row);
Var row_sum(Tape& t, Var a);
Var broadcast(Tape& t, Var scalar, Shape shape);

// Gradients of the requested leaves (or any nodes), one entry per id.
class Gradients {
 public:
  Gradients(std::vector<Var> ids, std::vector<Tensor> grads);

  const Tensor& operator[](Var v) const;
  std::size_t size() const noexcept { return ids_.size(); }
  std::span<const Var> ids() const noexcept { return ids_; }
  std::span<const Tensor> values() const noexcept { return grads_; }
  std::vector<Tensor> take() && { return std::move(grads_); }

 private:
  std::vector<Var> ids_;
  std::vector<Tensor> grads_;
};

struct Seed {
  Var root;
  Tensor cotangent;  // same shape as root's value
};

// Reverse accumulation from one or more seeded roots. Nodes in `wrt` that are
// unreachable from the roots receive zero gradients. Duplicate ids in `wrt`
// are rejected.
Gradients backward(const Tape& tape, std::span<const Seed> seeds, std::span<const Var> wrt);
Gradients backward(const Tape& tape, Var root, const Tensor& seed, std::span<const Var> wrt);
// Scalar root, seed 1.
Gradients backward(const Tape& tape, Var root, std::span<const Var> wrt);

// ============================================================================
// Finite-difference gradient check
// ============================================================================

using ScalarFunction = std::function<Var(Tape&, Var)>;

struct GradCheckReport {
  std::vector<double> reverse;
  std::vector<double> central;
  std::vector<double> rel_error;
  std::vector<bool> passed;
  double max_rel_error = 0.0;
  bool all_passed = true;
};

// Relative error |a - n| / max(|a|, |n|); coordinates where both magnitudes
// are below `abs_floor` are compared absolutely.
double relative_error(double a, double n, double abs_floor = 1e-10) noexcept;

GradCheckReport grad_check(const ScalarFunction& f, const Tensor& point, double h, double tol);

}  // namespace toflow::ad
