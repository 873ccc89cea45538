#include "toflow/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "toflow/errors.hpp"

namespace toflow::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
MutMap as_matrix(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

auto as_array(const Tensor& t) {
  return Eigen::Map<const Eigen::ArrayXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}
auto as_array(Tensor& t) {
  return Eigen::Map<Eigen::ArrayXd>(t.data(), static_cast<Eigen::Index>(t.size()));
}

[[noreturn]] void shape_error(Op op, Shape a, Shape b) {
  throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

bool is_scalar(Shape s) { return s.rows == 1 && s.cols == 1; }

// a (same shape) or scalar-broadcast b
enum class Bcast { None, Left, Right };

Bcast check_elementwise(Op op, Shape a, Shape b) {
  if (a == b) return Bcast::None;
  if (is_scalar(a)) return Bcast::Left;
  if (is_scalar(b)) return Bcast::Right;
  shape_error(op, a, b);
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::uninitialized(a.rows(), b.cols());
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  return out;
}

Tensor matmul_nt_value(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::uninitialized(a.rows(), b.rows());
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  return out;
}

Tensor matmul_tn_value(const Tensor& a, const Tensor& b) {
  Tensor out = Tensor::uninitialized(a.cols(), b.cols());
  as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
  return out;
}

void accumulate(Tensor& slot, Tensor&& contribution) {
  if (slot.empty()) {
    slot = std::move(contribution);
  } else {
    as_array(slot) += as_array(contribution);
  }
}

void accumulate_scaled(Tensor& slot, const Tensor& g, double s) {
  if (slot.empty()) {
    slot = Tensor::uninitialized(g.rows(), g.cols());
    as_array(slot) = s * as_array(g);
  } else {
    as_array(slot) += s * as_array(g);
  }
}

double sum_of(const Tensor& t) { return as_array(t).sum(); }

}  // namespace

std::string_view op_name(Op op) noexcept {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::MatMul: return "matmul";
    case Op::MatMulNT: return "matmul_nt";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Scale: return "scale";
    case Op::Shift: return "shift";
    case Op::Tanh: return "tanh";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Dot: return "dot";
    case Op::ConcatCols: return "concat_cols";
    case Op::SliceCols: return "slice_cols";
    case Op::AddRowwise: return "add_rowwise";
    case Op::RowSum: return "row_sum";
    case Op::Broadcast: return "broadcast";
  }
  return "?";
}

// ============================================================================
// Tape
// ============================================================================

Var Tape::leaf(Tensor value) { return push(Op::Leaf, std::move(value), {}); }

Var Tape::push(Op op, Tensor value, std::initializer_list<Var> parents, double scalar,
               std::size_t aux0, std::size_t aux1) {
  if (!value.all_finite()) {
    throw NumericalBlowup(std::string("non-finite value produced by ") + std::string(op_name(op)) +
                          " " + to_string(value.shape()));
  }
  Node n;
  n.op = op;
  n.scalar = scalar;
  n.aux0 = aux0;
  n.aux1 = aux1;
  for (Var p : parents) {
    if (!contains(p)) throw Error(std::string(op_name(op)) + ": operand is not on this tape");
    n.parent[n.n_parents++] = p;
  }
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (!contains(v)) throw Error("node is not on this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }
Op Tape::op(Var v) const { return node(v).op; }

std::span<const Var> Tape::parents(Var v) const {
  const Node& n = node(v);
  return {n.parent, n.n_parents};
}

Tensor Tape::local_partial(Var v, std::size_t parent_index) const {
  const Node& n = node(v);
  if (parent_index >= n.n_parents) throw Error("local_partial: parent index out of range");
  const Shape shape = n.value.shape();
  for (std::size_t i = 0; i < n.n_parents; ++i) {
    if (value(n.parent[i]).shape() != shape) {
      throw Error("local_partial: only defined for same-shape elementwise nodes");
    }
  }
  switch (n.op) {
    case Op::Add: return Tensor(shape.rows, shape.cols, 1.0);
    case Op::Sub: return Tensor(shape.rows, shape.cols, parent_index == 0 ? 1.0 : -1.0);
    case Op::Mul: return value(n.parent[1 - parent_index]);
    case Op::Scale: return Tensor(shape.rows, shape.cols, n.scalar);
    case Op::Shift: return Tensor(shape.rows, shape.cols, 1.0);
    case Op::Tanh: {
      Tensor d(shape.rows, shape.cols);
      as_array(d) = 1.0 - as_array(n.value).square();
      return d;
    }
    default:
      throw Error(std::string("local_partial: not an elementwise op: ") + std::string(op_name(n.op)));
  }
}

// ============================================================================
// Operations
// ============================================================================

Var matmul(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.cols() != bv.rows()) shape_error(Op::MatMul, av.shape(), bv.shape());
  return t.push(Op::MatMul, matmul_value(av, bv), {a, b});
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.cols() != bv.cols()) shape_error(Op::MatMulNT, av.shape(), bv.shape());
  return t.push(Op::MatMulNT, matmul_nt_value(av, bv), {a, b});
}

namespace {

template <typename Fn>
Var elementwise(Tape& t, Op op, Var a, Var b, Fn fn) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  const Bcast bc = check_elementwise(op, av.shape(), bv.shape());
  Tensor out;
  switch (bc) {
    case Bcast::None:
      out = Tensor::uninitialized(av.rows(), av.cols());
      as_array(out) = fn(as_array(av), as_array(bv));
      break;
    case Bcast::Left:
      out = Tensor::uninitialized(bv.rows(), bv.cols());
      as_array(out) = fn(Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(bv.size()), av[0]),
                         as_array(bv));
      break;
    case Bcast::Right:
      out = Tensor::uninitialized(av.rows(), av.cols());
      as_array(out) = fn(as_array(av),
                         Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(av.size()), bv[0]));
      break;
  }
  return t.push(op, std::move(out), {a, b});
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  return elementwise(t, Op::Add, a, b, [](const auto& x, const auto& y) { return x + y; });
}

Var sub(Tape& t, Var a, Var b) {
  return elementwise(t, Op::Sub, a, b, [](const auto& x, const auto& y) { return x - y; });
}

Var mul(Tape& t, Var a, Var b) {
  return elementwise(t, Op::Mul, a, b, [](const auto& x, const auto& y) { return x * y; });
}

Var scale(Tape& t, Var a, double c) {
  const Tensor& av = t.value(a);
  Tensor out = Tensor::uninitialized(av.rows(), av.cols());
  as_array(out) = c * as_array(av);
  return t.push(Op::Scale, std::move(out), {a}, c);
}

Var shift(Tape& t, Var a, double c) {
  const Tensor& av = t.value(a);
  Tensor out = Tensor::uninitialized(av.rows(), av.cols());
  as_array(out) = as_array(av) + c;
  return t.push(Op::Shift, std::move(out), {a}, c);
}

Var tanh(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  Tensor out = Tensor::uninitialized(av.rows(), av.cols());
  // 1 - 2/(e^{2x}+1) vectorizes through Eigen's packet exp; exact at 0 and
  // saturates to +-1 without overflow trouble.
  as_array(out) = 1.0 - 2.0 / ((2.0 * as_array(av)).exp() + 1.0);
  return t.push(Op::Tanh, std::move(out), {a});
}

Var sum(Tape& t, Var a) { return t.push(Op::Sum, Tensor::scalar(sum_of(t.value(a))), {a}); }

Var mean(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  if (av.size() == 0) throw ShapeError("mean: empty tensor");
  return t.push(Op::Mean, Tensor::scalar(sum_of(av) / static_cast<double>(av.size())), {a});
}

Var dot(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.shape() != bv.shape()) shape_error(Op::Dot, av.shape(), bv.shape());
  return t.push(Op::Dot, Tensor::scalar((as_array(av) * as_array(bv)).sum()), {a, b});
}

Var concat_cols(Tape& t, Var a, Var b) {
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  if (av.rows() != bv.rows()) shape_error(Op::ConcatCols, av.shape(), bv.shape());
  Tensor out = Tensor::uninitialized(av.rows(), av.cols() + bv.cols());
  auto m = as_matrix(out);
  m.leftCols(static_cast<Eigen::Index>(av.cols())) = as_matrix(av);
  m.rightCols(static_cast<Eigen::Index>(bv.cols())) = as_matrix(bv);
  return t.push(Op::ConcatCols, std::move(out), {a, b});
}

Var slice_cols(Tape& t, Var a, std::size_t begin, std::size_t end) {
  const Tensor& av = t.value(a);
  if (begin >= end || end > av.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + to_string(av.shape()));
  }
  Tensor out = Tensor::uninitialized(av.rows(), end - begin);
  as_matrix(out) = as_matrix(av).middleCols(static_cast<Eigen::Index>(begin),
                                            static_cast<Eigen::Index>(end - begin));
  return t.push(Op::SliceCols, std::move(out), {a}, 0.0, begin, end);
}

Var add_rowwise(Tape& t, Var a, Var row) {
  const Tensor& av = t.value(a);
  const Tensor& rv = t.value(row);
  if (rv.rows() != 1 || rv.cols() != av.cols()) shape_error(Op::AddRowwise, av.shape(), rv.shape());
  Tensor out = Tensor::uninitialized(av.rows(), av.cols());
  as_matrix(out) = as_matrix(av).rowwise() + as_matrix(rv).row(0);
  return t.push(Op::AddRowwise, std::move(out), {a, row});
}

Var row_sum(Tape& t, Var a) {
  const Tensor& av = t.value(a);
  Tensor out = Tensor::uninitialized(av.rows(), 1);
  as_matrix(out) = as_matrix(av).rowwise().sum();
  return t.push(Op::RowSum, std::move(out), {a});
}

Var broadcast(Tape& t, Var s, Shape shape) {
  const Tensor& sv = t.value(s);
  if (!is_scalar(sv.shape())) shape_error(Op::Broadcast, sv.shape(), shape);
  return t.push(Op::Broadcast, Tensor(shape.rows, shape.cols, sv[0]), {s});
}

// ============================================================================
// Reverse sweep
// ============================================================================

Gradients::Gradients(std::vector<Var> ids, std::vector<Tensor> grads)
    : ids_(std::move(ids)), grads_(std::move(grads)) {}

const Tensor& Gradients::operator[](Var v) const {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (ids_[i] == v) return grads_[i];
  }
  throw Error("gradient requested for a node that was not in the wrt list");
}

namespace {

// Propagates the adjoint `g` of node n to its parents.
void propagate(const Tape& tape, const Tape::Node& n, const Tensor& g, std::vector<Tensor>& adj) {
  auto pv = [&](int i) -> const Tensor& { return tape.value(n.parent[i]); };
  auto slot = [&](int i) -> Tensor& { return adj[n.parent[i].id]; };

  switch (n.op) {
    case Op::Leaf:
      break;
    case Op::MatMul: {
      accumulate(slot(0), matmul_nt_value(g, pv(1)));
      accumulate(slot(1), matmul_tn_value(pv(0), g));
      break;
    }
    case Op::MatMulNT: {
      accumulate(slot(0), matmul_value(g, pv(1)));
      accumulate(slot(1), matmul_tn_value(g, pv(0)));
      break;
    }
    case Op::Add:
    case Op::Sub: {
      const double sign_b = n.op == Op::Add ? 1.0 : -1.0;
      const Shape sa = pv(0).shape();
      const Shape sb = pv(1).shape();
      if (sa == n.value.shape()) {
        accumulate_scaled(slot(0), g, 1.0);
      } else {
        accumulate(slot(0), Tensor::scalar(sum_of(g)));
      }
      if (sb == n.value.shape()) {
        accumulate_scaled(slot(1), g, sign_b);
      } else {
        accumulate(slot(1), Tensor::scalar(sign_b * sum_of(g)));
      }
      break;
    }
    case Op::Mul: {
      const Tensor& a = pv(0);
      const Tensor& b = pv(1);
      const Shape out = n.value.shape();
      for (int i = 0; i < 2; ++i) {
        const Tensor& self = i == 0 ? a : b;
        const Tensor& other = i == 0 ? b : a;
        if (self.shape() == out && other.shape() == out) {
          Tensor c(out.rows, out.cols);
          as_array(c) = as_array(g) * as_array(other);
          accumulate(slot(i), std::move(c));
        } else if (self.shape() == out) {
          accumulate_scaled(slot(i), g, other[0]);
        } else {
          const double s = other.shape() == out ? (as_array(g) * as_array(other)).sum()
                                                : sum_of(g) * other[0];
          accumulate(slot(i), Tensor::scalar(s));
        }
      }
      break;
    }
    case Op::Scale:
      accumulate_scaled(slot(0), g, n.scalar);
      break;
    case Op::Shift:
      accumulate_scaled(slot(0), g, 1.0);
      break;
    case Op::Tanh: {
      Tensor c = Tensor::uninitialized(g.rows(), g.cols());
      as_array(c) = as_array(g) * (1.0 - as_array(n.value).square());
      accumulate(slot(0), std::move(c));
      break;
    }
    case Op::Sum: {
      const Shape s = pv(0).shape();
      accumulate(slot(0), Tensor(s.rows, s.cols, g[0]));
      break;
    }
    case Op::Mean: {
      const Shape s = pv(0).shape();
      accumulate(slot(0), Tensor(s.rows, s.cols, g[0] / static_cast<double>(s.size())));
      break;
    }
    case Op::Dot: {
      accumulate_scaled(slot(0), pv(1), g[0]);
      accumulate_scaled(slot(1), pv(0), g[0]);
      break;
    }
    case Op::ConcatCols: {
      const auto ca = static_cast<Eigen::Index>(pv(0).cols());
      const auto cb = static_cast<Eigen::Index>(pv(1).cols());
      Tensor ga = Tensor::uninitialized(g.rows(), pv(0).cols());
      Tensor gb = Tensor::uninitialized(g.rows(), pv(1).cols());
      as_matrix(ga) = as_matrix(g).leftCols(ca);
      as_matrix(gb) = as_matrix(g).rightCols(cb);
      accumulate(slot(0), std::move(ga));
      accumulate(slot(1), std::move(gb));
      break;
    }
    case Op::SliceCols: {
      const Tensor& a = pv(0);
      Tensor ga(a.rows(), a.cols());
      as_matrix(ga).middleCols(static_cast<Eigen::Index>(n.aux0),
                               static_cast<Eigen::Index>(n.aux1 - n.aux0)) = as_matrix(g);
      accumulate(slot(0), std::move(ga));
      break;
    }
    case Op::AddRowwise: {
      accumulate_scaled(slot(0), g, 1.0);
      Tensor gr = Tensor::uninitialized(1, g.cols());
      as_matrix(gr) = as_matrix(g).colwise().sum();
      accumulate(slot(1), std::move(gr));
      break;
    }
    case Op::RowSum: {
      const Tensor& a = pv(0);
      Tensor ga = Tensor::uninitialized(a.rows(), a.cols());
      as_matrix(ga) = as_matrix(g).replicate(1, static_cast<Eigen::Index>(a.cols()));
      accumulate(slot(0), std::move(ga));
      break;
    }
    case Op::Broadcast:
      accumulate(slot(0), Tensor::scalar(sum_of(g)));
      break;
  }
}

}  // namespace

Gradients backward(const Tape& tape, std::span<const Seed> seeds, std::span<const Var> wrt) {
  if (seeds.empty()) throw Error("backward: no seeds");
  std::uint32_t top = 0;
  for (const Seed& s : seeds) {
    if (!tape.contains(s.root)) throw Error("backward: root is not on the tape");
    if (s.cotangent.shape() != tape.value(s.root).shape()) {
      throw ShapeError("backward: seed shape " + to_string(s.cotangent.shape()) +
                       " does not match root " + to_string(tape.value(s.root).shape()));
    }
    top = std::max(top, s.root.id);
  }
  std::vector<char> keep(tape.size(), 0);
  for (Var v : wrt) {
    if (!tape.contains(v)) throw Error("backward: wrt node is not on the tape");
    if (keep[v.id]) throw Error("backward: duplicate wrt id " + std::to_string(v.id));
    keep[v.id] = 1;
  }

  std::vector<Tensor> adj(static_cast<std::size_t>(top) + 1);
  for (const Seed& s : seeds) {
    Tensor copy = s.cotangent;
    accumulate(adj[s.root.id], std::move(copy));
  }

  for (std::int64_t i = top; i >= 0; --i) {
    Tensor& g = adj[static_cast<std::size_t>(i)];
    if (g.empty()) continue;
    const Tape::Node& n = tape.node(Var{static_cast<std::uint32_t>(i)});
    propagate(tape, n, g, adj);
    if (!keep[static_cast<std::size_t>(i)]) g = Tensor();
  }

  std::vector<Var> ids(wrt.begin(), wrt.end());
  std::vector<Tensor> grads;
  grads.reserve(ids.size());
  for (Var v : ids) {
    if (v.id < adj.size() && !adj[v.id].empty()) {
      grads.push_back(std::move(adj[v.id]));
    } else {
      const Shape s = tape.value(v).shape();
      grads.emplace_back(s.rows, s.cols);
    }
  }
  return Gradients(std::move(ids), std::move(grads));
}

Gradients backward(const Tape& tape, Var root, const Tensor& seed, std::span<const Var> wrt) {
  const Seed s{root, seed};
  return backward(tape, std::span<const Seed>(&s, 1), wrt);
}

Gradients backward(const Tape& tape, Var root, std::span<const Var> wrt) {
  const Tensor& v = tape.value(root);
  if (v.size() != 1) {
    throw ShapeError("backward: implicit seed needs a scalar root, got " + to_string(v.shape()));
  }
  return backward(tape, root, Tensor::scalar(1.0), wrt);
}

// ============================================================================
// Gradient check
// ============================================================================

double relative_error(double a, double n, double abs_floor) noexcept {
  const double diff = std::abs(a - n);
  const double mag = std::max(std::abs(a), std::abs(n));
  if (mag < abs_floor) return diff;
  return diff / mag;
}

GradCheckReport grad_check(const ScalarFunction& f, const Tensor& point, double h, double tol) {
  GradCheckReport report;
  {
    Tape tape;
    const Var x = tape.leaf(point);
    const Var y = f(tape, x);
    const Var wrt[] = {x};
    const Tensor g = backward(tape, y, wrt)[x];
    report.reverse.assign(g.values().begin(), g.values().end());
  }
  auto eval_at = [&](const Tensor& p) {
    Tape tape;
    const Var x = tape.leaf(p);
    return tape.value(f(tape, x)).item();
  };
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor plus = point;
    Tensor minus = point;
    plus[i] += h;
    minus[i] -= h;
    const double c = (eval_at(plus) - eval_at(minus)) / (2.0 * h);
    const double e = relative_error(report.reverse[i], c);
    report.central.push_back(c);
    report.rel_error.push_back(e);
    report.passed.push_back(e < tol);
    report.max_rel_error = std::max(report.max_rel_error, e);
    report.all_passed = report.all_passed && e < tol;
  }
  return report;
}

}  // namespace toflow::ad
