#include <doctest.h>

#include "../support.hpp"
#include "toflow/dynamics.hpp"
#include "toflow/errors.hpp"

using namespace toflow;
using namespace toflow::testing;

TEST_SUITE("autodiff") {

TEST_CASE("add of two rows") {
  ad::Tape t;
  const ad::Var y = ad::add(t, t.leaf(Tensor::row({1, 2})), t.leaf(Tensor::row({3, 4})));
  CHECK(t.value(y) == Tensor::row({4, 6}));
}

TEST_CASE("matmul by identity returns the operand") {
  ad::Tape t;
  const Tensor v = Tensor::column({1.5, -2.0});
  const ad::Var y = ad::matmul(t, t.leaf(Tensor::identity(2)), t.leaf(v));
  CHECK(t.value(y) == v);
}

TEST_CASE("tanh at zero: value 0, local partial 1") {
  ad::Tape t;
  const ad::Var y = ad::tanh(t, t.leaf(Tensor::row({0.0})));
  CHECK(t.value(y)[0] == 0.0);
  CHECK(t.local_partial(y, 0)[0] == 1.0);
}

TEST_CASE("shape mismatch names the op") {
  ad::Tape t;
  const ad::Var a = t.leaf(Tensor(2, 3));
  const ad::Var b = t.leaf(Tensor(2, 2));
  CHECK_THROWS_AS(ad::add(t, a, b), ShapeError);
  try {
    ad::matmul(t, a, a);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
  }
}

TEST_CASE("gradient of sum of squares") {
  ad::Tape t;
  const ad::Var x = t.leaf(Tensor::row({1, 2, 3}));
  const ad::Var l = ad::sum(t, ad::mul(t, x, x));
  const ad::Var wrt[] = {x};
  CHECK(ad::backward(t, l, wrt)[x] == Tensor::row({2, 4, 6}));
}

TEST_CASE("tanh(w . x) at w = 0 has gradient x") {
  ad::Tape t;
  const Tensor xv = Tensor::row({0.3, -1.2, 2.0});
  const ad::Var w = t.leaf(Tensor(1, 3));
  const ad::Var l = ad::tanh(t, ad::dot(t, w, t.leaf(xv)));
  const ad::Var wrt[] = {w};
  CHECK(ad::backward(t, l, wrt)[w] == xv);
}

TEST_CASE("backward rejects a root that is not on the tape") {
  ad::Tape t;
  const ad::Var x = t.leaf(Tensor::scalar(1.0));
  ad::Tape other;
  const ad::Var y = ad::sum(other, other.leaf(Tensor::scalar(2.0)));
  const ad::Var wrt[] = {x};
  CHECK_THROWS(ad::backward(t, ad::Var{y.id + 10}, wrt));
}

TEST_CASE("unreachable leaves receive zero gradients") {
  ad::Tape t;
  const ad::Var x = t.leaf(Tensor::row({1, 2}));
  const ad::Var z = t.leaf(Tensor::row({5, 6}));
  const ad::Var l = ad::sum(t, x);
  const ad::Var wrt[] = {x, z};
  const auto g = ad::backward(t, l, wrt);
  CHECK(g[z] == Tensor(1, 2));
  CHECK(g.size() == 2);
}

TEST_CASE("grad_check: squared norm") {
  Rng rng(3);
  const auto f = [](ad::Tape& t, ad::Var x) { return ad::dot(t, x, x); };
  const auto r = ad::grad_check(f, uniform_tensor(rng, 2, 5), 1e-6, 1e-7);
  CHECK(r.all_passed);
  CHECK(r.max_rel_error < 1e-7);
}

TEST_CASE("grad_check: constant function") {
  const auto f = [](ad::Tape& t, ad::Var) { return t.leaf(Tensor::scalar(4.0)); };
  const auto r = ad::grad_check(f, Tensor::row({1, 2, 3}), 1e-6, 1e-7);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.reverse[i] == 0.0);
    CHECK(r.central[i] == 0.0);
  }
}

TEST_CASE("grad_check: dynamics net output sum over parameters") {
  const DynamicsNet net = DynamicsNet::initialized(2, 8, 2, 11);
  Rng rng(5);
  const Tensor z = uniform_tensor(rng, 4, 2);
  // Differentiate w.r.t. the first hidden layer weight.
  const Tensor w0 = *net.parameters()[0];
  const auto f = [&](ad::Tape& t, ad::Var w) {
    BoundNet b = bind(t, net);
    b.params[0] = w;
    return ad::sum(t, forward(t, b, t.leaf(z), 0.3, false).output);
  };
  const auto r = ad::grad_check(f, w0, 1e-6, 1e-5);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("random compositions match central differences") {
  Rng rng(2024);
  double worst = 0.0;
  for (int k = 0; k < 25; ++k) {
    const RandomComposition f = random_composition(rng);
    const auto r = ad::grad_check(f, uniform_tensor(rng, 3, 4), 1e-6, 1e-5);
    worst = std::max(worst, r.max_rel_error);
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("backward is linear in the seed") {
  Rng rng(8);
  const Tensor xv = uniform_tensor(rng, 3, 4);
  ad::Tape t;
  const ad::Var x = t.leaf(xv);
  const ad::Var y = ad::tanh(t, ad::matmul(t, x, t.leaf(uniform_tensor(rng, 4, 4))));
  const Tensor s = uniform_tensor(rng, 3, 4);
  Tensor s2 = s;
  s2 *= 2.0;
  const ad::Var wrt[] = {x};
  const Tensor g1 = ad::backward(t, y, s, wrt)[x];
  const Tensor g2 = ad::backward(t, y, s2, wrt)[x];
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK(g2[i] == doctest::Approx(2.0 * g1[i]).epsilon(1e-14));
}

TEST_CASE("replaying an identical tape gives bitwise-identical gradients") {
  Rng rng(13);
  const RandomComposition f = random_composition(rng);
  const Tensor xv = uniform_tensor(rng, 3, 4);
  auto run = [&] {
    ad::Tape t;
    const ad::Var x = t.leaf(xv);
    const ad::Var wrt[] = {x};
    return ad::backward(t, f(t, x), wrt)[x];
  };
  CHECK(run() == run());
}

}  // TEST_SUITE
