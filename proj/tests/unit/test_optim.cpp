#include <doctest.h>

#include "../support.hpp"
#include "toflow/optim.hpp"

using namespace toflow;
using namespace toflow::testing;

TEST_SUITE("optimizers") {

TEST_CASE("one Adam step from a fresh state") {
  AdamState s(AdamConfig{.lr = 1e-2});
  double x[] = {0.0};
  const double g[] = {1.0};
  adam_step(s, x, g);
  CHECK(x[0] == doctest::Approx(-1e-2 / (1.0 + 1e-8)).epsilon(1e-14));
}

TEST_CASE("zero gradients keep parameters constant") {
  AdamState s(AdamConfig{});
  Tensor p = Tensor::row({1.0, -2.0, 3.5});
  const Tensor keep = p;
  Tensor* ps[] = {&p};
  const Tensor g[] = {Tensor(1, 3)};
  for (int i = 0; i < 100; ++i) adam_step(s, ps, g);
  CHECK(p == keep);
}

TEST_CASE("two identical runs are bitwise identical") {
  auto run = [] {
    AdamState s(AdamConfig{});
    Rng rng(4);
    Tensor p = uniform_tensor(rng, 3, 3);
    Tensor* ps[] = {&p};
    for (int i = 0; i < 50; ++i) {
      const Tensor g[] = {uniform_tensor(rng, 3, 3)};
      adam_step(s, ps, g);
    }
    return p;
  };
  CHECK(run() == run());
}

TEST_CASE("converges on a 1-D quadratic") {
  AdamState s(AdamConfig{.lr = 1e-2});
  double x[] = {0.0};
  int steps = 0;
  for (; steps < 10000; ++steps) {
    const double g[] = {2.0 * (x[0] - 3.0)};
    adam_step(s, x, g);
  }
  CHECK(std::abs(x[0] - 3.0) < 1e-4);
}

TEST_CASE("shape mismatch is rejected") {
  AdamState s(AdamConfig{});
  Tensor p(2, 2);
  Tensor* ps[] = {&p};
  const Tensor g[] = {Tensor(2, 3)};
  CHECK_THROWS_AS(adam_step(s, ps, g), ShapeError);
}

TEST_CASE("config validation") {
  AdamConfig c;
  c.beta1 = 1.0;
  CHECK_THROWS_AS(c.validate("optimizer"), ConfigError);
  c = {};
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate("optimizer"), ConfigError);
}

TEST_CASE("clip: norm 10 to threshold 1") {
  std::vector<Tensor> g{Tensor::row({6.0, 8.0})};
  const ClipResult r = clip_global_norm(g, 1.0);
  CHECK(r.pre_norm == 10.0);
  CHECK(r.clipped);
  CHECK(r.clipped_fraction == doctest::Approx(0.9));
  CHECK(global_norm(g) == doctest::Approx(1.0).epsilon(1e-15));
  // direction preserved
  CHECK(g[0][0] / g[0][1] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("clip: below threshold is untouched") {
  std::vector<Tensor> g{Tensor::row({0.3, 0.4})};
  const ClipResult r = clip_global_norm(g, 1.0);
  CHECK(r.pre_norm == doctest::Approx(0.5));
  CHECK_FALSE(r.clipped);
  CHECK(r.clipped_fraction == 0.0);
  CHECK(g[0] == Tensor::row({0.3, 0.4}));
}

TEST_CASE("clip: output norm never exceeds the threshold") {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    std::vector<Tensor> g{uniform_tensor(rng, 4, 5, -50, 50), uniform_tensor(rng, 1, 7, -50, 50)};
    const double thr = 0.1 + (k % 10);
    const Tensor before = g[0];
    clip_global_norm(g, thr);
    CHECK(global_norm(g) <= thr + 1e-12);
    // cosine with the original stays 1
    double dot = 0, n0 = 0, n1 = 0;
    for (std::size_t i = 0; i < before.size(); ++i) {
      dot += before[i] * g[0][i];
      n0 += before[i] * before[i];
      n1 += g[0][i] * g[0][i];
    }
    CHECK(dot / std::sqrt(n0 * n1) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

}  // TEST_SUITE
