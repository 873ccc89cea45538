#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "../support.hpp"
#include "toflow/temporal.hpp"
#include "toflow/toydata.hpp"

using namespace toflow;
using namespace toflow::testing;

namespace {

// Frozen-batch loss at (t0, T) with an exact trace and tight tolerances.
double frozen_loss(const DynamicsNet& net, double t0, double T, const Tensor& x) {
  FlowModel m{net, t0, T, tight_solver(), exact_trace()};
  return log_likelihood(m, x).loss;
}

// Two points whose mean square is 1/e, so L(T) for f = z is minimized at T = 0.5.
Tensor stationary_batch() {
  const double v = std::exp(-0.5);
  return Tensor::column({v, -v});
}

}  // namespace

TEST_SUITE("temporal") {

TEST_CASE("clip identities") {
  CHECK(clip_time(2.5, 0.0, 1.0, 0.1) == 1.9);
  CHECK(clip_time(0.05, 0.0, 1.0, 0.1) == 0.1);
  CHECK(clip_time(0.7, 0.0, 1.0, 0.1) == 0.7);
}

TEST_CASE("clip is idempotent and centred on T0") {
  for (double T0 : {0.5, 1.0, 0.75}) {
    for (double t0 : {0.0, 0.125, 0.25}) {
      for (double eps : {0.0625, 0.125}) {
        if (!(T0 - t0 > eps)) continue;
        TimePolicy p = TimePolicy::temporal(T0, t0, 0.1, eps);
        const auto [lo, hi] = p.clip_bounds();
        CHECK((lo + hi) / 2 == T0);
        for (double T = -1.0; T < 3.0; T += 0.0371) {
          const double c = clip_time(T, t0, T0, eps);
          CHECK(clip_time(c, t0, T0, eps) == c);
          CHECK(c >= lo);
          CHECK(c <= hi);
        }
      }
    }
  }
  // default toy settings
  const auto [lo, hi] = TimePolicy::temporal(0.5).clip_bounds();
  CHECK(lo == 0.1);
  CHECK(hi == 0.9);
  CHECK((lo + hi) / 2 == 0.5);
}

TEST_CASE("temporal regularization and its subgradient") {
  CHECK(temporal_regularization(1.0, 0.1) == 0.1);
  CHECK(temporal_regularization(-2.0, 0.1) == 0.2);
  CHECK(temporal_regularization_subgradient(1.0, 0.1) == 0.1);
  CHECK(temporal_regularization_subgradient(-0.3, 0.1) == -0.1);
  CHECK(temporal_regularization_subgradient(0.0, 0.1) == 0.0);
}

TEST_CASE("zero gradient with alpha = 0 leaves T unchanged") {
  TimePolicy p = TimePolicy::temporal(0.5, 0.0, 0.0, 0.1);
  p.T = 0.63;
  TemporalGrad g;
  step_time(p, g);
  CHECK(p.T == 0.63);
  CHECK(p.time_optimizer.step_count == 1);
}

TEST_CASE("step_time clips after the Adam step") {
  TimePolicy p = TimePolicy::temporal(0.5, 0.0, 0.0, 0.1, AdamConfig{.lr = 1.0});
  p.T = 0.85;
  TemporalGrad g;
  g.dL_dT = -3.0;  // pushes T up by lr
  step_time(p, g);
  CHECK(p.T == 0.9);
  g.dL_dT = 5.0;
  for (int i = 0; i < 5; ++i) step_time(p, g);
  CHECK(p.T == 0.1);
}

TEST_CASE("steer with zero half-width returns T0") {
  TimePolicy p = TimePolicy::steer(0.5, 0.0, 0.0);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) CHECK(sample_steer(p, rng) == 0.5);
}

TEST_CASE("steer draws are uniform on [T0 - b, T0 + b]") {
  const TimePolicy p = TimePolicy::steer(1.0, 0.0, 0.25);
  Rng rng = make_stream(3, Stream::Steer, 0);
  const std::size_t n = 100000;
  std::vector<double> d(n);
  for (auto& v : d) v = sample_steer(p, rng);
  CHECK(*std::min_element(d.begin(), d.end()) >= 0.75);
  CHECK(*std::max_element(d.begin(), d.end()) <= 1.25);
  double mean = 0;
  for (double v : d) mean += v;
  mean /= n;
  const double sd = 0.5 / std::sqrt(12.0);
  CHECK(std::abs(mean - 1.0) < 3 * sd / std::sqrt(double(n)));
  std::sort(d.begin(), d.end());
  double ks = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double F = (d[i] - 0.75) / 0.5;
    ks = std::max({ks, std::abs(F - double(i) / n), std::abs(double(i + 1) / n - F)});
  }
  CHECK(ks < 1.6276 / std::sqrt(double(n)));
}

TEST_CASE("steer half-width default and validation") {
  CHECK(TimePolicy::steer(0.5).steer_half_width == 0.25);
  CHECK_THROWS_AS(TimePolicy::steer(0.5, 0.0, 0.6).validate(), ConfigError);
}

TEST_CASE("zero net has zero dL/dT") {
  FlowModel m{DynamicsNet(2, 8, 2), 0.0, 0.5, {}, exact_trace()};
  Rng rng(1);
  const TemporalGrad g = temporal_gradient(m, uniform_tensor(rng, 16, 2), false);
  CHECK(g.dL_dT == 0.0);
  CHECK(g.endpoint_term == 0.0);
  CHECK(g.trace_term == 0.0);
}

TEST_CASE("1-D linear flow: dL/dT matches the closed form") {
  const double a = 0.7, t0 = 0.0, T = 0.5;
  Rng rng(2);
  const Tensor x = uniform_tensor(rng, 64, 1, -2, 2);
  FlowModel m{DynamicsNet::linear(Tensor::scalar(a)), t0, T, tight_solver(), exact_trace()};
  const TemporalGrad g = temporal_gradient(m, x, true);
  CHECK(ad::relative_error(g.dL_dT, linear_flow_dL_dT(a, t0, T, x)) < 1e-4);
  // dL/dt0 = -dL/dT for a time-invariant field
  REQUIRE(g.dL_dt0.has_value());
  CHECK(ad::relative_error(*g.dL_dt0, -linear_flow_dL_dT(a, t0, T, x)) < 1e-4);
  // and the loss itself
  CHECK(log_likelihood(m, x).loss == doctest::Approx(linear_flow_loss(a, t0, T, x)).epsilon(1e-7));
}

TEST_CASE("assembly identity holds bitwise") {
  FlowModel m{DynamicsNet::initialized(2, 16, 2, 3), 0.0, 0.5, {}, {}};
  m.trace.probe_seed = 5;
  Rng rng(3);
  const TemporalGrad g = temporal_gradient(m, uniform_tensor(rng, 32, 2, -2, 2), false);
  CHECK(g.dL_dT == -g.endpoint_term - g.trace_term);
  CHECK(g.nfe > 0);
}

TEST_CASE("random net: dL/dT and dL/dt0 match frozen-batch differences") {
  const DynamicsNet net = DynamicsNet::initialized(2, 16, 2, 42);
  const Tensor x = sample_batch({Dataset::EightGaussians, 1, 128}, 0);
  const double t0 = 0.0, T = 0.5, h = 1e-4;
  FlowModel m{net, t0, T, tight_solver(), exact_trace()};
  const TemporalGrad g = temporal_gradient(m, x, true);
  const double fd_T = (frozen_loss(net, t0, T + h, x) - frozen_loss(net, t0, T - h, x)) / (2 * h);
  const double fd_t0 = (frozen_loss(net, t0 + h, T, x) - frozen_loss(net, t0 - h, T, x)) / (2 * h);
  CHECK(ad::relative_error(g.dL_dT, fd_T) < 1e-3);
  REQUIRE(g.dL_dt0.has_value());
  CHECK(ad::relative_error(*g.dL_dt0, fd_t0) < 1e-3);
}

TEST_CASE("alpha = 0: iterated time steps converge from both sides") {
  const Tensor x = stationary_batch();
  FlowModel m{DynamicsNet::linear(Tensor::scalar(1.0)), 0.0, 0.5, tight_solver(1e-7), exact_trace()};
  CHECK(std::abs(linear_flow_dL_dT(1.0, 0.0, 0.5, x)) < 1e-12);
  for (double start : {0.2, 0.9}) {
    TimePolicy p = TimePolicy::temporal(1.0, 0.0, 0.0, 0.01);
    p.T = start;
    for (int k = 0; k < 1500; ++k) {
      m.T = p.T;
      step_time(p, temporal_gradient(m, x, false));
    }
    CHECK(std::abs(p.T - 0.5) < 0.03);
  }
}

TEST_CASE("optimize_t0 keeps the clip interval valid") {
  TimePolicy p = TimePolicy::temporal(0.5, 0.0, 0.1, 0.1, AdamConfig{.lr = 0.5}, true);
  TemporalGrad g;
  g.dL_dT = 1.0;
  g.dL_dt0 = -10.0;  // drives t0 upward hard
  for (int i = 0; i < 20; ++i) {
    step_time(p, g);
    const auto [lo, hi] = p.clip_bounds();
    CHECK(lo <= hi);
    CHECK(p.T >= lo);
    CHECK(p.T <= hi);
  }
  CHECK(p.t0 <= 0.5 - 0.1);
}

TEST_CASE("step_weights: exact stationary point leaves weights unchanged") {
  FlowModel m{DynamicsNet(2, 8, 2), 0.0, 0.5, {}, exact_trace()};
  const DynamicsNet before = m.net;
  AdamState opt(AdamConfig{});
  const Tensor x = Tensor::from_rows({{0.5, -1.0}, {-0.5, 1.0}});
  const WeightStep s = step_weights(m, x, opt, 10.0);
  CHECK(s.clip.pre_norm == 0.0);
  CHECK(m.net == before);
}

TEST_CASE("step_weights: loss decreases over 50 iterations on 8gaussians") {
  FlowModel m{DynamicsNet::initialized(2, 32, 2, 1), 0.0, 0.5, {}, {}};
  AdamState opt(AdamConfig{.lr = 1e-2});
  double first = 0, last = 0;
  for (std::size_t it = 0; it < 50; ++it) {
    m.trace.probe_seed = it;
    const WeightStep s = step_weights(m, sample_batch({Dataset::EightGaussians, 0, 256}, it), opt, 10.0);
    if (it < 10) first += s.loss;
    if (it >= 40) last += s.loss;
  }
  CHECK(last < first);
}

TEST_CASE("step_weights: a solver failure leaves the weights untouched") {
  FlowModel m{DynamicsNet::initialized(2, 16, 2, 2), 0.0, 0.5, {}, {}};
  m.solver.max_steps = 1;
  const DynamicsNet before = m.net;
  AdamState opt(AdamConfig{});
  CHECK_THROWS(step_weights(m, sample_batch({Dataset::Moons, 0, 32}, 0), opt, 10.0));
  CHECK(m.net == before);
  CHECK(opt.step_count == 0);
}

TEST_CASE("policy names") {
  CHECK(parse_policy("temporal") == PolicyKind::TemporalOpt);
  CHECK(parse_policy("steer") == PolicyKind::Steer);
  CHECK(parse_policy("fixed") == PolicyKind::Fixed);
  CHECK_THROWS_AS(parse_policy("bogus"), ConfigError);
}

}  // TEST_SUITE
