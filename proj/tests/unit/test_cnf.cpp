#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "../support.hpp"
#include "toflow/cnf.hpp"
#include "toflow/dynamics.hpp"

using namespace toflow;
using namespace toflow::testing;

namespace {
const Tensor kA = Tensor::from_rows({{1, 2}, {3, 4}});
}

TEST_SUITE("cnf") {

TEST_CASE("exact divergence of linear maps") {
  Rng rng(1);
  const Tensor z = uniform_tensor(rng, 6, 2, -3, 3);
  const Tensor d = divergence_exact(DynamicsNet::linear(kA), z, 0.3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(d[i] == 5.0);
  const Tensor di = divergence_exact(DynamicsNet::linear(Tensor::identity(2)), z, 0.3);
  for (std::size_t i = 0; i < 6; ++i) CHECK(di[i] == 2.0);
}

TEST_CASE("constant field has zero divergence") {
  // depth-0 net with zero weight and a nonzero bias
  std::vector<Layer> ls{{Tensor(2, 3), Tensor::row({0.5, -1.0})}};
  const DynamicsNet net = DynamicsNet::from_layers(ls);
  const Tensor d = divergence_exact(net, Tensor(3, 2, 1.0), 0.0);
  CHECK(d == Tensor(3, 1));
}

TEST_CASE("exact divergence refuses dimensions above the cap") {
  const DynamicsNet net(10, 4, 1);
  CHECK_THROWS_AS(divergence_exact(net, Tensor(1, 10), 0.0, 8), ConfigError);
}

TEST_CASE("Hutchinson on a linear map averages to the trace") {
  const std::size_t n = 100000;
  TraceMode m;
  m.probe_seed = 9;
  const auto probes = draw_probes(m, n, 2);
  const Tensor d = divergence_hutchinson(DynamicsNet::linear(kA), Tensor(n, 2), 0.0, probes);
  const double mean = std::accumulate(d.values().begin(), d.values().end(), 0.0) / n;
  CHECK(std::abs(mean - 5.0) < 0.05);
}

TEST_CASE("Hutchinson is exact per probe in one dimension") {
  TraceMode m;
  m.probe_seed = 3;
  const auto probes = draw_probes(m, 50, 1);
  const Tensor d = divergence_hutchinson(DynamicsNet::linear(Tensor::scalar(-1.7)), Tensor(50, 1), 0.0, probes);
  for (std::size_t i = 0; i < 50; ++i) CHECK(d[i] == -1.7);
}

TEST_CASE("diagonal Jacobian: one Rademacher probe is exact") {
  const DynamicsNet net = DynamicsNet::linear(Tensor::from_rows({{0.5, 0, 0}, {0, -2, 0}, {0, 0, 3}}));
  TraceMode m;
  m.probe_seed = 4;
  const auto probes = draw_probes(m, 20, 3);
  const Tensor d = divergence_hutchinson(net, Tensor(20, 3), 0.0, probes);
  for (std::size_t i = 0; i < 20; ++i) CHECK(d[i] == 1.5);
}

TEST_CASE("Hutchinson is unbiased on a random net") {
  const DynamicsNet net = DynamicsNet::initialized(3, 16, 2, 2);
  const Tensor z = Tensor::row({0.3, -0.2, 0.9});
  const double exact = divergence_exact(net, z, 0.2)[0];
  const std::size_t m = 10000;
  Tensor zs(m, 3);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(z.data(), 3, zs.data() + 3 * i);
  TraceMode mode;
  mode.probe_seed = 77;
  const Tensor d = divergence_hutchinson(net, zs, 0.2, mode);
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < m; ++i) {
    s += d[i];
    s2 += d[i] * d[i];
  }
  const double mean = s / m;
  const double se = std::sqrt((s2 / m - mean * mean) / m);
  CHECK(std::abs(mean - exact) < 3 * se);
}

TEST_CASE("augmented rhs") {
  FlowModel zero{DynamicsNet(2, 8, 2), 0.0, 0.5, {}, exact_trace()};
  const AugmentedState s{Tensor(2, 2, 1.0), Tensor(2, 1)};
  const AugmentedState r0 = augmented_rhs(zero, s, 0.1);
  CHECK(r0.z == Tensor(2, 2));
  CHECK(r0.logp == Tensor(2, 1));

  FlowModel lin{DynamicsNet::linear(kA), 0.0, 0.5, {}, exact_trace()};
  const AugmentedState r1 = augmented_rhs(lin, s, 0.1);
  CHECK(r1.z == Tensor::from_rows({{3, 7}, {3, 7}}));
  CHECK(r1.logp == Tensor(2, 1, -5.0));

  FlowModel rnd{DynamicsNet::initialized(2, 8, 2, 4), 0.0, 0.5, {}, {}};
  CHECK(augmented_rhs(rnd, s, 0.3).z == eval(rnd.net, s.z, 0.3));
}

TEST_CASE("identity flow: log density of the standard normal") {
  FlowModel m{DynamicsNet(2, 8, 2), 0.0, 0.5, tight_solver(), exact_trace()};
  const Likelihood ll = log_likelihood(m, Tensor(1, 2));
  CHECK(ll.log_prob[0] == doctest::Approx(-1.8378770664093453).epsilon(1e-15));
  Rng rng(5);
  const Tensor x = uniform_tensor(rng, 50, 2, -3, 3);
  const Tensor lp = log_likelihood(m, x).log_prob;
  const Tensor ref = standard_normal_logpdf(x);
  for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(lp[i] - ref[i]) < 1e-12);
}

TEST_CASE("contracting linear flow matches the Gaussian pushforward") {
  const double a = -0.8, t0 = 0.0, T = 0.5;
  FlowModel m{DynamicsNet::linear(scaled(Tensor::identity(2), a)), t0, T, {}, exact_trace()};
  const Tensor x = Tensor::from_rows({{0.3, -1.0}, {2.0, 0.5}});
  const Likelihood ll = log_likelihood(m, x);
  const double tau = T - t0;
  for (std::size_t i = 0; i < 2; ++i) {
    const double z0 = x(i, 0) * std::exp(a * tau), z1 = x(i, 1) * std::exp(a * tau);
    const double ref = log_normal_1d(z0) + log_normal_1d(z1) + 2 * a * tau;
    CHECK(std::abs(ll.log_prob[i] - ref) < 1e-4);
  }
}

TEST_CASE("tightening the tolerance never reduces nfe") {
  const DynamicsNet net = DynamicsNet::initialized(2, 16, 2, 6);
  Rng rng(6);
  const Tensor x = uniform_tensor(rng, 32, 2, -2, 2);
  std::size_t prev = 0;
  for (double tol : {1e-3, 1e-4, 1e-5, 1e-6, 1e-7}) {
    FlowModel m{net, 0.0, 0.5, tight_solver(tol), exact_trace()};
    const std::size_t nfe = log_likelihood(m, x).nfe;
    CHECK(nfe >= prev);
    prev = nfe;
  }
}

TEST_CASE("per-sample log-likelihood is permutation-equivariant") {
  const DynamicsNet net = DynamicsNet::initialized(2, 16, 2, 7);
  FlowModel m{net, 0.0, 0.5, {}, exact_trace()};
  Rng rng(7);
  const Tensor x = uniform_tensor(rng, 8, 2, -2, 2);
  Tensor xr(8, 2);
  for (std::size_t i = 0; i < 8; ++i) {
    xr(i, 0) = x(7 - i, 0);
    xr(i, 1) = x(7 - i, 1);
  }
  const Tensor a = log_likelihood(m, x).log_prob;
  const Tensor b = log_likelihood(m, xr).log_prob;
  // The error norm is a batch max, so the step sequence can differ slightly.
  for (std::size_t i = 0; i < 8; ++i) CHECK(a[i] == doctest::Approx(b[7 - i]).epsilon(1e-12));
}

TEST_CASE("sampling the identity flow returns the Gaussian draws") {
  FlowModel m{DynamicsNet(2, 8, 2), 0.0, 0.5, {}, {}};
  const Tensor s = sample(m, 100, 12);
  Rng rng = make_stream(12, Stream::Sample, 0);
  CHECK(s == normal_tensor(rng, 100, 2));
}

TEST_CASE("sampling a scalar linear flow scales by exp(-a tau)") {
  const double a = 0.6;
  FlowModel m{DynamicsNet::linear(scaled(Tensor::identity(2), a)), 0.0, 0.5, tight_solver(), {}};
  Rng rng(3);
  const Tensor zb = uniform_tensor(rng, 10, 2, -2, 2);
  const Tensor x = push_back_to_data(m, zb);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i] == doctest::Approx(zb[i] * std::exp(-a * 0.5)).epsilon(1e-7));
}

TEST_CASE("forward then backward pass recovers the data") {
  FlowModel m{DynamicsNet::initialized(2, 16, 2, 8), 0.0, 0.5, {}, exact_trace()};
  Rng rng(9);
  const Tensor x = uniform_tensor(rng, 16, 2, -2, 2);
  const Tensor z = log_likelihood(m, x).solution.z_end;
  const Tensor back = push_back_to_data(m, z);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 10 * (1e-5 * 2 + 1e-5));
}

TEST_CASE("trace mode validation") {
  TraceMode m;
  m.n_probes = 0;
  CHECK_THROWS_AS(m.validate(2), ConfigError);
  TraceMode e = exact_trace();
  CHECK_THROWS_AS(e.validate(9), ConfigError);
  CHECK(evaluation_trace(2, 0).kind == TraceKind::Exact);
  const TraceMode big = evaluation_trace(12, 0);
  CHECK(big.kind == TraceKind::Hutchinson);
  CHECK(big.n_probes == 16);
}

TEST_CASE("T equal to t0 is rejected") {
  FlowModel m{DynamicsNet(2, 8, 2), 0.5, 0.5, {}, exact_trace()};
  CHECK_THROWS(log_likelihood(m, Tensor(1, 2)));
}

}  // TEST_SUITE
