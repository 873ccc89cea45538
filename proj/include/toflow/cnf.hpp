#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "toflow/dynamics.hpp"
#include "toflow/odeint.hpp"

namespace toflow {

enum class TraceKind { Exact, Hutchinson };
enum class ProbeNoise { Rademacher, Gaussian };

struct TraceMode {
  TraceKind kind = TraceKind::Hutchinson;
  ProbeNoise noise = ProbeNoise::Rademacher;
  std::size_t n_probes = 1;
  std::uint64_t probe_seed = 0;
  std::size_t exact_dim_cap = 8;

  void validate(std::size_t dim) const;
};

// Exact for D <= cap, else Hutchinson with 16 probes.
TraceMode evaluation_trace(std::size_t dim, std::uint64_t probe_seed, std::size_t exact_dim_cap = 8);

struct FlowModel {
  DynamicsNet net;
  double t0 = 0.0;
  double T = 0.5;
  SolverConfig solver;
  TraceMode trace;
};

// log N(z; 0, I) per row, B x 1.
Tensor standard_normal_logpdf(const Tensor& z);

// n_probes tensors of shape batch x dim drawn from mode.probe_seed.
std::vector<Tensor> draw_probes(const TraceMode& mode, std::size_t batch, std::size_t dim);

// sum_i df_i/dz_i per row, by D vector-Jacobian products with basis vectors.
Tensor divergence_exact(const DynamicsNet& net, const Tensor& z, double t, std::size_t cap = 8);
// (1/K) sum_k v_k^T (df/dz) v_k per row with the given probes.
Tensor divergence_hutchinson(const DynamicsNet& net, const Tensor& z, double t,
                             std::span<const Tensor> probes);
Tensor divergence_hutchinson(const DynamicsNet& net, const Tensor& z, double t, const TraceMode& mode);

// Taped divergence on an existing forward pass (recorded with_vjp).
ad::Var divergence_exact(ad::Tape& tape, const BoundNet& net, const ForwardPass& pass);
ad::Var divergence_hutchinson(ad::Tape& tape, const BoundNet& net, const ForwardPass& pass,
                              std::span<const Tensor> probes);

// Augmented dynamics (f, -Tr J). Hutchinson probes are drawn once at
// construction and reused for every evaluation of the solve.
class CnfSystem final : public OdeSystem {
 public:
  CnfSystem(const DynamicsNet& net, const TraceMode& mode, std::size_t batch);
  // dz/dt only, dlogp/dt = 0. For sampling.
  static CnfSystem transport_only(const DynamicsNet& net);

  std::vector<ad::Var> bind_parameters(ad::Tape& tape) const override;
  TapedState derivative(ad::Tape& tape, std::span<const ad::Var> params, double t,
                        const TapedState& state) const override;

  // The divergence at (z, t) as the solve sees it (same probes).
  ad::Var divergence(ad::Tape& tape, const BoundNet& net, const ForwardPass& pass) const;
  const std::vector<Tensor>& probes() const noexcept { return probes_; }
  bool tracks_divergence() const noexcept { return with_divergence_; }

 private:
  CnfSystem(const DynamicsNet& net, TraceKind kind, bool with_divergence);

  const DynamicsNet* net_;
  TraceKind kind_;
  bool with_divergence_;
  std::vector<Tensor> probes_;
};

// (f(z,t), -div) at one point, probes from model.trace.
AugmentedState augmented_rhs(const FlowModel& model, const AugmentedState& state, double t);

struct Likelihood {
  double loss = 0.0;          // -mean log p(x), nats
  Tensor log_prob;            // log p(x) per sample, B x 1
  std::size_t nfe = 0;
  OdeSolution solution;
};

// Integrates x = z(t0) to z(T); log p(x) = log N(z(T)) + int Tr J dt.
Likelihood log_likelihood(const FlowModel& model, const Tensor& x, IntegrateOptions options = {});

// z(T) ~ N(0, I) from `seed`, integrated backward to t0.
Tensor sample(const FlowModel& model, std::size_t n, std::uint64_t seed);
// Backward integration of the given base points.
Tensor push_back_to_data(const FlowModel& model, const Tensor& z_base);

}  // namespace toflow
