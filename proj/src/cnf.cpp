#include "toflow/cnf.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "toflow/errors.hpp"
#include "toflow/rng.hpp"

namespace toflow {

using ad::Tape;
using ad::Var;

void TraceMode::validate(std::size_t dim) const {
  if (n_probes == 0) throw ConfigError("trace.n_probes", "must be >= 1");
  if (kind == TraceKind::Exact && dim > exact_dim_cap) {
    throw ConfigError("trace.mode", "exact trace requested for D=" + std::to_string(dim) +
                                        " above exact_dim_cap=" + std::to_string(exact_dim_cap));
  }
}

TraceMode evaluation_trace(std::size_t dim, std::uint64_t probe_seed, std::size_t exact_dim_cap) {
  TraceMode m;
  m.exact_dim_cap = exact_dim_cap;
  m.probe_seed = probe_seed;
  if (dim <= exact_dim_cap) {
    m.kind = TraceKind::Exact;
  } else {
    m.kind = TraceKind::Hutchinson;
    m.n_probes = 16;
  }
  return m;
}

Tensor standard_normal_logpdf(const Tensor& z) {
  const double c = -0.5 * static_cast<double>(z.cols()) * std::log(2.0 * std::numbers::pi);
  Tensor out(z.rows(), 1);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) sq += z(r, j) * z(r, j);
    out[r] = c - 0.5 * sq;
  }
  return out;
}

std::vector<Tensor> draw_probes(const TraceMode& mode, std::size_t batch, std::size_t dim) {
  Rng rng(mode.probe_seed);
  std::vector<Tensor> probes;
  probes.reserve(mode.n_probes);
  for (std::size_t k = 0; k < mode.n_probes; ++k) {
    probes.push_back(mode.noise == ProbeNoise::Rademacher ? rademacher_tensor(rng, batch, dim)
                                                          : normal_tensor(rng, batch, dim));
  }
  return probes;
}

// ============================================================================
// Divergence
// ============================================================================

Var divergence_exact(Tape& tape, const BoundNet& net, const ForwardPass& pass) {
  const std::size_t d = net.net->dim();
  Var total;
  for (std::size_t i = 0; i < d; ++i) {
    Tensor e(pass.batch, d);
    for (std::size_t r = 0; r < pass.batch; ++r) e(r, i) = 1.0;
    const Var row_i = vjp_state(tape, net, pass, tape.leaf(std::move(e)));
    const Var diag = ad::slice_cols(tape, row_i, i, i + 1);
    total = total.valid() ? ad::add(tape, total, diag) : diag;
  }
  return total;
}

Var divergence_hutchinson(Tape& tape, const BoundNet& net, const ForwardPass& pass,
                          std::span<const Tensor> probes) {
  if (probes.empty()) throw Error("divergence_hutchinson: no probes");
  Var total;
  for (const Tensor& v : probes) {
    if (v.rows() != pass.batch || v.cols() != net.net->dim()) {
      throw ShapeError("divergence_hutchinson: probe " + to_string(v.shape()) + " vs batch " +
                       std::to_string(pass.batch) + " x D=" + std::to_string(net.net->dim()));
    }
    const Var vn = tape.leaf(v);
    const Var quad = ad::row_sum(tape, ad::mul(tape, vjp_state(tape, net, pass, vn), vn));
    total = total.valid() ? ad::add(tape, total, quad) : quad;
  }
  if (probes.size() > 1) total = ad::scale(tape, total, 1.0 / static_cast<double>(probes.size()));
  return total;
}

Tensor divergence_exact(const DynamicsNet& net, const Tensor& z, double t, std::size_t cap) {
  if (net.dim() > cap) {
    throw ConfigError("trace.mode", "exact divergence for D=" + std::to_string(net.dim()) +
                                        " exceeds cap " + std::to_string(cap));
  }
  Tape tape;
  const BoundNet b = bind(tape, net);
  const ForwardPass p = forward(tape, b, tape.leaf(z), t, true);
  return tape.value(divergence_exact(tape, b, p));
}

Tensor divergence_hutchinson(const DynamicsNet& net, const Tensor& z, double t,
                             std::span<const Tensor> probes) {
  Tape tape;
  const BoundNet b = bind(tape, net);
  const ForwardPass p = forward(tape, b, tape.leaf(z), t, true);
  return tape.value(divergence_hutchinson(tape, b, p, probes));
}

Tensor divergence_hutchinson(const DynamicsNet& net, const Tensor& z, double t, const TraceMode& mode) {
  return divergence_hutchinson(net, z, t, draw_probes(mode, z.rows(), net.dim()));
}

// ============================================================================
// Augmented system
// ============================================================================

CnfSystem::CnfSystem(const DynamicsNet& net, TraceKind kind, bool with_divergence)
    : net_(&net), kind_(kind), with_divergence_(with_divergence) {}

CnfSystem::CnfSystem(const DynamicsNet& net, const TraceMode& mode, std::size_t batch)
    : CnfSystem(net, mode.kind, true) {
  mode.validate(net.dim());
  if (kind_ == TraceKind::Hutchinson) probes_ = draw_probes(mode, batch, net.dim());
}

CnfSystem CnfSystem::transport_only(const DynamicsNet& net) {
  return CnfSystem(net, TraceKind::Exact, false);
}

std::vector<Var> CnfSystem::bind_parameters(Tape& tape) const { return bind(tape, *net_).params; }

Var CnfSystem::divergence(Tape& tape, const BoundNet& net, const ForwardPass& pass) const {
  return kind_ == TraceKind::Exact ? divergence_exact(tape, net, pass)
                                   : divergence_hutchinson(tape, net, pass, probes_);
}

TapedState CnfSystem::derivative(Tape& tape, std::span<const Var> params, double t,
                                 const TapedState& state) const {
  const BoundNet net{net_, {params.begin(), params.end()}};
  const ForwardPass pass = forward(tape, net, state.z, t, with_divergence_);
  if (!with_divergence_) {
    return {pass.output, tape.leaf(Tensor(pass.batch, 1))};
  }
  return {pass.output, ad::scale(tape, divergence(tape, net, pass), -1.0)};
}

AugmentedState augmented_rhs(const FlowModel& model, const AugmentedState& state, double t) {
  const CnfSystem sys(model.net, model.trace, state.z.rows());
  Tape tape;
  const std::vector<Var> params = sys.bind_parameters(tape);
  const TapedState s{tape.leaf(state.z), tape.leaf(state.logp)};
  const TapedState d = sys.derivative(tape, params, t, s);
  return {tape.value(d.z), tape.value(d.logp)};
}

namespace {

void require_interval(const FlowModel& model) {
  if (model.T == model.t0) throw Error("flow model: T must differ from t0 (both " + std::to_string(model.T) + ")");
}

}  // namespace

Likelihood log_likelihood(const FlowModel& model, const Tensor& x, IntegrateOptions options) {
  require_interval(model);
  if (x.cols() != model.net.dim()) {
    throw ShapeError("log_likelihood: data has D=" + std::to_string(x.cols()) + ", model has D=" +
                     std::to_string(model.net.dim()));
  }
  const CnfSystem sys(model.net, model.trace, x.rows());
  Likelihood out;
  try {
    out.solution = integrate(sys, x, Tensor(x.rows(), 1), model.t0, model.T, model.solver, options);
  } catch (const NonConvergence& e) {
    throw NonConvergence(std::string("log_likelihood (batch of ") + std::to_string(x.rows()) +
                             "): " + e.what(),
                         e.t(), e.partial(), e.nfe());
  }
  out.nfe = out.solution.nfe;
  out.log_prob = standard_normal_logpdf(out.solution.z_end);
  double total = 0.0;
  for (std::size_t i = 0; i < out.log_prob.size(); ++i) {
    out.log_prob[i] -= out.solution.delta_logp[i];
    total += out.log_prob[i];
  }
  out.loss = -total / static_cast<double>(x.rows());
  return out;
}

Tensor push_back_to_data(const FlowModel& model, const Tensor& z_base) {
  require_interval(model);
  const CnfSystem sys = CnfSystem::transport_only(model.net);
  return integrate(sys, z_base, Tensor(z_base.rows(), 1), model.T, model.t0, model.solver).z_end;
}

Tensor sample(const FlowModel& model, std::size_t n, std::uint64_t seed) {
  if (n == 0) return Tensor(0, model.net.dim());
  Rng rng = make_stream(seed, Stream::Sample);
  return push_back_to_data(model, normal_tensor(rng, n, model.net.dim()));
}

}  // namespace toflow
