#include "toflow/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "toflow/errors.hpp"

namespace toflow {

using ad::Tape;
using ad::Var;

std::string_view policy_name(PolicyKind k) noexcept {
  switch (k) {
    case PolicyKind::Fixed: return "fixed";
    case PolicyKind::Steer: return "steer";
    case PolicyKind::TemporalOpt: return "temporal";
  }
  return "?";
}

PolicyKind parse_policy(std::string_view name) {
  if (name == "fixed") return PolicyKind::Fixed;
  if (name == "steer") return PolicyKind::Steer;
  if (name == "temporal") return PolicyKind::TemporalOpt;
  throw ConfigError("policy.tag", "unknown policy '" + std::string(name) + "' (fixed|steer|temporal)");
}

// ============================================================================
// TimePolicy
// ============================================================================

TimePolicy TimePolicy::fixed(double T0, double t0) {
  TimePolicy p;
  p.kind = PolicyKind::Fixed;
  p.T0 = p.T = T0;
  p.t0_init = p.t0 = t0;
  return p;
}

TimePolicy TimePolicy::steer(double T0, double t0, double half_width) {
  TimePolicy p = fixed(T0, t0);
  p.kind = PolicyKind::Steer;
  p.steer_half_width = half_width < 0.0 ? 0.5 * (T0 - t0) : half_width;
  return p;
}

TimePolicy TimePolicy::temporal(double T0, double t0, double alpha, double epsilon, AdamConfig time_adam,
                                bool optimize_t0) {
  TimePolicy p = fixed(T0, t0);
  p.kind = PolicyKind::TemporalOpt;
  p.alpha = alpha;
  p.epsilon = epsilon;
  p.optimize_t0 = optimize_t0;
  p.time_optimizer = AdamState(time_adam);
  return p;
}

std::pair<double, double> TimePolicy::clip_bounds() const noexcept {
  return {t0 + epsilon, 2.0 * T0 - t0 - epsilon};
}

void TimePolicy::validate() const {
  if (!std::isfinite(T0) || !std::isfinite(t0_init)) throw ConfigError("policy.T0", "must be finite");
  if (!(T0 > t0_init)) throw ConfigError("policy.T0", "must be greater than policy.t0");
  if (kind == PolicyKind::Steer) {
    if (!(steer_half_width >= 0.0 && steer_half_width < T0 - t0_init)) {
      throw ConfigError("policy.steer_b", "half-width must lie in [0, T0 - t0)");
    }
  }
  if (kind == PolicyKind::TemporalOpt) {
    if (!(alpha >= 0.0)) throw ConfigError("policy.alpha", "must be >= 0");
    if (!(epsilon >= 0.0 && epsilon <= T0 - t0_init)) {
      throw ConfigError("policy.epsilon", "must lie in [0, T0 - t0] so the clip interval is non-empty");
    }
    time_optimizer.config.validate("policy");
  }
}

double clip_time(double T, double t0, double T0, double epsilon) noexcept {
  const double hi = 2.0 * T0 - t0 - epsilon;
  const double lo = t0 + epsilon;
  if (T >= hi) return hi;
  if (T <= lo) return lo;
  return T;
}

double temporal_regularization(double T, double alpha) noexcept { return alpha * std::abs(T); }

double temporal_regularization_subgradient(double T, double alpha) noexcept {
  if (T > 0.0) return alpha;
  if (T < 0.0) return -alpha;
  return 0.0;
}

// ============================================================================
// Step 1: weights
// ============================================================================

std::vector<Tensor> weight_gradient(const FlowModel& model, const Tensor& batch, double* loss,
                                    OdeSolution* solution) {
  const std::size_t b = batch.rows();
  const CnfSystem sys(model.net, model.trace, b);
  OdeSolution sol = integrate(sys, batch, Tensor(b, 1), model.t0, model.T, model.solver,
                              {.record_trajectory = false, .record_steps = true});

  // L = mean(-log N(z(T)) + delta_logp)
  const Tensor logn = standard_normal_logpdf(sol.z_end);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) total += -logn[i] + sol.delta_logp[i];
  if (loss) *loss = total / static_cast<double>(b);

  const double inv_b = 1.0 / static_cast<double>(b);
  const Tensor adj_z = inv_b * sol.z_end;
  const Tensor adj_logp(b, 1, inv_b);
  StepwiseGradient g = backprop_steps(sys, sol, model.solver.method, adj_z, adj_logp);
  if (solution) *solution = std::move(sol);
  return std::move(g.params);
}

WeightStep step_weights(FlowModel& model, const Tensor& batch, AdamState& optimizer, double clip_threshold) {
  WeightStep out;
  OdeSolution sol;
  std::vector<Tensor> grads = weight_gradient(model, batch, &out.loss, &sol);
  out.nfe = sol.nfe;
  out.steps_accepted = sol.steps_accepted;
  out.steps_rejected = sol.steps_rejected;
  out.clip = clip_global_norm(grads, clip_threshold);
  std::vector<Tensor*> params = model.net.parameters();
  adam_step(optimizer, params, grads);
  return out;
}

// ============================================================================
// Step 2: time
// ============================================================================

namespace {

struct PointTerms {
  Tensor f;    // B x D
  Tensor div;  // B x 1
};

PointTerms evaluate_point(const CnfSystem& sys, const DynamicsNet& net, const Tensor& z, double t) {
  Tape tape;
  const BoundNet b = bind(tape, net);
  const ForwardPass pass = forward(tape, b, tape.leaf(z), t, true);
  const Var div = sys.divergence(tape, b, pass);
  return {tape.value(pass.output), tape.value(div)};
}

}  // namespace

TemporalGrad temporal_gradient(const FlowModel& model, const Tensor& batch, bool with_t0) {
  const std::size_t b = batch.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  const CnfSystem sys(model.net, model.trace, b);
  const OdeSolution sol = integrate(sys, batch, Tensor(b, 1), model.t0, model.T, model.solver,
                                    {.record_trajectory = false, .record_steps = with_t0});

  TemporalGrad g;
  const PointTerms end = evaluate_point(sys, model.net, sol.z_end, model.T);
  g.nfe = sol.nfe + 1;
  double endpoint = 0.0;
  for (std::size_t i = 0; i < sol.z_end.size(); ++i) endpoint += -sol.z_end[i] * end.f[i];
  double trace = 0.0;
  for (std::size_t i = 0; i < b; ++i) trace += end.div[i];
  g.endpoint_term = endpoint * inv_b;
  g.trace_term = trace * inv_b;
  g.dL_dT = -g.endpoint_term - g.trace_term;

  if (with_t0) {
    // Moving the start time by dt with x held fixed moves the effective start
    // point by -f(x, t0) dt, so dL/dt0 = -sum_b (dL/dx_b . f_b) + mean Tr J(x, t0).
    const Tensor adj_z = inv_b * sol.z_end;
    const Tensor adj_logp(b, 1, inv_b);
    const Tensor dl_dx = backprop_steps(sys, sol, model.solver.method, adj_z, adj_logp).z0;
    const PointTerms start = evaluate_point(sys, model.net, batch, model.t0);
    ++g.nfe;
    double transport = 0.0;
    for (std::size_t i = 0; i < dl_dx.size(); ++i) transport += dl_dx[i] * start.f[i];
    double trace0 = 0.0;
    for (std::size_t i = 0; i < b; ++i) trace0 += start.div[i];
    g.dL_dt0 = -transport + trace0 * inv_b;
  }
  return g;
}

void step_time(TimePolicy& policy, const TemporalGrad& grad) {
  if (policy.kind != PolicyKind::TemporalOpt) throw Error("step_time: policy is not temporal");
  const double g_T = grad.dL_dT + temporal_regularization_subgradient(policy.T, policy.alpha);

  if (!policy.optimize_t0) {
    double vars[] = {policy.T};
    const double grads[] = {g_T};
    adam_step(policy.time_optimizer, vars, grads);
    policy.T = clip_time(vars[0], policy.t0, policy.T0, policy.epsilon);
    return;
  }

  if (!grad.dL_dt0) throw Error("step_time: optimize_t0 is set but the gradient has no dL/dt0");
  const double g_t0 = *grad.dL_dt0 + temporal_regularization_subgradient(policy.t0, policy.alpha);
  double vars[] = {policy.T, policy.t0};
  const double grads[] = {g_T, g_t0};
  adam_step(policy.time_optimizer, vars, grads);
  policy.T = clip_time(vars[0], policy.t0, policy.T0, policy.epsilon);
  // The start time may not pass T0 - eps, otherwise the clip interval is empty.
  policy.t0 = std::min(vars[1], policy.T0 - policy.epsilon);
  policy.T = clip_time(policy.T, policy.t0, policy.T0, policy.epsilon);
}

double sample_steer(const TimePolicy& policy, Rng& rng) {
  if (policy.kind != PolicyKind::Steer) throw Error("sample_steer: policy is not steer");
  const double b = policy.steer_half_width;
  if (b == 0.0) return policy.T0;
  std::uniform_real_distribution<double> u(policy.T0 - b, policy.T0 + b);
  return u(rng);
}

}  // namespace toflow
