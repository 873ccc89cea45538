#include "toflow/odeint.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace toflow {

using ad::Tape;
using ad::Var;

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::Euler: return "euler";
    case Method::Rk4: return "rk4";
    case Method::Dopri5: return "dopri5";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  if (name == "euler") return Method::Euler;
  if (name == "rk4") return Method::Rk4;
  if (name == "dopri5") return Method::Dopri5;
  throw ConfigError("solver.method", "unknown method '" + std::string(name) + "'");
}

void SolverConfig::validate() const {
  if (!(rtol > 0.0)) throw ConfigError("solver.rtol", "must be > 0");
  if (!(atol > 0.0)) throw ConfigError("solver.atol", "must be > 0");
  if (h_init < 0.0) throw ConfigError("solver.h_init", "must be >= 0 (0 selects the default)");
  if (h_min < 0.0) throw ConfigError("solver.h_min", "must be >= 0 (0 selects the default)");
  if (h_max < 0.0) throw ConfigError("solver.h_max", "must be >= 0 (0 selects the default)");
  if (h_min > 0.0 && h_max > 0.0 && h_min > h_max) throw ConfigError("solver.h_min", "must be <= h_max");
  if (max_steps == 0) throw ConfigError("solver.max_steps", "must be > 0");
}

namespace {

// Dormand-Prince 5(4), FSAL.
constexpr std::array<double, 7> kC = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr std::array<std::array<double, 6>, 7> kA = {{
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
}};
// Fifth-order weights equal the last row of kA (b7 = 0); error weights are
// b - b* against the embedded fourth-order solution.
constexpr std::array<double, 7> kErr = {
    35.0 / 384 - 5179.0 / 57600,      0.0,
    500.0 / 1113 - 7571.0 / 16695,    125.0 / 192 - 393.0 / 640,
    -2187.0 / 6784 + 92097.0 / 339200, 11.0 / 84 - 187.0 / 2100,
    -1.0 / 40};

constexpr double kSafety = 0.9;
constexpr double kIncreaseCap = 10.0;
constexpr double kDecreaseFloor = 0.2;

struct Resolved {
  double h_init;
  double h_min;
  double h_max;
};

Resolved resolve_steps(const SolverConfig& cfg, double span) {
  return {cfg.h_init > 0.0 ? cfg.h_init : span / 20.0, cfg.h_min > 0.0 ? cfg.h_min : 1e-10 * span,
          cfg.h_max > 0.0 ? cfg.h_max : span};
}

TapedState leaves(Tape& tape, const AugmentedState& s) {
  return {tape.leaf(s.z), tape.leaf(s.logp)};
}

AugmentedState values(const Tape& tape, const TapedState& s) {
  return {tape.value(s.z), tape.value(s.logp)};
}

// y + h * sum_i coeff_i k_i, accumulated in index order.
TapedState combine(Tape& tape, const TapedState& y, std::span<const TapedState> k,
                   std::span<const double> coeff, double h) {
  TapedState out = y;
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (coeff[i] == 0.0) continue;
    const double c = h * coeff[i];
    out.z = ad::add(tape, out.z, ad::scale(tape, k[i].z, c));
    out.logp = ad::add(tape, out.logp, ad::scale(tape, k[i].logp, c));
  }
  return out;
}

struct StepResult {
  TapedState next;
  TapedState last_stage;  // f at (t_next, next) for dopri5
  double error_ratio = 0.0;
  std::size_t evals = 0;
};

double rms_ratio(const Tensor& err, const Tensor& y0, const Tensor& y1, const SolverConfig& cfg) {
  if (err.size() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double scale = cfg.atol + cfg.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = err[i] / scale;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

// One step from (t, y) to t_next = t + h (t_next given exactly). When
// `first_stage` is provided it is used as f(t, y) instead of evaluating it.
// Error control runs only when `cfg` is non-null.
StepResult rk_step(Tape& tape, const OdeSystem& sys, std::span<const Var> params, Method method,
                   double t, double h, double t_next, const TapedState& y,
                   const TapedState* first_stage, const SolverConfig* cfg) {
  StepResult r;
  auto f = [&](double ts, const TapedState& s) {
    ++r.evals;
    return sys.derivative(tape, params, ts, s);
  };
  const TapedState k1 = first_stage ? *first_stage : f(t, y);

  switch (method) {
    case Method::Euler: {
      const TapedState k[] = {k1};
      const double w[] = {1.0};
      r.next = combine(tape, y, k, w, h);
      return r;
    }
    case Method::Rk4: {
      const double half[] = {0.5};
      const double full[] = {1.0};
      const TapedState k2 = f(t + 0.5 * h, combine(tape, y, std::span(&k1, 1), half, h));
      const TapedState k3 = f(t + 0.5 * h, combine(tape, y, std::span(&k2, 1), half, h));
      const TapedState k4 = f(t_next, combine(tape, y, std::span(&k3, 1), full, h));
      const TapedState k[] = {k1, k2, k3, k4};
      const double w[] = {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6};
      r.next = combine(tape, y, k, w, h);
      return r;
    }
    case Method::Dopri5: {
      std::array<TapedState, 7> k;
      k[0] = k1;
      for (std::size_t s = 1; s < 6; ++s) {
        const TapedState ys = combine(tape, y, std::span(k.data(), s), std::span(kA[s].data(), s), h);
        k[s] = f(t + kC[s] * h, ys);
      }
      r.next = combine(tape, y, std::span(k.data(), 6), std::span(kA[6].data(), 6), h);
      k[6] = f(t_next, r.next);
      r.last_stage = k[6];
      if (cfg) {
        const AugmentedState y0 = values(tape, y);
        const AugmentedState y1 = values(tape, r.next);
        Tensor ez(y0.z.rows(), y0.z.cols());
        Tensor el(y0.logp.rows(), y0.logp.cols());
        for (std::size_t s = 0; s < 7; ++s) {
          if (kErr[s] == 0.0) continue;
          axpy(h * kErr[s], tape.value(k[s].z), ez);
          axpy(h * kErr[s], tape.value(k[s].logp), el);
        }
        // Mixed norm: worst of the per-component RMS ratios.
        r.error_ratio = std::max(rms_ratio(ez, y0.z, y1.z, *cfg), rms_ratio(el, y0.logp, y1.logp, *cfg));
      }
      return r;
    }
  }
  return r;
}

struct GridStep {
  double t;
  double h;
  double t_next;
};

std::vector<GridStep> fixed_grid(double t0, double T, double h_nominal) {
  const double span = std::abs(T - t0);
  const auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(span / h_nominal - 1e-9)));
  const double h = (T - t0) / static_cast<double>(n);
  std::vector<GridStep> grid;
  grid.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = t0 + static_cast<double>(i) * h;
    const double t_next = i + 1 == n ? T : t0 + static_cast<double>(i + 1) * h;
    grid.push_back({t, t_next - t, t_next});
  }
  return grid;
}

void check_inputs(const Tensor& z0, const Tensor& logp0, double t0, double T) {
  if (logp0.rows() != z0.rows() || logp0.cols() != 1) {
    throw ShapeError("integrate: logp0 " + to_string(logp0.shape()) + " does not match batch of z0 " +
                     to_string(z0.shape()));
  }
  if (!std::isfinite(t0) || !std::isfinite(T)) throw NumericalBlowup("integrate: non-finite time bound");
  z0.require_finite("integrate: z0");
  logp0.require_finite("integrate: logp0");
}

}  // namespace

OdeSolution integrate(const OdeSystem& system, const Tensor& z0, const Tensor& logp0, double t0,
                      double T, const SolverConfig& cfg, IntegrateOptions options) {
  cfg.validate();
  check_inputs(z0, logp0, t0, T);

  OdeSolution sol;
  sol.t_end = T;
  AugmentedState y{z0, logp0};
  if (options.record_trajectory) sol.trajectory.emplace_back(t0, z0);

  const double span = std::abs(T - t0);
  if (span == 0.0) {
    sol.z_end = z0;
    sol.delta_logp = Tensor(logp0.rows(), 1);
    return sol;
  }
  const Resolved res = resolve_steps(cfg, span);
  Tape tape;

  auto accept = [&](const StepRecord& rec, AugmentedState next) {
    if (options.record_steps) sol.steps.push_back(rec);
    y = std::move(next);
    ++sol.steps_accepted;
    if (options.record_trajectory) sol.trajectory.emplace_back(rec.t_next, y.z);
  };

  if (cfg.method != Method::Dopri5) {
    for (const GridStep& g : fixed_grid(t0, T, res.h_init)) {
      tape.clear();
      const std::vector<Var> params = system.bind_parameters(tape);
      const TapedState ys = leaves(tape, y);
      const StepResult r = rk_step(tape, system, params, cfg.method, g.t, g.h, g.t_next, ys, nullptr, nullptr);
      sol.nfe += r.evals;
      StepRecord rec{g.t, g.h, g.t_next, {}};
      if (options.record_steps) rec.start = y;
      accept(rec, values(tape, r.next));
    }
  } else {
    const double sign = T > t0 ? 1.0 : -1.0;
    AugmentedState k1;
    {
      tape.clear();
      const std::vector<Var> params = system.bind_parameters(tape);
      const TapedState ys = leaves(tape, y);
      k1 = values(tape, system.derivative(tape, params, t0, ys));
      ++sol.nfe;
    }
    double t = t0;
    double h = sign * std::min(res.h_init, res.h_max);
    std::size_t attempts = 0;
    while (sign * (T - t) > 0.0) {
      if (attempts++ >= cfg.max_steps) {
        throw NonConvergence("integrate: exceeded max_steps=" + std::to_string(cfg.max_steps) +
                                 " at t=" + std::to_string(t),
                             t, y, sol.nfe);
      }
      bool last = false;
      if (sign * (t + h - T) >= 0.0) {
        h = T - t;
        last = true;
      }
      const double t_next = last ? T : t + h;

      tape.clear();
      const std::vector<Var> params = system.bind_parameters(tape);
      const TapedState ys = leaves(tape, y);
      const TapedState ks = leaves(tape, k1);
      const StepResult r = rk_step(tape, system, params, Method::Dopri5, t, h, t_next, ys, &ks, &cfg);
      sol.nfe += r.evals;

      const double ratio = r.error_ratio;
      if (ratio <= 1.0) {
        StepRecord rec{t, h, t_next, {}};
        if (options.record_steps) rec.start = y;
        k1 = values(tape, r.last_stage);
        accept(rec, values(tape, r.next));
        t = t_next;
      } else {
        ++sol.steps_rejected;
      }
      if (sign * (T - t) <= 0.0) break;

      double factor = kIncreaseCap;
      if (ratio > 0.0) {
        const double floor = ratio < 1.0 ? 1.0 : kDecreaseFloor;
        factor = std::min(kIncreaseCap, std::max(kSafety / std::pow(ratio, 0.2), floor));
      }
      double mag = std::min(std::abs(h) * factor, res.h_max);
      if (mag < res.h_min) {
        throw NonConvergence("integrate: step size underflow (|h|=" + std::to_string(mag) +
                                 " < h_min) at t=" + std::to_string(t),
                             t, y, sol.nfe);
      }
      h = sign * mag;
    }
  }

  sol.z_end = std::move(y.z);
  sol.delta_logp = std::move(y.logp);
  for (std::size_t i = 0; i < sol.delta_logp.size(); ++i) sol.delta_logp[i] -= logp0[i];
  return sol;
}

TapedSolution integrate_with_tape(Tape& tape, const OdeSystem& system, std::span<const Var> params,
                                  const TapedState& start, double t0, double T,
                                  const SolverConfig& cfg) {
  cfg.validate();
  const Tensor& z0 = tape.value(start.z);
  const Tensor& logp0 = tape.value(start.logp);
  check_inputs(z0, logp0, t0, T);

  TapedSolution out;
  out.end = start;
  const double span = std::abs(T - t0);
  if (span == 0.0) {
    out.info.z_end = z0;
    out.info.delta_logp = Tensor(logp0.rows(), 1);
    out.info.t_end = T;
    return out;
  }

  std::vector<GridStep> grid;
  if (cfg.method == Method::Dopri5) {
    out.info = integrate(system, z0, logp0, t0, T, cfg, {.record_trajectory = false, .record_steps = true});
    for (const StepRecord& s : out.info.steps) grid.push_back({s.t, s.h, s.t_next});
    out.info.steps.clear();
  } else {
    grid = fixed_grid(t0, T, resolve_steps(cfg, span).h_init);
    out.info.t_end = T;
  }

  TapedState y = start;
  for (const GridStep& g : grid) {
    const StepResult r = rk_step(tape, system, params, cfg.method, g.t, g.h, g.t_next, y, nullptr, nullptr);
    if (cfg.method != Method::Dopri5) {
      out.info.nfe += r.evals;
      ++out.info.steps_accepted;
    }
    y = r.next;
  }
  out.end = y;
  out.info.z_end = tape.value(y.z);
  out.info.delta_logp = tape.value(y.logp);
  for (std::size_t i = 0; i < out.info.delta_logp.size(); ++i) out.info.delta_logp[i] -= logp0[i];
  return out;
}

StepwiseGradient backprop_steps(const OdeSystem& system, const OdeSolution& solution, Method method,
                                const Tensor& adj_z_end, const Tensor& adj_logp_end) {
  if (solution.steps.size() != solution.steps_accepted) {
    throw Error("backprop_steps: solution was not recorded with record_steps");
  }
  StepwiseGradient out;
  out.z0 = adj_z_end;
  out.logp0 = adj_logp_end;
  Tape tape;
  for (auto it = solution.steps.rbegin(); it != solution.steps.rend(); ++it) {
    tape.clear();
    const std::vector<Var> params = system.bind_parameters(tape);
    const TapedState y = leaves(tape, it->start);
    const StepResult r = rk_step(tape, system, params, method, it->t, it->h, it->t_next, y, nullptr, nullptr);
    const ad::Seed seeds[] = {{r.next.z, out.z0}, {r.next.logp, out.logp0}};
    std::vector<Var> wrt = params;
    wrt.push_back(y.z);
    wrt.push_back(y.logp);
    std::vector<Tensor> g = ad::backward(tape, seeds, wrt).take();
    if (out.params.empty()) {
      out.params.assign(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(params.size()));
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) out.params[i] += g[i];
    }
    out.z0 = std::move(g[params.size()]);
    out.logp0 = std::move(g[params.size() + 1]);
  }
  if (out.params.empty()) {
    // No steps (empty interval): parameter gradients are zero.
    tape.clear();
    for (Var p : system.bind_parameters(tape)) {
      const Shape s = tape.value(p).shape();
      out.params.emplace_back(s.rows, s.cols);
    }
  }
  return out;
}

}  // namespace toflow
