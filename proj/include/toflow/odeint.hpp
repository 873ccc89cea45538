#pragma once

// Integration of the augmented state (z, log p) with exact evaluation counts.
//
// Every step, primal or taped, is produced by the same routine running on a
// tape, so a replayed step reproduces the primal values bit for bit. Adaptive
// solves are differentiated by freezing the accepted step sequence of the
// primal pass and replaying it (discretize-then-optimize).

#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "toflow/autodiff.hpp"
#include "toflow/errors.hpp"
#include "toflow/tensor.hpp"

namespace toflow {

enum class Method { Euler, Rk4, Dopri5 };

std::string_view method_name(Method m) noexcept;
Method parse_method(std::string_view name);

struct SolverConfig {
  Method method = Method::Dopri5;
  double rtol = 1e-5;
  double atol = 1e-5;
  // Zero selects the default relative to the interval: h_init = |T-t0|/20,
  // h_min = 1e-10 |T-t0|, h_max = |T-t0|. For fixed-step methods h_init is
  // the nominal step; the interval is split into ceil(|T-t0|/h_init) equal steps.
  double h_init = 0.0;
  double h_min = 0.0;
  double h_max = 0.0;
  std::size_t max_steps = 100000;

  // Throws ConfigError on invalid settings.
  void validate() const;
};

struct AugmentedState {
  Tensor z;     // B x D
  Tensor logp;  // B x 1
};

struct TapedState {
  ad::Var z;
  ad::Var logp;
};

// Right-hand side of the augmented ODE, evaluated on a tape.
class OdeSystem {
 public:
  virtual ~OdeSystem() = default;
  // Registers trainable parameters as leaves of `tape`, in a fixed order.
  virtual std::vector<ad::Var> bind_parameters(ad::Tape& tape) const = 0;
  // (dz/dt, dlogp/dt) at time t. One call is one function evaluation.
  virtual TapedState derivative(ad::Tape& tape, std::span<const ad::Var> params, double t,
                                const TapedState& state) const = 0;
};

// Start state and interval of one accepted step.
struct StepRecord {
  double t = 0.0;
  double h = 0.0;
  double t_next = 0.0;
  AugmentedState start;
};

struct OdeSolution {
  Tensor z_end;
  Tensor delta_logp;  // logp_end - logp0, B x 1
  double t_end = 0.0;
  std::size_t nfe = 0;
  std::size_t steps_accepted = 0;
  std::size_t steps_rejected = 0;
  std::vector<std::pair<double, Tensor>> trajectory;  // (t, z) per accepted step
  std::vector<StepRecord> steps;                      // when record_steps
};

struct IntegrateOptions {
  bool record_trajectory = false;
  bool record_steps = false;
};

// Step size underflow or step budget exhausted. Carries the state reached.
class NonConvergence : public Error {
 public:
  NonConvergence(const std::string& what, double t, AugmentedState partial, std::size_t nfe)
      : Error(what), t_(t), partial_(std::move(partial)), nfe_(nfe) {}
  double t() const noexcept { return t_; }
  const AugmentedState& partial() const noexcept { return partial_; }
  std::size_t nfe() const noexcept { return nfe_; }

 private:
  double t_;
  AugmentedState partial_;
  std::size_t nfe_;
};

// t0 > T integrates backward in time.
OdeSolution integrate(const OdeSystem& system, const Tensor& z0, const Tensor& logp0, double t0,
                      double T, const SolverConfig& cfg, IntegrateOptions options = {});

struct TapedSolution {
  OdeSolution info;
  TapedState end;
};

// Records the whole solve on `tape` starting from the given nodes. Adaptive
// methods first run a tapeless pass to fix the step sequence. `params` are
// the nodes returned by system.bind_parameters(tape).
TapedSolution integrate_with_tape(ad::Tape& tape, const OdeSystem& system,
                                  std::span<const ad::Var> params, const TapedState& start,
                                  double t0, double T, const SolverConfig& cfg);

struct StepwiseGradient {
  std::vector<Tensor> params;  // same order as bind_parameters
  Tensor z0;
  Tensor logp0;
};

// Vector-Jacobian product of the whole solve, one step at a time: each
// accepted step of `solution` (recorded with record_steps) is replayed on a
// fresh tape and back-propagated, so memory stays at one step's tape.
StepwiseGradient backprop_steps(const OdeSystem& system, const OdeSolution& solution,
                                Method method, const Tensor& adj_z_end,
                                const Tensor& adj_logp_end);

}  // namespace toflow
