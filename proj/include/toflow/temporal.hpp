#pragma once

// Time policies for CNF training.
//
//   Fixed        T stays at T0.
//   Steer        T ~ Uniform[T0 - b, T0 + b], redrawn every iteration.
//   TemporalOpt  coordinate descent: a weight step at fixed T, then a step on
//                T along dL/dT + alpha*sign(T), followed by projection onto
//                [t0 + eps, 2*T0 - t0 - eps].

#include <optional>
#include <string_view>
#include <utility>

#include "toflow/cnf.hpp"
#include "toflow/optim.hpp"
#include "toflow/rng.hpp"

namespace toflow {

enum class PolicyKind { Fixed, Steer, TemporalOpt };

std::string_view policy_name(PolicyKind k) noexcept;
PolicyKind parse_policy(std::string_view name);

struct TimePolicy {
  PolicyKind kind = PolicyKind::Fixed;
  double T0 = 0.5;       // initial stopping time, centre of the clip interval
  double t0_init = 0.0;  // initial start time
  double T = 0.5;        // current stopping time
  double t0 = 0.0;       // current start time

  double steer_half_width = 0.0;

  double alpha = 0.1;    // temporal regularization strength
  double epsilon = 0.1;  // clip margin
  bool optimize_t0 = false;
  AdamState time_optimizer{AdamConfig{.lr = 1e-2}};

  static TimePolicy fixed(double T0, double t0 = 0.0);
  // half_width < 0 selects the default 0.5 * (T0 - t0).
  static TimePolicy steer(double T0, double t0 = 0.0, double half_width = -1.0);
  static TimePolicy temporal(double T0, double t0 = 0.0, double alpha = 0.1, double epsilon = 0.1,
                             AdamConfig time_adam = AdamConfig{.lr = 1e-2}, bool optimize_t0 = false);

  // [t0 + eps, 2*T0 - t0 - eps] for the current t0.
  std::pair<double, double> clip_bounds() const noexcept;
  void validate() const;
};

double clip_time(double T, double t0, double T0, double epsilon) noexcept;
// alpha * |T|
double temporal_regularization(double T, double alpha) noexcept;
// alpha * sign(T), sign(0) = 0
double temporal_regularization_subgradient(double T, double alpha) noexcept;

struct TemporalGrad {
  double dL_dT = 0.0;
  std::optional<double> dL_dt0;
  double endpoint_term = 0.0;  // mean (d log N / dz(T)) . f(z(T), T)
  double trace_term = 0.0;     // mean Tr J(T)
  std::size_t nfe = 0;
};

struct WeightStep {
  double loss = 0.0;
  ClipResult clip;
  std::size_t nfe = 0;
  std::size_t steps_accepted = 0;
  std::size_t steps_rejected = 0;
};

// One optimizer step on the network weights with (t0, T) held at the model's
// values. Gradients come from back-propagating through the solver steps. On
// any error the weights are left untouched.
WeightStep step_weights(FlowModel& model, const Tensor& batch, AdamState& optimizer,
                        double clip_threshold);

// Loss gradient of the parameter step as a list aligned with
// model.net.parameters(); also used by tests.
std::vector<Tensor> weight_gradient(const FlowModel& model, const Tensor& batch, double* loss = nullptr,
                                    OdeSolution* solution = nullptr);

// dL/dT from a fresh forward solve with the model's current weights:
// -mean(-z(T) . f(z(T), T)) - mean Tr J(z(T), T). With `with_t0`, also dL/dt0.
TemporalGrad temporal_gradient(const FlowModel& model, const Tensor& batch, bool with_t0);

// Applies the TR subgradient, one Adam step on the time variable(s), and the clip.
void step_time(TimePolicy& policy, const TemporalGrad& grad);

double sample_steer(const TimePolicy& policy, Rng& rng);

}  // namespace toflow
