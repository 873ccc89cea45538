#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "toflow/tensor.hpp"

namespace toflow {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate(const char* key_prefix) const;
};

struct AdamState {
  AdamConfig config;
  std::size_t step_count = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// Bias-corrected Adam. Moment buffers are allocated on the first call.
void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads);
// Scalar variables (the stopping time, optionally the start time).
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

struct ClipResult {
  double pre_norm = 0.0;
  bool clipped = false;
  // Portion of the norm removed: (pre_norm - threshold) / pre_norm when clipped.
  double clipped_fraction = 0.0;
};

double global_norm(std::span<const Tensor> grads) noexcept;
// Rescales all gradients by threshold / ||g|| when ||g|| > threshold.
ClipResult clip_global_norm(std::span<Tensor> grads, double threshold);

}  // namespace toflow
