#include "toflow/optim.hpp"

#include <cmath>
#include <string>

#include "toflow/errors.hpp"

namespace toflow {

void AdamConfig::validate(const char* key_prefix) const {
  const std::string p(key_prefix);
  if (!(lr > 0.0)) throw ConfigError(p + ".lr", "must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError(p + ".beta1", "must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError(p + ".beta2", "must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError(p + ".eps", "must be > 0");
}

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: state tracks a different parameter set");

  const AdamConfig& c = state.config;
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (p.shape() != g.shape() || state.m[i].shape() != p.shape()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " is " + to_string(p.shape()) +
                       ", gradient " + to_string(g.shape()));
    }
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads) {
  std::vector<Tensor> ps;
  std::vector<Tensor> gs;
  for (double p : params) ps.push_back(Tensor::scalar(p));
  for (double g : grads) gs.push_back(Tensor::scalar(g));
  std::vector<Tensor*> ptrs;
  for (Tensor& p : ps) ptrs.push_back(&p);
  adam_step(state, ptrs, gs);
  for (std::size_t i = 0; i < params.size(); ++i) params[i] = ps[i][0];
}

double global_norm(std::span<const Tensor> grads) noexcept {
  double acc = 0.0;
  for (const Tensor& g : grads) acc += squared_norm(g);
  return std::sqrt(acc);
}

ClipResult clip_global_norm(std::span<Tensor> grads, double threshold) {
  if (!(threshold > 0.0)) throw ConfigError("optimizer.clip", "threshold must be > 0");
  ClipResult r;
  r.pre_norm = global_norm(grads);
  if (r.pre_norm > threshold) {
    const double s = threshold / r.pre_norm;
    for (Tensor& g : grads) g *= s;
    r.clipped = true;
    r.clipped_fraction = (r.pre_norm - threshold) / r.pre_norm;
  }
  return r;
}

}  // namespace toflow
