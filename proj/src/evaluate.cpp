#include <algorithm>

#include "toflow/errors.hpp"
#include "toflow/metrics.hpp"
#include "toflow/rng.hpp"
#include "toflow/trainer.hpp"

namespace toflow {

double evaluation_time(const RunConfig& cfg, double current_T) noexcept {
  return cfg.policy.kind == PolicyKind::TemporalOpt ? current_T : cfg.policy.T0;
}

Tensor make_test_set(Dataset d, std::uint64_t data_seed, std::size_t n) {
  return sample_batch({d, mix_seed(data_seed, Stream::TestSet, 0), n}, 0);
}

EvalResult evaluate(const DynamicsNet& net, double t0, double T, const SolverConfig& solver, const Tensor& x,
                    std::size_t chunk, bool quantized8, std::uint64_t probe_seed, std::size_t exact_dim_cap) {
  if (x.cols() != net.dim()) {
    throw ShapeError("evaluate: data has D=" + std::to_string(x.cols()) + " but the model expects D=" +
                     std::to_string(net.dim()));
  }
  if (x.rows() == 0) throw Error("evaluate: empty data set");
  if (chunk == 0) chunk = x.rows();

  FlowModel model{net, t0, T, solver, evaluation_trace(net.dim(), probe_seed, exact_dim_cap)};
  EvalResult out;
  double total = 0.0;
  for (std::size_t begin = 0; begin < x.rows(); begin += chunk) {
    const std::size_t n = std::min(chunk, x.rows() - begin);
    Tensor part(n, x.cols());
    std::copy_n(x.data() + begin * x.cols(), n * x.cols(), part.data());
    const Likelihood ll = log_likelihood(model, part);
    total += ll.loss * static_cast<double>(n);
    out.nfe += ll.nfe;
  }
  out.loss = total / static_cast<double>(x.rows());
  if (quantized8) out.bpd = bits_per_dim(-out.loss, net.dim());
  return out;
}

}  // namespace toflow
