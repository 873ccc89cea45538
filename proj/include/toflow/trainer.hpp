#pragma once

// Training driver: per iteration draw a batch, take the weight step at the
// current (t0, T) and, for the temporal policy, take the time step on the
// same batch. Writes metrics.csv, run_meta.json and a rolling checkpoint.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "toflow/cnf.hpp"
#include "toflow/config.hpp"
#include "toflow/toydata.hpp"

namespace toflow {

struct TrainOptions {
  // Continue from <out_dir>/checkpoint.ckpt; rows at or after the checkpoint
  // iteration are dropped from metrics.csv first.
  bool resume = false;
  // Stop (with a checkpoint) once this many iterations are done, as if the
  // process had been interrupted. 0 disables.
  std::size_t halt_after = 0;
  // Progress lines at each evaluation; null for silence.
  std::ostream* log = nullptr;
};

struct RunArtifacts {
  std::filesystem::path run_dir;
  bool completed = false;
  std::size_t iterations_done = 0;
  std::optional<double> final_test_loss;
  std::optional<double> final_bpd;
  double mean_nfe = 0.0;  // mean nfe_forward over iterations run by this call
  double wall_ms = 0.0;
  double T = 0.0;
  double t0 = 0.0;
  std::string error;  // set when the run halted on an error
};

struct EvalResult {
  double loss = 0.0;  // -mean log p, nats
  std::optional<double> bpd;
  std::size_t nfe = 0;  // summed over chunks
};

// Stopping time used for evaluation and sampling: the current T for the
// temporal policy, T0 otherwise (a steer run's last draw is not its model).
double evaluation_time(const RunConfig& cfg, double current_T) noexcept;

// The held-out set for a dataset seed: fixed, independent of training draws.
Tensor make_test_set(Dataset d, std::uint64_t data_seed, std::size_t n);

// Exact trace for D <= exact_dim_cap (Hutchinson with eval probes above).
EvalResult evaluate(const DynamicsNet& net, double t0, double T, const SolverConfig& solver, const Tensor& x,
                    std::size_t chunk, bool quantized8, std::uint64_t probe_seed = 0,
                    std::size_t exact_dim_cap = 8);

RunArtifacts train(const RunConfig& cfg, const TrainOptions& options = {});

namespace baseline {

// The same loop built without the time-policy machinery. Only the fixed
// policy is accepted.
RunArtifacts train(const RunConfig& cfg, const TrainOptions& options = {});

}  // namespace baseline

}  // namespace toflow
