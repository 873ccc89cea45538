// Compiled twice: with TOFLOW_WITH_TEMPORAL=1 into namespace toflow, and with
// TOFLOW_WITH_TEMPORAL=0 into toflow::baseline. The second build carries no
// time-policy state and no Step 2 code at all.

#include <chrono>
#include <deque>
#include <fstream>
#include <numeric>
#include <ostream>

#include "toflow/checkpoint.hpp"
#include "toflow/errors.hpp"
#include "toflow/metrics.hpp"
#include "toflow/rng.hpp"
#include "toflow/temporal.hpp"
#include "toflow/trainer.hpp"

#ifndef TOFLOW_WITH_TEMPORAL
#define TOFLOW_WITH_TEMPORAL 1
#endif

#if TOFLOW_WITH_TEMPORAL
namespace toflow {
#else
namespace toflow::baseline {
#endif

namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

double ms_since(clock_type::time_point t) {
  return std::chrono::duration<double, std::milli>(clock_type::now() - t).count();
}

nlohmann::json build_info() {
  return {{"compiler", __VERSION__},
          {"cplusplus", static_cast<long>(__cplusplus)},
#ifdef NDEBUG
          {"assertions", false},
#else
          {"assertions", true},
#endif
          {"temporal_module", TOFLOW_WITH_TEMPORAL != 0}};
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p, std::ios::trunc);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("cannot write " + p.string());
}

// Mean of the last `window` entries.
double window_mean(const std::deque<std::size_t>& h) {
  if (h.empty()) return 0.0;
  const double s = std::accumulate(h.begin(), h.end(), 0.0);
  return s / static_cast<double>(h.size());
}

struct LoopState {
  DynamicsNet net;
  AdamState weight_opt;
  double T;
  double t0;
#if TOFLOW_WITH_TEMPORAL
  TimePolicy policy;
#endif
  std::deque<std::size_t> nfe_window;
  std::size_t next_iteration = 0;
};

Checkpoint snapshot(const RunConfig& cfg, const LoopState& s) {
  Checkpoint ck;
  ck.config = to_json(cfg);
  ck.iterations_done = s.next_iteration;
  ck.net = s.net;
  ck.weight_optimizer = s.weight_opt;
  ck.T = s.T;
  ck.t0 = s.t0;
#if TOFLOW_WITH_TEMPORAL
  ck.time_optimizer = s.policy.time_optimizer;
#endif
  ck.nfe_history.assign(s.nfe_window.begin(), s.nfe_window.end());
  return ck;
}

void check_architecture(const RunConfig& cfg, const DynamicsNet& net) {
  const std::size_t want_hidden = cfg.model.depth == 0 ? 0 : cfg.model.hidden;
  if (net.dim() != 2 || net.depth() != cfg.model.depth || net.hidden() != want_hidden) {
    throw CheckpointError("checkpoint architecture (D=" + std::to_string(net.dim()) + ", hidden=" +
                          std::to_string(net.hidden()) + ", depth=" + std::to_string(net.depth()) +
                          ") does not match the config");
  }
}

}  // namespace

RunArtifacts train(const RunConfig& cfg, const TrainOptions& options) {
  cfg.validate();
#if !TOFLOW_WITH_TEMPORAL
  if (cfg.policy.kind != PolicyKind::Fixed) {
    throw ConfigError("policy.tag", "this build has no time-policy support; only 'fixed' is accepted");
  }
#endif
  if (cfg.out_dir.empty()) throw ConfigError("out_dir", "required (or set TOFLOW_OUT_DIR)");
  const fs::path run_dir = cfg.out_dir;
  fs::create_directories(run_dir);
  const fs::path ck_path = run_dir / kCheckpointFile;

  const Dataset dataset = cfg.dataset_id();
  const std::size_t dim = 2;

  LoopState s{DynamicsNet::initialized(dim, cfg.model.hidden, cfg.model.depth, cfg.seed),
              AdamState(cfg.optimizer.adam),
              cfg.policy.T0,
              cfg.policy.t0,
#if TOFLOW_WITH_TEMPORAL
              cfg.make_policy(),
#endif
              {},
              0};

  if (options.resume) {
    Checkpoint ck = load_checkpoint(ck_path);
    check_architecture(cfg, ck.net);
    s.net = std::move(ck.net);
    s.weight_opt = std::move(ck.weight_optimizer);
    s.weight_opt.config = cfg.optimizer.adam;
    s.T = ck.T;
    s.t0 = ck.t0;
#if TOFLOW_WITH_TEMPORAL
    s.policy.T = ck.T;
    s.policy.t0 = ck.t0;
    AdamConfig time_cfg = s.policy.time_optimizer.config;
    s.policy.time_optimizer = std::move(ck.time_optimizer);
    s.policy.time_optimizer.config = time_cfg;
#endif
    s.nfe_window.assign(ck.nfe_history.begin(), ck.nfe_history.end());
    s.next_iteration = ck.iterations_done;
    truncate_rows(run_dir, s.next_iteration);
  } else {
    // A fresh run replaces whatever an earlier run left behind.
    fs::remove(run_dir / kMetricsFile);
    fs::remove(ck_path);
    fs::remove(run_dir / "error.txt");
  }

  nlohmann::json meta;
  meta["config"] = to_json(cfg);
  meta["seeds"] = {{"run", cfg.seed},
                   {"data", cfg.dataset.seed},
                   {"init_stream", mix_seed(cfg.seed, Stream::Init, 0)},
                   {"test_set_stream", mix_seed(cfg.dataset.seed, Stream::TestSet, 0)}};
  meta["grad_clip_threshold"] = cfg.optimizer.clip;
#if TOFLOW_WITH_TEMPORAL
  if (cfg.policy.kind == PolicyKind::Steer) meta["steer_half_width"] = s.policy.steer_half_width;
  if (cfg.policy.kind == PolicyKind::TemporalOpt) {
    const auto [lo, hi] = s.policy.clip_bounds();
    meta["clip_interval_initial"] = {lo, hi};
  }
#endif
  meta["build"] = build_info();
  meta["resumed_from_iteration"] = options.resume ? nlohmann::json(s.next_iteration) : nlohmann::json(nullptr);
  meta["status"] = "running";
  write_json(run_dir / "run_meta.json", meta);

  const Tensor test_x = make_test_set(dataset, cfg.dataset.seed, cfg.dataset.n_test);
  MetricsWriter writer(run_dir);

  RunArtifacts art;
  art.run_dir = run_dir;
  const auto t_start = clock_type::now();
  std::size_t nfe_sum = 0;
  std::size_t iters_run = 0;
  const std::size_t total = cfg.schedule.iterations;

  FlowModel model{s.net, s.t0, s.T, cfg.solver, {}};
  model.trace.kind = cfg.trace.kind;
  model.trace.noise = cfg.trace.noise;
  model.trace.n_probes = cfg.trace.n_probes;
  model.trace.exact_dim_cap = cfg.trace.exact_dim_cap;

  try {
    while (s.next_iteration < total) {
      if (options.halt_after != 0 && s.next_iteration >= options.halt_after) break;
      const std::size_t it = s.next_iteration;
      const auto t_iter = clock_type::now();

      const Tensor batch = sample_batch({dataset, cfg.dataset.seed, cfg.schedule.batch_size}, it);

#if TOFLOW_WITH_TEMPORAL
      if (s.policy.kind == PolicyKind::Steer) {
        Rng rng = make_stream(cfg.seed, Stream::Steer, it);
        s.policy.T = sample_steer(s.policy, rng);
      }
      s.T = s.policy.T;
      s.t0 = s.policy.t0;
#endif

      // Step 1: weights at fixed (t0, T).
      model.net = s.net;
      model.T = s.T;
      model.t0 = s.t0;
      model.trace.probe_seed = mix_seed(cfg.seed, Stream::TrainProbe, it);
      const WeightStep ws = step_weights(model, batch, s.weight_opt, cfg.optimizer.clip);
      s.net = model.net;

      MetricsRow row;
      row.iteration = it;
      row.train_loss = ws.loss;
      row.nfe_forward = ws.nfe;
      row.grad_norm_pre_clip = ws.clip.pre_norm;
      row.clipped_fraction = ws.clip.clipped_fraction;
      row.T_current = s.T;
      row.t0_current = s.t0;

#if TOFLOW_WITH_TEMPORAL
      // Step 2: time, same batch, updated weights.
      if (s.policy.kind == PolicyKind::TemporalOpt) {
        model.trace.probe_seed = mix_seed(cfg.seed, Stream::TemporalProbe, it);
        const TemporalGrad tg = temporal_gradient(model, batch, s.policy.optimize_t0);
        step_time(s.policy, tg);
        s.T = s.policy.T;
        s.t0 = s.policy.t0;
      }
#endif

      s.nfe_window.push_back(ws.nfe);
      while (s.nfe_window.size() > cfg.schedule.nfe_window) s.nfe_window.pop_front();
      row.nfe_avg_window = window_mean(s.nfe_window);
      nfe_sum += ws.nfe;
      ++iters_run;

      const bool last = it + 1 == total;
      if ((it + 1) % cfg.schedule.eval_every == 0 || last) {
        // Fixed and steer evaluate at T0; the temporal policy at its current T.
        const double T_eval = evaluation_time(cfg, s.T);
        const EvalResult ev = evaluate(s.net, s.t0, T_eval, cfg.solver, test_x, cfg.schedule.eval_chunk,
                                       cfg.dataset.quantized8, mix_seed(cfg.seed, Stream::EvalProbe, it),
                                       cfg.trace.exact_dim_cap);
        row.test_loss = ev.loss;
        row.bpd = ev.bpd;
        art.final_test_loss = ev.loss;
        art.final_bpd = ev.bpd;
        if (options.log) {
          *options.log << "iter " << it + 1 << "/" << total << "  train " << ws.loss << "  test " << ev.loss
                       << "  nfe(avg) " << row.nfe_avg_window << "  T " << s.T << "\n";
          options.log->flush();
        }
      }

      s.next_iteration = it + 1;
      row.wall_ms = ms_since(t_iter);
      writer.write(row);

      if ((cfg.schedule.checkpoint_every != 0 && s.next_iteration % cfg.schedule.checkpoint_every == 0) ||
          s.next_iteration == total) {
        save_checkpoint(ck_path, snapshot(cfg, s));
      }
    }
    if (s.next_iteration < total) save_checkpoint(ck_path, snapshot(cfg, s));
  } catch (const Error& e) {
    art.error = "iteration " + std::to_string(s.next_iteration) + ": " + e.what();
    std::ofstream(run_dir / "error.txt") << art.error << '\n';
    // metrics.csv and the last interval checkpoint stay as they are.
  }

  art.iterations_done = s.next_iteration;
  art.completed = art.error.empty() && s.next_iteration == total;
  art.wall_ms = ms_since(t_start);
  art.mean_nfe = iters_run ? static_cast<double>(nfe_sum) / static_cast<double>(iters_run) : 0.0;
  art.T = s.T;
  art.t0 = s.t0;

  meta["status"] = art.completed ? "completed" : (art.error.empty() ? "halted" : "failed");
  meta["iterations_done"] = art.iterations_done;
  meta["wall_ms"] = art.wall_ms;
  meta["mean_nfe"] = art.mean_nfe;
  meta["final_T"] = art.T;
  meta["final_t0"] = art.t0;
  if (art.final_test_loss) meta["final_test_loss"] = *art.final_test_loss;
  if (!art.error.empty()) meta["error"] = art.error;
  write_json(run_dir / "run_meta.json", meta);
  return art;
}

}  // namespace
