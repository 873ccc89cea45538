#include "commands.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "toflow/checkpoint.hpp"
#include "toflow/errors.hpp"
#include "toflow/metrics.hpp"
#include "toflow/plot.hpp"
#include "toflow/rng.hpp"

namespace toflow::cli {

namespace {

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ============================================================================
// CSV points
// ============================================================================

void write_points_csv(const fs::path& file, const Tensor& pts) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  const std::size_t d = pts.cols() == 0 ? 2 : pts.cols();
  if (d == 2) {
    out << "x,y\n";
  } else {
    for (std::size_t j = 0; j < d; ++j) out << (j ? ",x" : "x") << j;
    out << '\n';
  }
  for (std::size_t i = 0; i < pts.rows(); ++i) {
    for (std::size_t j = 0; j < pts.cols(); ++j) out << (j ? "," : "") << csv_number(pts(i, j));
    out << '\n';
  }
  if (!out) throw IoError("write failed on " + file.string());
}

Tensor read_points_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw IoError(file.string() + ": missing header");
  const std::size_t d = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  std::vector<double> vals;
  std::size_t rows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::size_t n = 0;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || *end != '\0') {
        throw IoError(file.string() + " line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
      vals.push_back(v);
      ++n;
    }
    if (n != d) {
      throw IoError(file.string() + " line " + std::to_string(line_no) + ": expected " + std::to_string(d) +
                    " columns");
    }
    ++rows;
  }
  return Tensor(rows, d, std::move(vals));
}

// ============================================================================
// Verbs
// ============================================================================

EvalResult cmd_eval(const EvalRequest& req) {
  const Checkpoint ck = load_checkpoint(req.checkpoint);
  const RunConfig cfg = config_from_json(ck.config);
  Tensor x;
  if (req.data_csv) {
    x = read_points_csv(*req.data_csv);
  } else {
    const Dataset d = parse_dataset(req.dataset.value_or(cfg.dataset.name));
    x = make_test_set(d, cfg.dataset.seed, req.n_test.value_or(cfg.dataset.n_test));
  }
  if (x.cols() != ck.net.dim()) {
    throw ShapeError("eval: checkpoint model has D=" + std::to_string(ck.net.dim()) + " but the data has D=" +
                     std::to_string(x.cols()));
  }
  return evaluate(ck.net, ck.t0, evaluation_time(cfg, ck.T), cfg.solver, x, cfg.schedule.eval_chunk,
                  cfg.dataset.quantized8, mix_seed(cfg.seed, Stream::EvalProbe, 0), cfg.trace.exact_dim_cap);
}

void cmd_sample(const fs::path& checkpoint, std::size_t n, const fs::path& out_csv, std::uint64_t seed) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const RunConfig cfg = config_from_json(ck.config);
  const FlowModel model{ck.net, ck.t0, evaluation_time(cfg, ck.T), cfg.solver, {}};
  write_points_csv(out_csv, sample(model, n, seed));
}

void cmd_data_dump(const std::string& dataset, std::size_t n, std::uint64_t seed, std::uint64_t batch_index,
                   const fs::path& out_csv) {
  const Dataset d = parse_dataset(dataset);
  if (n == 0) {
    write_points_csv(out_csv, Tensor(0, 2));
    return;
  }
  write_points_csv(out_csv, sample_batch({d, seed, n}, batch_index));
}

AblationAxis parse_axis(const std::string& s) {
  if (s == "alpha") return AblationAxis::Alpha;
  if (s == "epsilon") return AblationAxis::Epsilon;
  throw ConfigError("ablate.axis", "unknown axis '" + s + "' (alpha|epsilon)");
}

std::vector<AblationRun> cmd_ablate(const nlohmann::json& base_tree, const std::vector<std::string>& overrides,
                                    AblationAxis axis, const std::vector<double>& values, std::ostream* log) {
  if (values.size() < 2) throw ConfigError("ablate.values", "an ablation needs at least two values");
  const char* key = axis == AblationAxis::Alpha ? "alpha" : "epsilon";

  // Resolve once to validate and to find the parent directory.
  std::vector<std::string> base_over = overrides;
  base_over.push_back("policy.tag=temporal");
  const RunConfig base = load_config(base_tree, base_over);
  if (base.out_dir.empty()) throw ConfigError("out_dir", "required (or set TOFLOW_OUT_DIR)");
  const fs::path parent = base.out_dir;

  std::vector<AblationRun> runs;
  std::vector<std::pair<std::string, fs::path>> dirs;
  for (double v : values) {
    AblationRun r;
    r.value = v;
    const std::string tag = std::string(key) + "_" + fmt_g(v);
    std::vector<std::string> over = base_over;
    over.push_back(std::string("policy.") + key + "=" + csv_number(v));
    over.push_back("out_dir=\"" + (parent / tag).string() + "\"");
    try {
      const RunConfig cfg = load_config(base_tree, over);
      if (log) *log << "== " << tag << " ==\n";
      r.artifacts = train(cfg, {.log = log});
    } catch (const Error& e) {
      r.artifacts.run_dir = parent / tag;
      r.artifacts.error = e.what();
    }
    if (log && !r.artifacts.error.empty()) *log << tag << " failed: " << r.artifacts.error << "\n";
    if (fs::exists(parent / tag / kMetricsFile)) dirs.emplace_back(std::string(key) + "=" + fmt_g(v), parent / tag);
    runs.push_back(std::move(r));
  }

  if (!dirs.empty()) {
    const std::string stem = std::string("ablation_") + key;
    plot_overlay(parent / (stem + "_grad_norm.svg"), std::string("Gradient norm across ") + key, PlotMetric::GradNorm,
                 dirs);
    plot_overlay(parent / (stem + "_T_trace.svg"), std::string("Stopping time across ") + key,
                 PlotMetric::StoppingTime, dirs);
    plot_overlay(parent / (stem + "_test_loss.svg"), std::string("Test loss across ") + key, PlotMetric::TestLoss,
                 dirs);
    plot_overlay(parent / (stem + "_nfe.svg"), std::string("NFE across ") + key, PlotMetric::NfeAverage, dirs);
  }
  return runs;
}

// ============================================================================
// Argument parsing
// ============================================================================

namespace {

nlohmann::json read_tree(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous normalizing flows with a learned stopping time", "toflow"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  bool resume = false;
  bool quiet = false;
  std::size_t halt_after = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  train_cmd->add_option("--config", config_path, "TOML or JSON config file");
  train_cmd->add_option("--set", sets, "Override a config key: key=value (repeatable)");
  train_cmd->add_flag("--resume", resume, "Continue from the run directory's checkpoint");
  train_cmd->add_flag("--quiet", quiet, "No progress lines");
  train_cmd->add_option("--halt-after", halt_after, "Stop after this many iterations (checkpointed)");

  EvalRequest ereq;
  std::string eval_dataset, eval_data;
  std::size_t eval_n = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Held-out negative log-likelihood of a checkpoint");
  eval_cmd->add_option("--checkpoint", ereq.checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset (default: the checkpoint's)");
  eval_cmd->add_option("--n-test", eval_n, "Held-out set size");
  eval_cmd->add_option("--data", eval_data, "CSV of points to evaluate instead of a dataset");

  std::string sample_ck, sample_out;
  std::size_t sample_n = 1000;
  std::uint64_t sample_seed = 0;
  auto* sample_cmd = app.add_subcommand("sample", "Draw model samples");
  sample_cmd->add_option("--checkpoint", sample_ck, "Checkpoint file")->required();
  sample_cmd->add_option("--n", sample_n, "Number of samples");
  sample_cmd->add_option("--out", sample_out, "Output CSV")->required();
  sample_cmd->add_option("--seed", sample_seed, "Base-sample seed");

  std::string dump_dataset, dump_out;
  std::size_t dump_n = 1000;
  std::uint64_t dump_seed = 0, dump_index = 0;
  auto* data_cmd = app.add_subcommand("data", "Dataset utilities");
  data_cmd->require_subcommand(1);
  auto* dump_cmd = data_cmd->add_subcommand("dump", "Write a sampled batch as CSV");
  dump_cmd->add_option("--dataset", dump_dataset, "Dataset name")->required();
  dump_cmd->add_option("--n", dump_n, "Batch size");
  dump_cmd->add_option("--seed", dump_seed, "Data seed");
  dump_cmd->add_option("--batch-index", dump_index, "Call index of the batch");
  dump_cmd->add_option("--out", dump_out, "Output CSV")->required();

  std::string plot_dir;
  auto* plot_cmd = app.add_subcommand("plot", "Write SVG charts for a run directory");
  plot_cmd->add_option("run_dir", plot_dir, "Run directory")->required();

  std::string abl_config, abl_axis;
  std::vector<std::string> abl_sets;
  std::vector<double> abl_values;
  auto* abl_cmd = app.add_subcommand("ablate", "Sweep alpha or epsilon with the temporal policy");
  abl_cmd->add_option("--config", abl_config, "TOML or JSON config file");
  abl_cmd->add_option("--set", abl_sets, "Override a config key (repeatable)");
  abl_cmd->add_option("--axis", abl_axis, "alpha or epsilon")->required();
  abl_cmd->add_option("--values", abl_values, "Comma-separated values")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train_cmd) {
      const RunConfig cfg = load_config(read_tree(config_path), sets);
      const RunArtifacts a = train(cfg, {.resume = resume, .halt_after = halt_after, .log = quiet ? nullptr : &out});
      out << "run directory: " << a.run_dir.string() << "\n";
      out << "iterations: " << a.iterations_done << "/" << cfg.schedule.iterations << "\n";
      if (a.final_test_loss) out << "final test loss (nats): " << *a.final_test_loss << "\n";
      if (a.final_bpd) out << "final bits/dim: " << *a.final_bpd << "\n";
      out << "average NFE per forward solve: " << a.mean_nfe << "\n";
      out << "wall time (s): " << a.wall_ms / 1000.0 << "\n";
      if (!a.error.empty()) err << "error: " << a.error << "\n";
      return a.completed ? 0 : 1;
    }
    if (*eval_cmd) {
      if (!eval_dataset.empty()) ereq.dataset = eval_dataset;
      if (eval_n != 0) ereq.n_test = eval_n;
      if (!eval_data.empty()) ereq.data_csv = eval_data;
      const EvalResult r = cmd_eval(ereq);
      out << "test loss (nats): " << r.loss << "\n";
      if (r.bpd) out << "bits/dim: " << *r.bpd << "\n";
      out << "NFE: " << r.nfe << "\n";
      return 0;
    }
    if (*sample_cmd) {
      cmd_sample(sample_ck, sample_n, sample_out, sample_seed);
      out << "wrote " << sample_n << " samples to " << sample_out << "\n";
      return 0;
    }
    if (*data_cmd) {
      cmd_data_dump(dump_dataset, dump_n, dump_seed, dump_index, dump_out);
      out << "wrote " << dump_n << " points to " << dump_out << "\n";
      return 0;
    }
    if (*plot_cmd) {
      for (const fs::path& p : plot_run(plot_dir)) out << "wrote " << p.string() << "\n";
      return 0;
    }
    if (*abl_cmd) {
      const std::vector<AblationRun> runs =
          cmd_ablate(read_tree(abl_config), abl_sets, parse_axis(abl_axis), abl_values, &out);
      bool all_ok = true;
      for (const AblationRun& r : runs) {
        out << abl_axis << "=" << fmt_g(r.value) << ": ";
        if (r.artifacts.completed) {
          out << "test loss " << r.artifacts.final_test_loss.value_or(0.0) << ", mean NFE " << r.artifacts.mean_nfe
              << "\n";
        } else {
          out << "FAILED " << r.artifacts.error << "\n";
          all_ok = false;
        }
      }
      return all_ok ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace toflow::cli
