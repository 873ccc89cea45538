#pragma once

// Run configuration: a key/value tree read from a TOML subset or JSON.
//
// Every key has a dotted path (e.g. "policy.alpha"). Defaults are the tree
// produced by to_json(RunConfig{}); user files and --set overrides are merged
// on top and unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "toflow/cnf.hpp"
#include "toflow/optim.hpp"
#include "toflow/temporal.hpp"
#include "toflow/toydata.hpp"

namespace toflow {

struct DatasetConfig {
  std::string name;  // required
  std::uint64_t seed = 0;
  std::size_t n_test = 10000;
  // BPD is reported only for 8-bit quantized data.
  bool quantized8 = false;
};

struct ModelConfig {
  std::size_t hidden = 64;
  std::size_t depth = 3;
};

struct PolicyConfig {
  PolicyKind kind = PolicyKind::Fixed;
  double T0 = 0.5;
  double t0 = 0.0;
  double alpha = 0.1;
  double epsilon = 0.1;
  double steer_b = -1.0;  // < 0: 0.5 * (T0 - t0)
  bool optimize_t0 = false;
  AdamConfig time_adam{.lr = 1e-2};
};

struct WeightOptimizerConfig {
  AdamConfig adam{.lr = 1e-3};
  double clip = 10.0;
};

struct ScheduleConfig {
  std::size_t iterations = 10000;
  std::size_t batch_size = 512;
  std::size_t eval_every = 500;
  std::size_t checkpoint_every = 1000;
  std::size_t nfe_window = 500;
  std::size_t eval_chunk = 1000;  // rows per test-set solve
};

struct TrainTraceConfig {
  TraceKind kind = TraceKind::Hutchinson;
  ProbeNoise noise = ProbeNoise::Rademacher;
  std::size_t n_probes = 1;
  std::size_t exact_dim_cap = 8;
};

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  SolverConfig solver;
  TrainTraceConfig trace;
  PolicyConfig policy;
  WeightOptimizerConfig optimizer;
  ScheduleConfig schedule;
  std::uint64_t seed = 0;
  std::string out_dir;

  // Throws ConfigError with the offending key path.
  void validate() const;
  Dataset dataset_id() const { return parse_dataset(dataset.name); }
  TimePolicy make_policy() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys take their defaults; unknown keys and wrong types throw.
RunConfig config_from_json(const nlohmann::json& tree);

// TOML subset: [section] / [a.b] headers, key = value lines with strings,
// numbers, booleans; '#' comments.
nlohmann::json parse_toml(std::string_view text);
// Picks JSON when the first non-blank character is '{', TOML otherwise.
nlohmann::json parse_config_text(std::string_view text);

// "a.b=value": value parsed as JSON if possible, else taken as a string.
void apply_override(nlohmann::json& tree, std::string_view assignment);

// defaults <- file (optional) <- overrides, then validated.
RunConfig load_config(const std::filesystem::path* file, const std::vector<std::string>& overrides);
RunConfig load_config(const nlohmann::json& user_tree, const std::vector<std::string>& overrides);

}  // namespace toflow
