#pragma once

// Versioned binary checkpoints with a JSON sidecar.
//
// File layout: "TOFLOWCK", u32 version, u64 payload length, payload,
// u64 FNV-1a of the payload. The payload holds the resolved config JSON, the
// iteration counter, the network record, both Adam states, the current
// (T, t0) and the NFE history that feeds the windowed average.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <vector>

#include "toflow/dynamics.hpp"
#include "toflow/optim.hpp"

namespace toflow {

inline constexpr std::uint32_t kCheckpointVersion = 1;
// Name of the rolling checkpoint inside a run directory.
inline constexpr const char* kCheckpointFile = "checkpoint.ckpt";

struct Checkpoint {
  nlohmann::json config;
  std::size_t iterations_done = 0;
  DynamicsNet net{1, 0, 0};
  AdamState weight_optimizer;
  double T = 0.0;
  double t0 = 0.0;
  AdamState time_optimizer;
  std::vector<std::size_t> nfe_history;
};

// Writes atomically (temporary file + rename) and emits <path>.json.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);

// NotFoundError for an empty or missing path; CheckpointError for bad magic,
// version mismatch, truncation or checksum failure.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(const void* data, std::size_t n) noexcept;

}  // namespace toflow
