#pragma once

// CLI verbs as callable functions; main() only parses arguments.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "toflow/trainer.hpp"

namespace toflow::cli {

namespace fs = std::filesystem;

// Full command line (argv[0] ignored). Returns the process exit status.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

struct EvalRequest {
  fs::path checkpoint;
  std::optional<std::string> dataset;  // default: the checkpoint's dataset
  std::optional<std::size_t> n_test;   // default: the checkpoint's dataset.n_test
  std::optional<fs::path> data_csv;    // evaluate on these points instead
};
EvalResult cmd_eval(const EvalRequest& req);

// Model samples (z ~ N(0, I) pushed back to data space) as CSV x,y.
void cmd_sample(const fs::path& checkpoint, std::size_t n, const fs::path& out_csv, std::uint64_t seed);

void cmd_data_dump(const std::string& dataset, std::size_t n, std::uint64_t seed, std::uint64_t batch_index,
                   const fs::path& out_csv);

enum class AblationAxis { Alpha, Epsilon };
AblationAxis parse_axis(const std::string& s);

struct AblationRun {
  double value = 0.0;
  RunArtifacts artifacts;
};

// One temporal-policy run per value under <out_dir>/<axis>_<value>, shared
// seed, then overlays under <out_dir>. A failed run is reported and the
// others continue.
std::vector<AblationRun> cmd_ablate(const nlohmann::json& base_tree, const std::vector<std::string>& overrides,
                                    AblationAxis axis, const std::vector<double>& values, std::ostream* log);

// CSV with header x,y (x0..x{D-1} above two columns).
void write_points_csv(const fs::path& file, const Tensor& pts);
Tensor read_points_csv(const fs::path& file);

}  // namespace toflow::cli
