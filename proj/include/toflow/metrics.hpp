#pragma once

// Per-iteration metrics, their CSV persistence, and small series statistics
// used by plots and ablation summaries.

#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace toflow {

struct MetricsRow {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  std::optional<double> test_loss;  // only on evaluation iterations
  std::optional<double> bpd;        // only when data is declared 8-bit
  std::size_t nfe_forward = 0;
  double nfe_avg_window = 0.0;
  double grad_norm_pre_clip = 0.0;
  double clipped_fraction = 0.0;
  double T_current = 0.0;
  double t0_current = 0.0;
  double wall_ms = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

inline constexpr const char* kMetricsHeader =
    "iteration,train_loss,test_loss,bpd,nfe_forward,nfe_avg_window,grad_norm_pre_clip,"
    "clipped_fraction,T_current,t0_current,wall_ms";

inline constexpr const char* kMetricsFile = "metrics.csv";

std::string format_row(const MetricsRow& row);
// Throws IoError naming `line_no` when the line does not parse.
MetricsRow parse_row(const std::string& line, std::size_t line_no);

// Append-only writer for <run_dir>/metrics.csv. The header is written when the
// file is new or empty; an existing file must carry the expected header.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& run_dir);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void write(const MetricsRow& row);  // flushed before returning
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  std::FILE* file_ = nullptr;
};

void write_row(const std::filesystem::path& run_dir, const MetricsRow& row);
// Empty file or header-only file gives no rows. Missing file is NotFoundError.
std::vector<MetricsRow> read_rows(const std::filesystem::path& run_dir);
// Keeps rows with iteration < `keep_below`, rewriting the file. Used on resume.
void truncate_rows(const std::filesystem::path& run_dir, std::size_t keep_below);

// -(mean_ll/d - log 256) / log 2
double bits_per_dim(double mean_log_likelihood, std::size_t d);

// ============================================================================
// Series helpers
// ============================================================================

// Trailing moving average; entry i averages values [max(0, i-w+1), i].
std::vector<double> moving_average(std::span<const double> values, std::size_t window);
// sum |x_{k+1} - x_k|
double total_variation(std::span<const double> values);
// Spearman rank correlation with average ranks for ties; 0 for constant input.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace toflow
