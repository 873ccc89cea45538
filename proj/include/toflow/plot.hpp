#pragma once

// Dependency-free SVG charts for run directories.

#include <filesystem>
#include <string>
#include <vector>

#include "toflow/tensor.hpp"

namespace toflow {

struct LineSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

struct ScatterSet {
  std::string label;
  Tensor points;  // N x 2
  std::string color;
};

void write_line_chart(const std::filesystem::path& file, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<LineSeries>& series);
void write_scatter(const std::filesystem::path& file, const std::string& title,
                   const std::vector<ScatterSet>& sets);

// Which metrics column an overlay compares.
enum class PlotMetric { GradNorm, NfeAverage, TestLoss, StoppingTime };

// grad_norm.svg, nfe.svg (500-iteration moving average), test_loss.svg,
// T_trace.svg and, when the run has a checkpoint, samples.svg (model samples
// over data samples). Returns the files written.
// Throws Error when the run has no rows.
std::vector<std::filesystem::path> plot_run(const std::filesystem::path& run_dir);

// One line per run directory, labelled.
void plot_overlay(const std::filesystem::path& file, const std::string& title, PlotMetric metric,
                  const std::vector<std::pair<std::string, std::filesystem::path>>& runs);

}  // namespace toflow
