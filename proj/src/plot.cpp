#include "toflow/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "toflow/checkpoint.hpp"
#include "toflow/cnf.hpp"
#include "toflow/config.hpp"
#include "toflow/errors.hpp"
#include "toflow/metrics.hpp"
#include "toflow/rng.hpp"
#include "toflow/toydata.hpp"
#include "toflow/trainer.hpp"

namespace toflow {

namespace fs = std::filesystem;

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 20.0;
constexpr double kTop = 36.0;
constexpr double kBottom = 50.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Degenerate or empty ranges get a unit-width window so a single point or
  // a flat line still lands inside the frame.
  void settle() {
    if (!(lo <= hi)) {
      lo = 0.0;
      hi = 1.0;
    }
    if (hi - lo < 1e-12 * std::max(1.0, std::abs(lo))) {
      const double pad = std::max(0.5, std::abs(lo) * 0.05);
      lo -= pad;
      hi += pad;
    }
  }
};

struct Frame {
  Range xr, yr;
  double sx(double x) const { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * (kWidth - kLeft - kRight); }
  double sy(double y) const { return kHeight - kBottom - (y - yr.lo) / (yr.hi - yr.lo) * (kHeight - kTop - kBottom); }
};

void open_svg(std::ostream& out, const std::string& title) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
      << "</text>\n";
}

void draw_axes(std::ostream& out, const Frame& f, const std::string& x_label, const std::string& y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight, y0 = kHeight - kBottom, y1 = kTop;
  out << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - y1
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = f.xr.lo + (f.xr.hi - f.xr.lo) * i / 4.0;
    const double fy = f.yr.lo + (f.yr.hi - f.yr.lo) * i / 4.0;
    out << "<text x=\"" << px(f.sx(fx)) << "\" y=\"" << y0 + 16 << "\" text-anchor=\"middle\">" << fmt(fx)
        << "</text>\n";
    out << "<text x=\"" << x0 - 6 << "\" y=\"" << px(f.sy(fy) + 4) << "\" text-anchor=\"end\">" << fmt(fy)
        << "</text>\n";
    out << "<line x1=\"" << x0 << "\" x2=\"" << x1 << "\" y1=\"" << px(f.sy(fy)) << "\" y2=\"" << px(f.sy(fy))
        << "\" stroke=\"#eee\"/>\n";
  }
  out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
      << escape(x_label) << "</text>\n";
  out << "<text transform=\"translate(16," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << escape(y_label) << "</text>\n";
}

void write_file(const fs::path& file, const std::string& body) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::trunc);
  out << body;
  if (!out) throw IoError("cannot write " + file.string());
}

std::vector<double> column(const std::vector<MetricsRow>& rows, PlotMetric metric, std::vector<double>* xs) {
  std::vector<double> ys;
  for (const MetricsRow& r : rows) {
    double v = 0.0;
    switch (metric) {
      case PlotMetric::GradNorm: v = r.grad_norm_pre_clip; break;
      case PlotMetric::NfeAverage: v = static_cast<double>(r.nfe_forward); break;
      case PlotMetric::TestLoss:
        if (!r.test_loss) continue;
        v = *r.test_loss;
        break;
      case PlotMetric::StoppingTime: v = r.T_current; break;
    }
    xs->push_back(static_cast<double>(r.iteration));
    ys.push_back(v);
  }
  if (metric == PlotMetric::NfeAverage) ys = moving_average(ys, 500);
  return ys;
}

const char* metric_label(PlotMetric m) {
  switch (m) {
    case PlotMetric::GradNorm: return "grad norm (pre-clip)";
    case PlotMetric::NfeAverage: return "NFE (500-iter moving avg)";
    case PlotMetric::TestLoss: return "test loss (nats)";
    case PlotMetric::StoppingTime: return "T";
  }
  return "";
}

LineSeries series_for(const std::vector<MetricsRow>& rows, PlotMetric metric, std::string label) {
  LineSeries s;
  s.label = std::move(label);
  s.y = column(rows, metric, &s.x);
  return s;
}

}  // namespace

void write_line_chart(const fs::path& file, const std::string& title, const std::string& x_label,
                      const std::string& y_label, const std::vector<LineSeries>& series) {
  Frame f;
  for (const LineSeries& s : series) {
    if (s.x.size() != s.y.size()) throw Error("write_line_chart: x/y length mismatch in " + s.label);
    for (double x : s.x) f.xr.add(x);
    for (double y : s.y) f.yr.add(y);
  }
  f.xr.settle();
  f.yr.settle();

  std::ostringstream out;
  open_svg(out, title);
  draw_axes(out, f, x_label, y_label);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const LineSeries& s = series[k];
    const char* color = kPalette[k % std::size(kPalette)];
    if (s.x.size() == 1) {
      out << "<circle cx=\"" << px(f.sx(s.x[0])) << "\" cy=\"" << px(f.sy(s.y[0])) << "\" r=\"3\" fill=\""
          << color << "\"/>\n";
    } else if (!s.x.empty()) {
      // Long traces are thinned to about 2000 vertices per series.
      const std::size_t stride = std::max<std::size_t>(1, s.x.size() / 2000);
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.2\" points=\"";
      for (std::size_t i = 0; i < s.x.size(); i += stride) {
        if (!std::isfinite(s.y[i])) continue;
        out << px(f.sx(s.x[i])) << ',' << px(f.sy(s.y[i])) << ' ';
      }
      out << px(f.sx(s.x.back())) << ',' << px(f.sy(s.y.back())) << "\"/>\n";
    }
    if (!s.label.empty()) {
      const double ly = kTop + 14 + 14 * static_cast<double>(k);
      out << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\""
          << color << "\"/>\n<text x=\"" << kWidth - kRight - 135 << "\" y=\"" << ly + 1 << "\">" << escape(s.label)
          << "</text>\n";
    }
  }
  out << "</svg>\n";
  write_file(file, out.str());
}

void write_scatter(const fs::path& file, const std::string& title, const std::vector<ScatterSet>& sets) {
  Frame f;
  for (const ScatterSet& s : sets) {
    if (s.points.rows() > 0 && s.points.cols() != 2) throw ShapeError("write_scatter needs N x 2 points");
    for (std::size_t i = 0; i < s.points.rows(); ++i) {
      f.xr.add(s.points(i, 0));
      f.yr.add(s.points(i, 1));
    }
  }
  f.xr.settle();
  f.yr.settle();
  std::ostringstream out;
  open_svg(out, title);
  draw_axes(out, f, "x", "y");
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const ScatterSet& s = sets[k];
    out << "<g fill=\"" << s.color << "\" fill-opacity=\"0.35\">\n";
    for (std::size_t i = 0; i < s.points.rows(); ++i) {
      if (!std::isfinite(s.points(i, 0)) || !std::isfinite(s.points(i, 1))) continue;
      out << "<circle cx=\"" << px(f.sx(s.points(i, 0))) << "\" cy=\"" << px(f.sy(s.points(i, 1)))
          << "\" r=\"1.3\"/>\n";
    }
    out << "</g>\n";
    const double ly = kTop + 14 + 14 * static_cast<double>(k);
    out << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << ly - 8 << "\" width=\"10\" height=\"10\" fill=\""
        << s.color << "\"/>\n<text x=\"" << kWidth - kRight - 135 << "\" y=\"" << ly + 1 << "\">"
        << escape(s.label) << "</text>\n";
  }
  out << "</svg>\n";
  write_file(file, out.str());
}

std::vector<fs::path> plot_run(const fs::path& run_dir) {
  const std::vector<MetricsRow> rows = read_rows(run_dir);
  if (rows.empty()) throw Error("plot: run " + run_dir.string() + " has no metrics rows");

  std::vector<fs::path> written;
  auto chart = [&](const char* name, const char* title, PlotMetric m) {
    const fs::path p = run_dir / name;
    write_line_chart(p, title, "iteration", metric_label(m), {series_for(rows, m, "")});
    written.push_back(p);
  };
  chart("grad_norm.svg", "Gradient norm of network parameters", PlotMetric::GradNorm);
  chart("nfe.svg", "Function evaluations per forward solve", PlotMetric::NfeAverage);
  chart("test_loss.svg", "Held-out negative log-likelihood", PlotMetric::TestLoss);
  chart("T_trace.svg", "Stopping time", PlotMetric::StoppingTime);

  const fs::path ck_path = run_dir / kCheckpointFile;
  if (fs::exists(ck_path)) {
    const Checkpoint ck = load_checkpoint(ck_path);
    const RunConfig cfg = config_from_json(ck.config);
    FlowModel model{ck.net, ck.t0, evaluation_time(cfg, ck.T), cfg.solver, {}};
    const std::size_t n = 2000;
    const Tensor model_pts = sample(model, n, mix_seed(cfg.seed, Stream::Sample, 0));
    const Tensor data_pts = make_test_set(cfg.dataset_id(), cfg.dataset.seed, n);
    const fs::path p = run_dir / "samples.svg";
    write_scatter(p, "Model samples vs data (" + cfg.dataset.name + ")",
                  {{"data", data_pts, "#999999"}, {"model", model_pts, "#d62728"}});
    written.push_back(p);
  }
  return written;
}

void plot_overlay(const fs::path& file, const std::string& title, PlotMetric metric,
                  const std::vector<std::pair<std::string, fs::path>>& runs) {
  std::vector<LineSeries> series;
  for (const auto& [label, dir] : runs) series.push_back(series_for(read_rows(dir), metric, label));
  write_line_chart(file, title, "iteration", metric_label(metric), series);
}

}  // namespace toflow
