#include "toflow/metrics.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <numeric>

#include "toflow/errors.hpp"

namespace toflow {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kFields = 11;

void append_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void append_opt(std::string& out, const std::optional<double>& v) {
  if (v) append_double(out, *v);
}

[[noreturn]] void bad_row(std::size_t line_no, const std::string& msg) {
  throw IoError("metrics.csv line " + std::to_string(line_no) + ": " + msg);
}

double parse_double(const std::string& s, std::size_t line_no, const char* field) {
  if (s.empty()) bad_row(line_no, std::string("empty ") + field);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size() || errno == ERANGE) bad_row(line_no, std::string("bad ") + field + " '" + s + "'");
  return v;
}

std::size_t parse_count(const std::string& s, std::size_t line_no, const char* field) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    bad_row(line_no, std::string("bad ") + field + " '" + s + "'");
  }
  errno = 0;
  const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
  if (errno == ERANGE) bad_row(line_no, std::string(field) + " out of range");
  return static_cast<std::size_t>(v);
}

std::optional<double> parse_opt(const std::string& s, std::size_t line_no, const char* field) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, line_no, field);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

fs::path metrics_path(const fs::path& run_dir) { return run_dir / kMetricsFile; }

}  // namespace

std::string format_row(const MetricsRow& r) {
  std::string out = std::to_string(r.iteration);
  out += ',';
  append_double(out, r.train_loss);
  out += ',';
  append_opt(out, r.test_loss);
  out += ',';
  append_opt(out, r.bpd);
  out += ',';
  out += std::to_string(r.nfe_forward);
  out += ',';
  append_double(out, r.nfe_avg_window);
  out += ',';
  append_double(out, r.grad_norm_pre_clip);
  out += ',';
  append_double(out, r.clipped_fraction);
  out += ',';
  append_double(out, r.T_current);
  out += ',';
  append_double(out, r.t0_current);
  out += ',';
  append_double(out, r.wall_ms);
  return out;
}

MetricsRow parse_row(const std::string& line, std::size_t line_no) {
  const std::vector<std::string> f = split_csv(line);
  if (f.size() != kFields) {
    bad_row(line_no, "expected " + std::to_string(kFields) + " fields, got " + std::to_string(f.size()));
  }
  MetricsRow r;
  r.iteration = parse_count(f[0], line_no, "iteration");
  r.train_loss = parse_double(f[1], line_no, "train_loss");
  r.test_loss = parse_opt(f[2], line_no, "test_loss");
  r.bpd = parse_opt(f[3], line_no, "bpd");
  r.nfe_forward = parse_count(f[4], line_no, "nfe_forward");
  r.nfe_avg_window = parse_double(f[5], line_no, "nfe_avg_window");
  r.grad_norm_pre_clip = parse_double(f[6], line_no, "grad_norm_pre_clip");
  r.clipped_fraction = parse_double(f[7], line_no, "clipped_fraction");
  r.T_current = parse_double(f[8], line_no, "T_current");
  r.t0_current = parse_double(f[9], line_no, "t0_current");
  r.wall_ms = parse_double(f[10], line_no, "wall_ms");
  return r;
}

// ============================================================================
// MetricsWriter
// ============================================================================

MetricsWriter::MetricsWriter(const fs::path& run_dir) : path_(metrics_path(run_dir)) {
  std::error_code ec;
  fs::create_directories(run_dir, ec);
  if (ec) throw IoError("cannot create run directory " + run_dir.string() + ": " + ec.message());

  bool need_header = true;
  if (fs::exists(path_) && fs::file_size(path_) > 0) {
    std::ifstream in(path_);
    std::string header;
    std::getline(in, header);
    if (header != kMetricsHeader) throw IoError(path_.string() + ": unexpected header '" + header + "'");
    need_header = false;
  }
  file_ = std::fopen(path_.c_str(), "a");
  if (!file_) throw IoError("cannot open " + path_.string() + ": " + std::strerror(errno));
  if (need_header) {
    if (std::fprintf(file_, "%s\n", kMetricsHeader) < 0 || std::fflush(file_) != 0) {
      throw IoError("write failed on " + path_.string());
    }
  }
}

MetricsWriter::~MetricsWriter() {
  if (file_) std::fclose(file_);
}

void MetricsWriter::write(const MetricsRow& row) {
  const std::string line = format_row(row);
  if (std::fprintf(file_, "%s\n", line.c_str()) < 0 || std::fflush(file_) != 0) {
    throw IoError("write failed on " + path_.string());
  }
}

void write_row(const fs::path& run_dir, const MetricsRow& row) {
  MetricsWriter w(run_dir);
  w.write(row);
}

std::vector<MetricsRow> read_rows(const fs::path& run_dir) {
  const fs::path p = metrics_path(run_dir);
  std::ifstream in(p);
  if (!in) throw NotFoundError("no metrics file at " + p.string());
  std::vector<MetricsRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != kMetricsHeader) bad_row(1, "unexpected header '" + line + "'");
      continue;
    }
    if (line.empty()) continue;
    rows.push_back(parse_row(line, line_no));
  }
  return rows;
}

void truncate_rows(const fs::path& run_dir, std::size_t keep_below) {
  const fs::path p = metrics_path(run_dir);
  if (!fs::exists(p)) return;
  std::vector<MetricsRow> rows = read_rows(run_dir);
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << kMetricsHeader << '\n';
    for (const MetricsRow& r : rows) {
      if (r.iteration < keep_below) out << format_row(r) << '\n';
    }
    if (!out) throw IoError("cannot rewrite " + p.string());
  }
  fs::rename(tmp, p);
}

double bits_per_dim(double mean_log_likelihood, std::size_t d) {
  if (d == 0) throw Error("bits_per_dim: d must be >= 1");
  return -(mean_log_likelihood / static_cast<double>(d) - std::log(256.0)) / std::log(2.0);
}

// ============================================================================
// Series helpers
// ============================================================================

std::vector<double> moving_average(std::span<const double> values, std::size_t window) {
  if (window == 0) window = 1;
  std::vector<double> out(values.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    acc += values[i];
    if (i >= window) acc -= values[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

double total_variation(std::span<const double> values) {
  double tv = 0.0;
  for (std::size_t i = 1; i < values.size(); ++i) tv += std::abs(values[i] - values[i - 1]);
  return tv;
}

namespace {

std::vector<double> ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return 0.0;
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const double mean = 0.5 * static_cast<double>(n + 1);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace toflow
