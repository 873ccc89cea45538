#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <regex>
#include <set>
#include <sstream>

#include "../support.hpp"
#include "toflow/checkpoint.hpp"
#include "toflow/errors.hpp"
#include "toflow/metrics.hpp"
#include "toflow/plot.hpp"
#include "toflow/trainer.hpp"

using namespace toflow;
using namespace toflow::testing;

namespace {

MetricsRow sample_row(std::size_t it) {
  MetricsRow r;
  r.iteration = it;
  r.train_loss = 3.1234567890123456 + it;
  r.test_loss = 0.1 * it + 1.0 / 3.0;
  r.bpd = std::nullopt;
  r.nfe_forward = 26 + it;
  r.nfe_avg_window = 26.5;
  r.grad_norm_pre_clip = 12.75;
  r.clipped_fraction = 0.2156862745098039;
  r.T_current = 0.55;
  r.t0_current = 0.0;
  r.wall_ms = 101.25;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.config = {{"seed", 3}};
  ck.iterations_done = 17;
  ck.net = DynamicsNet::initialized(2, 8, 2, 4);
  ck.weight_optimizer = AdamState(AdamConfig{});
  Rng rng(1);
  for (const Tensor* p : ck.net.parameters()) {
    ck.weight_optimizer.m.push_back(uniform_tensor(rng, p->rows(), p->cols()));
    ck.weight_optimizer.v.push_back(uniform_tensor(rng, p->rows(), p->cols(), 0, 1));
  }
  ck.weight_optimizer.step_count = 17;
  ck.T = 0.6180339887498949;
  ck.t0 = 0.01;
  ck.time_optimizer = AdamState(AdamConfig{.lr = 1e-2});
  ck.time_optimizer.step_count = 17;
  ck.time_optimizer.m = {Tensor::scalar(-0.3)};
  ck.time_optimizer.v = {Tensor::scalar(0.02)};
  ck.nfe_history = {20, 26, 26, 32};
  return ck;
}

}  // namespace

TEST_SUITE("metrics_io") {

TEST_CASE("bits per dim") {
  CHECK(bits_per_dim(0.0, 1) == 8.0);
  const double lp = -0.5 * std::log(2 * std::numbers::pi);
  CHECK(std::abs(bits_per_dim(lp, 1) - 9.32575) < 1e-4);
  CHECK(bits_per_dim(2 * lp, 2) == doctest::Approx(bits_per_dim(lp, 1)).epsilon(1e-15));
  // affine with slope -1/(d ln 2)
  const double s = (bits_per_dim(1.0, 3) - bits_per_dim(0.0, 3));
  CHECK(s == doctest::Approx(-1.0 / (3 * std::log(2.0))).epsilon(1e-12));
  CHECK_THROWS(bits_per_dim(0.0, 0));
}

TEST_CASE("csv header is the field list in order") {
  CHECK(std::string(kMetricsHeader) ==
        "iteration,train_loss,test_loss,bpd,nfe_forward,nfe_avg_window,grad_norm_pre_clip,clipped_fraction,"
        "T_current,t0_current,wall_ms");
}

TEST_CASE("write then read returns identical rows") {
  const fs::path dir = scratch_dir("metrics_rt");
  MetricsRow a = sample_row(0);
  MetricsRow b = sample_row(1);
  b.test_loss = std::nullopt;
  b.bpd = 8.5;
  write_row(dir, a);
  write_row(dir, b);
  const auto rows = read_rows(dir);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0] == a);
  CHECK(rows[1] == b);
  // header written once
  const std::string text = slurp(dir / kMetricsFile);
  CHECK(text.find(kMetricsHeader) == 0);
  CHECK(text.find(kMetricsHeader, 1) == std::string::npos);
}

TEST_CASE("header-only file reads as an empty list") {
  const fs::path dir = scratch_dir("metrics_empty");
  std::ofstream(dir / kMetricsFile) << kMetricsHeader << "\n";
  CHECK(read_rows(dir).empty());
}

TEST_CASE("empty file and wrong header") {
  const fs::path dir = scratch_dir("metrics_bad_header");
  std::ofstream(dir / kMetricsFile) << "";
  CHECK(read_rows(dir).empty());
  std::ofstream(dir / kMetricsFile) << "iteration,loss\n";
  CHECK_THROWS_AS(read_rows(dir), IoError);
  CHECK_THROWS_AS(read_rows(scratch_dir("metrics_missing")), NotFoundError);
}

TEST_CASE("malformed row is rejected with its line number") {
  const fs::path dir = scratch_dir("metrics_malformed");
  write_row(dir, sample_row(0));
  write_row(dir, sample_row(1));
  std::ofstream(dir / kMetricsFile, std::ios::app) << "2,abc,,,1,1,1,0,0.5,0,1\n";
  try {
    read_rows(dir);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_row("1,2,3", 9), IoError);
}

TEST_CASE("truncate keeps rows below the cut") {
  const fs::path dir = scratch_dir("metrics_trunc");
  for (std::size_t i = 0; i < 6; ++i) write_row(dir, sample_row(i));
  truncate_rows(dir, 4);
  const auto rows = read_rows(dir);
  REQUIRE(rows.size() == 4);
  CHECK(rows.back().iteration == 3);
}

TEST_CASE("series helpers") {
  const std::vector<double> v{1, 3, 2, 2, 5};
  CHECK(total_variation(v) == 2 + 1 + 0 + 3);
  const auto ma = moving_average(v, 2);
  CHECK(ma == std::vector<double>{1, 2, 2.5, 2, 3.5});
  const std::vector<double> x{0.01, 0.1, 1.0};
  CHECK(spearman(x, std::vector<double>{3, 2, 1}) == -1.0);
  CHECK(spearman(x, std::vector<double>{1, 2, 3}) == 1.0);
  CHECK(spearman(x, std::vector<double>{1, 1, 1}) == 0.0);
}

TEST_CASE("checkpoint round trip is bitwise faithful") {
  const fs::path dir = scratch_dir("ckpt_rt");
  const Checkpoint ck = sample_checkpoint();
  save_checkpoint(dir / "c.ckpt", ck);
  CHECK(fs::exists(dir / "c.ckpt.json"));
  const Checkpoint back = load_checkpoint(dir / "c.ckpt");
  CHECK(back.config == ck.config);
  CHECK(back.iterations_done == 17);
  CHECK(back.net == ck.net);
  CHECK(back.weight_optimizer.m == ck.weight_optimizer.m);
  CHECK(back.weight_optimizer.v == ck.weight_optimizer.v);
  CHECK(back.weight_optimizer.step_count == 17);
  CHECK(back.T == ck.T);
  CHECK(back.t0 == ck.t0);
  CHECK(back.time_optimizer.m == ck.time_optimizer.m);
  CHECK(back.time_optimizer.v == ck.time_optimizer.v);
  CHECK(back.nfe_history == ck.nfe_history);
}

TEST_CASE("flipped byte is detected as corruption") {
  const fs::path dir = scratch_dir("ckpt_flip");
  save_checkpoint(dir / "c.ckpt", sample_checkpoint());
  std::string bytes = slurp(dir / "c.ckpt");
  bytes[bytes.size() - 3] ^= 0x01;  // inside the checksum
  std::ofstream(dir / "c.ckpt", std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(load_checkpoint(dir / "c.ckpt"), CheckpointError);

  save_checkpoint(dir / "d.ckpt", sample_checkpoint());
  bytes = slurp(dir / "d.ckpt");
  bytes[40] ^= 0x10;  // inside the payload
  std::ofstream(dir / "d.ckpt", std::ios::binary | std::ios::trunc) << bytes;
  CHECK_THROWS_AS(load_checkpoint(dir / "d.ckpt"), CheckpointError);
}

TEST_CASE("truncated, foreign and versioned files") {
  const fs::path dir = scratch_dir("ckpt_bad");
  save_checkpoint(dir / "c.ckpt", sample_checkpoint());
  const std::string bytes = slurp(dir / "c.ckpt");
  std::ofstream(dir / "t.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt"), CheckpointError);
  std::ofstream(dir / "m.ckpt", std::ios::binary) << "NOTACKPT" << bytes.substr(8);
  CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt"), CheckpointError);
  std::string v = bytes;
  v[8] = 7;  // version field
  std::ofstream(dir / "v.ckpt", std::ios::binary) << v;
  try {
    load_checkpoint(dir / "v.ckpt");
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }
}

TEST_CASE("empty or missing checkpoint path is not-found") {
  CHECK_THROWS_AS(load_checkpoint(""), NotFoundError);
  CHECK_THROWS_AS(load_checkpoint(scratch_dir("ckpt_missing") / "none.ckpt"), NotFoundError);
}

TEST_CASE("plot: a single-row run") {
  const fs::path dir = scratch_dir("plot_one");
  write_row(dir, sample_row(0));
  const auto files = plot_run(dir);
  CHECK(files.size() == 4);
  for (const auto& f : files) {
    CHECK(fs::exists(f));
    CHECK(slurp(f).find("<circle") != std::string::npos);
  }
}

TEST_CASE("plot: an empty run is an error") {
  const fs::path dir = scratch_dir("plot_empty");
  std::ofstream(dir / kMetricsFile) << kMetricsHeader << "\n";
  CHECK_THROWS_AS(plot_run(dir), Error);
}

TEST_CASE("plot: a fixed-policy run has a flat T trace") {
  const fs::path dir = scratch_dir("plot_flat");
  for (std::size_t i = 0; i < 30; ++i) {
    MetricsRow r = sample_row(i);
    r.T_current = 0.5;
    write_row(dir, r);
  }
  plot_run(dir);
  const std::string svg = slurp(dir / "T_trace.svg");
  const std::regex poly("<polyline[^>]*points=\"([^\"]*)\"");
  std::smatch m;
  REQUIRE(std::regex_search(svg, m, poly));
  std::stringstream pts(m[1].str());
  std::string pair;
  std::set<std::string> ys;
  while (pts >> pair) ys.insert(pair.substr(pair.find(',') + 1));
  CHECK(ys.size() == 1);
}

TEST_CASE("plot: identity-flow samples overlay the data") {
  const fs::path dir = scratch_dir("plot_identity");
  RunConfig cfg = small_config(dir);
  Checkpoint ck;
  ck.config = to_json(cfg);
  ck.net = DynamicsNet(2, cfg.model.hidden, cfg.model.depth);
  ck.T = cfg.policy.T0;
  save_checkpoint(dir / kCheckpointFile, ck);
  write_row(dir, sample_row(0));
  const auto files = plot_run(dir);
  REQUIRE(fs::exists(dir / "samples.svg"));
  CHECK(files.size() == 5);
  const std::string svg = slurp(dir / "samples.svg");
  std::size_t n = 0;
  for (std::size_t p = svg.find("<circle"); p != std::string::npos; p = svg.find("<circle", p + 1)) ++n;
  CHECK(n >= 2000);
}

}  // TEST_SUITE
