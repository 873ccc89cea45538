#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "toflow/autodiff.hpp"
#include "toflow/cnf.hpp"
#include "toflow/config.hpp"
#include "toflow/rng.hpp"
#include "toflow/tensor.hpp"

namespace toflow::testing {

namespace fs = std::filesystem;

// Fresh empty directory under the system temp dir.
inline fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("toflow_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline Tensor uniform_tensor(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

inline Tensor scaled(Tensor t, double s) {
  t *= s;
  return t;
}

// ============================================================================
// Random scalar compositions over the tape's op set
// ============================================================================

// A random chain of ops applied to a 3x4 input, reduced to a scalar. The
// constant operands are drawn once so the function is deterministic.
struct RandomComposition {
  std::vector<int> ops;
  std::vector<Tensor> constants;
  int reduction = 0;

  ad::Var operator()(ad::Tape& t, ad::Var x) const {
    ad::Var h = x;
    std::size_t k = 0;
    for (int op : ops) {
      const Tensor& c = constants[k++];
      const Shape s = t.value(h).shape();
      switch (op) {
        case 0: h = ad::add(t, h, t.leaf(c)); break;
        case 1: h = ad::sub(t, t.leaf(c), h); break;
        case 2: h = ad::mul(t, h, t.leaf(c)); break;
        case 3: h = ad::scale(t, h, c[0]); break;
        case 4: h = ad::shift(t, h, c[0]); break;
        case 5: h = ad::tanh(t, h); break;
        case 6: h = ad::matmul(t, h, t.leaf(c)); break;       // c: cols x cols
        case 7: h = ad::matmul_nt(t, h, t.leaf(c)); break;    // c: cols x cols
        case 8: h = ad::add_rowwise(t, h, t.leaf(c)); break;  // c: 1 x cols
        case 9: {
          // [h | tanh(h)] then keep a window of the original width
          const ad::Var cat = ad::concat_cols(t, h, ad::tanh(t, h));
          const std::size_t b = static_cast<std::size_t>(c[0]) % (s.cols + 1);
          h = ad::slice_cols(t, cat, b, b + s.cols);
          break;
        }
        case 10: {
          // row_sum broadcast back over the columns by a ones row
          const ad::Var rs = ad::row_sum(t, h);
          h = ad::add(t, h, ad::matmul(t, rs, t.leaf(Tensor(1, s.cols, 0.3))));
          break;
        }
        case 11: {
          const ad::Var m = ad::mean(t, h);
          h = ad::mul(t, h, ad::broadcast(t, ad::shift(t, m, 1.0), s));
          break;
        }
        default: break;
      }
    }
    switch (reduction) {
      case 0: return ad::sum(t, h);
      case 1: return ad::mean(t, h);
      default: return ad::dot(t, h, t.leaf(constants.back()));
    }
  }
};

inline RandomComposition random_composition(Rng& rng, std::size_t rows = 3, std::size_t cols = 4) {
  RandomComposition f;
  std::uniform_int_distribution<int> pick(0, 11);
  std::uniform_int_distribution<int> len(3, 7);
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    const int op = pick(rng);
    f.ops.push_back(op);
    switch (op) {
      case 0: case 1: case 2: f.constants.push_back(uniform_tensor(rng, rows, cols)); break;
      case 3: f.constants.push_back(uniform_tensor(rng, 1, 1, 0.5, 1.5)); break;
      case 6: case 7: f.constants.push_back(uniform_tensor(rng, cols, cols, -0.7, 0.7)); break;
      case 8: f.constants.push_back(uniform_tensor(rng, 1, cols)); break;
      case 9: f.constants.push_back(Tensor::scalar(static_cast<double>(rng() % 8))); break;
      default: f.constants.push_back(uniform_tensor(rng, 1, 1)); break;
    }
    // Keep magnitudes O(1) after products.
    if (op == 2 || op == 6 || op == 7 || op == 10 || op == 11) {
      f.ops.push_back(5);
      f.constants.push_back(Tensor::scalar(0.0));
    }
  }
  f.reduction = static_cast<int>(rng() % 3);
  f.constants.push_back(uniform_tensor(rng, rows, cols));
  return f;
}

// ============================================================================
// Closed forms for the 1-D linear flow f = a z
// ============================================================================

inline double log_normal_1d(double z) { return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi); }

// Loss -mean log p(x) with z(T) = x e^{a(T-t0)} and int Tr = a (T - t0).
inline double linear_flow_loss(double a, double t0, double T, const Tensor& x) {
  const double tau = T - t0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) s += log_normal_1d(x[i] * std::exp(a * tau)) + a * tau;
  return -s / static_cast<double>(x.rows());
}

inline double linear_flow_dL_dT(double a, double t0, double T, const Tensor& x) {
  const double tau = T - t0;
  double s = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) s += a * x[i] * x[i] * std::exp(2.0 * a * tau);
  return s / static_cast<double>(x.rows()) - a;
}

inline SolverConfig tight_solver(double tol = 1e-8) {
  SolverConfig s;
  s.rtol = tol;
  s.atol = tol;
  return s;
}

inline TraceMode exact_trace() {
  TraceMode m;
  m.kind = TraceKind::Exact;
  return m;
}

// Small, quick configuration for loop-level tests.
inline RunConfig small_config(const fs::path& out_dir, const std::string& policy = "fixed") {
  nlohmann::json tree = {{"dataset", {{"name", "8gaussians"}, {"n_test", 256}}},
                         {"model", {{"hidden", 16}, {"depth", 2}}},
                         {"policy", {{"tag", policy}}},
                         {"schedule",
                          {{"iterations", 12},
                           {"batch_size", 64},
                           {"eval_every", 5},
                           {"checkpoint_every", 4},
                           {"nfe_window", 5},
                           {"eval_chunk", 128}}},
                         {"seed", 7},
                         {"out_dir", out_dir.string()}};
  return load_config(tree, {});
}

}  // namespace toflow::testing
