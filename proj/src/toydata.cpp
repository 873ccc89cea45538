#include "toflow/toydata.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "toflow/errors.hpp"
#include "toflow/rng.hpp"

namespace toflow {

namespace tc = toy_constants;

namespace {

constexpr double kPi = std::numbers::pi;

struct Point {
  double x;
  double y;
};

using Normal = std::normal_distribution<double>;
using Uniform = std::uniform_real_distribution<double>;

Point eight_gaussians(Rng& rng) {
  const double s = 1.0 / std::sqrt(2.0);
  static constexpr double kDirs[8][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}, {1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  std::uniform_int_distribution<int> pick(0, 7);
  Normal n(0.0, 1.0);
  const int k = pick(rng);
  const double dx = k < 4 ? kDirs[k][0] : kDirs[k][0] * s;
  const double dy = k < 4 ? kDirs[k][1] : kDirs[k][1] * s;
  const double x = n(rng) * tc::kEightGaussiansStd + tc::kEightGaussiansScale * dx;
  const double y = n(rng) * tc::kEightGaussiansStd + tc::kEightGaussiansScale * dy;
  return {x / tc::kEightGaussiansShrink, y / tc::kEightGaussiansShrink};
}

// Four concentric circles of radius 0.25..1 (times 3), uniform angle.
Point rings(Rng& rng) {
  std::uniform_int_distribution<int> pick(1, 4);
  Uniform u(0.0, 2.0 * kPi);
  Normal n(0.0, tc::kRingsNoise);
  const double r = 0.25 * pick(rng);
  const double a = u(rng);
  return {r * std::cos(a) * tc::kRingsScale + n(rng), r * std::sin(a) * tc::kRingsScale + n(rng)};
}

Point swiss_roll(Rng& rng) {
  Uniform u(0.0, 1.0);
  Normal n(0.0, tc::kSwissRollNoise);
  const double t = 1.5 * kPi * (1.0 + 2.0 * u(rng));
  const double x = t * std::cos(t) + n(rng);
  const double y = t * std::sin(t) + n(rng);
  return {x / tc::kSwissRollShrink, y / tc::kSwissRollShrink};
}

Point moons(Rng& rng) {
  Uniform u(0.0, kPi);
  std::bernoulli_distribution upper(0.5);
  Normal n(0.0, tc::kMoonsNoise);
  const double t = u(rng);
  double x, y;
  if (upper(rng)) {
    x = std::cos(t);
    y = std::sin(t);
  } else {
    x = 1.0 - std::cos(t);
    y = 1.0 - std::sin(t) - 0.5;
  }
  x += n(rng);
  y += n(rng);
  return {2.0 * x - 1.0, 2.0 * y - 0.2};
}

Point two_spirals(Rng& rng) {
  Uniform u(0.0, 1.0);
  std::bernoulli_distribution flip(0.5);
  Normal n(0.0, 1.0);
  const double r = std::sqrt(u(rng)) * 540.0 * (2.0 * kPi) / 360.0;
  double x = -std::cos(r) * r + u(rng) * 0.5;
  double y = std::sin(r) * r + u(rng) * 0.5;
  if (flip(rng)) {
    x = -x;
    y = -y;
  }
  return {x / 3.0 + n(rng) * tc::kSpiralsNoise, y / 3.0 + n(rng) * tc::kSpiralsNoise};
}

Point circles(Rng& rng) {
  Uniform u(0.0, 2.0 * kPi);
  std::bernoulli_distribution inner(0.5);
  Normal n(0.0, tc::kCirclesNoise);
  const double a = u(rng);
  const double r = inner(rng) ? tc::kCirclesFactor : 1.0;
  return {(r * std::cos(a) + n(rng)) * tc::kCirclesScale, (r * std::sin(a) + n(rng)) * tc::kCirclesScale};
}

Point pinwheel(Rng& rng) {
  std::uniform_int_distribution<int> arm(0, tc::kPinwheelArms - 1);
  Normal n(0.0, 1.0);
  const double base = 2.0 * kPi * arm(rng) / tc::kPinwheelArms;
  const double fr = n(rng) * tc::kPinwheelRadialStd + 1.0;
  const double ft = n(rng) * tc::kPinwheelTangentialStd;
  const double angle = base + tc::kPinwheelRate * std::exp(fr);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {2.0 * (c * fr - s * ft), 2.0 * (s * fr + c * ft)};
}

Point checkerboard(Rng& rng) {
  Uniform u(0.0, 1.0);
  std::bernoulli_distribution low(0.5);
  const double x1 = u(rng) * 4.0 - 2.0;
  const double x2_ = u(rng) - (low(rng) ? 2.0 : 0.0);
  const double parity = std::fmod(std::floor(x1), 2.0);
  const double x2 = x2_ + (parity < 0 ? parity + 2.0 : parity);
  return {2.0 * x1, 2.0 * x2};
}

}  // namespace

std::string_view dataset_name(Dataset d) noexcept {
  switch (d) {
    case Dataset::EightGaussians: return "8gaussians";
    case Dataset::Rings: return "rings";
    case Dataset::SwissRoll: return "swissroll";
    case Dataset::Moons: return "moons";
    case Dataset::TwoSpirals: return "2spirals";
    case Dataset::Circles: return "circles";
    case Dataset::Pinwheel: return "pinwheel";
    case Dataset::Checkerboard: return "checkerboard";
  }
  return "?";
}

Dataset parse_dataset(std::string_view name) {
  for (Dataset d : kAllDatasets) {
    if (dataset_name(d) == name) return d;
  }
  throw ConfigError("dataset.name", "unknown dataset '" + std::string(name) + "'");
}

Tensor sample_batch(const DatasetSpec& spec, std::uint64_t call_index) {
  if (spec.batch_size == 0) throw ConfigError("schedule.batch_size", "must be >= 1");
  Rng rng = make_stream(spec.seed, Stream::Data, (static_cast<std::uint64_t>(spec.name) << 56) ^ call_index);
  Tensor out(spec.batch_size, 2);
  for (std::size_t i = 0; i < spec.batch_size; ++i) {
    Point p{};
    switch (spec.name) {
      case Dataset::EightGaussians: p = eight_gaussians(rng); break;
      case Dataset::Rings: p = rings(rng); break;
      case Dataset::SwissRoll: p = swiss_roll(rng); break;
      case Dataset::Moons: p = moons(rng); break;
      case Dataset::TwoSpirals: p = two_spirals(rng); break;
      case Dataset::Circles: p = circles(rng); break;
      case Dataset::Pinwheel: p = pinwheel(rng); break;
      case Dataset::Checkerboard: p = checkerboard(rng); break;
    }
    out(i, 0) = p.x;
    out(i, 1) = p.y;
  }
  return out;
}

bool checkerboard_black(double x, double y) noexcept {
  if (x < -4.0 || x >= 4.0 || y < -4.0 || y >= 4.0) return false;
  const auto i = static_cast<long>(std::floor(x / 2.0));
  const auto j = static_cast<long>(std::floor(y / 2.0));
  return ((i + j) % 2 + 2) % 2 == 0;
}

}  // namespace toflow
