#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "toflow/tensor.hpp"

namespace toflow {

// The eight 2-D benchmark densities. Scales follow the usual FFJORD
// generators (roughly within [-4, 4]^2).
enum class Dataset { EightGaussians, Rings, SwissRoll, Moons, TwoSpirals, Circles, Pinwheel, Checkerboard };

inline constexpr std::array<Dataset, 8> kAllDatasets = {
    Dataset::EightGaussians, Dataset::Rings,   Dataset::SwissRoll, Dataset::Moons,
    Dataset::TwoSpirals,     Dataset::Circles, Dataset::Pinwheel,  Dataset::Checkerboard};

std::string_view dataset_name(Dataset d) noexcept;
// Throws ConfigError("dataset.name") for unknown names.
Dataset parse_dataset(std::string_view name);

// Noise levels and scales. Exposed so reproductions can align with other
// codebases; the defaults are the common published values.
namespace toy_constants {
inline constexpr double kEightGaussiansScale = 4.0;
inline constexpr double kEightGaussiansStd = 0.5;
inline constexpr double kEightGaussiansShrink = 1.414;
inline constexpr double kRingsNoise = 0.08;
inline constexpr double kRingsScale = 3.0;
inline constexpr double kSwissRollNoise = 1.0;
inline constexpr double kSwissRollShrink = 5.0;
inline constexpr double kMoonsNoise = 0.1;
inline constexpr double kSpiralsNoise = 0.1;
inline constexpr double kCirclesNoise = 0.08;
inline constexpr double kCirclesFactor = 0.5;
inline constexpr double kCirclesScale = 3.0;
inline constexpr double kPinwheelRadialStd = 0.3;
inline constexpr double kPinwheelTangentialStd = 0.1;
inline constexpr double kPinwheelRate = 0.25;
inline constexpr int kPinwheelArms = 5;
}  // namespace toy_constants

struct DatasetSpec {
  Dataset name = Dataset::Checkerboard;
  std::uint64_t seed = 0;
  std::size_t batch_size = 512;
};

// Deterministic in (name, seed, call_index). Different call indices give
// independent batches.
Tensor sample_batch(const DatasetSpec& spec, std::uint64_t call_index = 0);

// Checkerboard support: unit-cell indices (floor(x/2), floor(y/2)) of equal
// parity, inside [-4, 4)^2.
bool checkerboard_black(double x, double y) noexcept;

}  // namespace toflow
