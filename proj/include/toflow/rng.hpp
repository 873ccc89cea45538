#pragma once

#include <cstdint>
#include <random>

#include "toflow/tensor.hpp"

namespace toflow {

// Named random streams. Every draw in the library comes from
// make_stream(seed, stream, index), so results depend only on those three
// numbers and never on call order or thread count.
enum class Stream : std::uint64_t {
  Init = 1,
  Data = 2,
  TestSet = 3,
  TrainProbe = 4,
  TemporalProbe = 5,
  Steer = 6,
  Sample = 7,
  EvalProbe = 8,
};

using Rng = std::mt19937_64;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept;
inline std::uint64_t mix_seed(std::uint64_t seed, Stream stream, std::uint64_t index) noexcept {
  return mix_seed(seed, static_cast<std::uint64_t>(stream), index);
}
Rng make_stream(std::uint64_t seed, Stream stream, std::uint64_t index = 0);

Tensor normal_tensor(Rng& rng, std::size_t rows, std::size_t cols);
Tensor rademacher_tensor(Rng& rng, std::size_t rows, std::size_t cols);

}  // namespace toflow
