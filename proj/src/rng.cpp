#include "toflow/rng.hpp"

namespace toflow {

namespace {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
  h = splitmix64(h ^ splitmix64(index + 0x8CB92BA72F3D8DD7ULL));
  return h;
}

Rng make_stream(std::uint64_t seed, Stream stream, std::uint64_t index) {
  return Rng(mix_seed(seed, static_cast<std::uint64_t>(stream), index));
}

Tensor normal_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Tensor rademacher_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  std::uint64_t bits = 0;
  int left = 0;
  for (double& v : t.values()) {
    if (left == 0) {
      bits = rng();
      left = 64;
    }
    v = (bits & 1ULL) ? 1.0 : -1.0;
    bits >>= 1;
    --left;
  }
  return t;
}

}  // namespace toflow
