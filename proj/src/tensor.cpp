#include "toflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <new>
#include <unordered_map>

#include "toflow/errors.hpp"

namespace toflow {

// ============================================================================
// Block pool
// ============================================================================

namespace detail {

namespace {

constexpr std::size_t kPoolMinDoubles = 2048;           // 16 KiB
constexpr std::size_t kPoolMaxCachedBytes = 768u << 20;  // per thread
// Every buffer starts on a cache line. Eigen peels unaligned heads before its
// vector loops, so a buffer's address would otherwise change summation order.
constexpr std::align_val_t kAlign{64};

struct BlockPool {
  std::unordered_map<std::size_t, std::vector<double*>> free;
  std::size_t cached_bytes = 0;

  ~BlockPool();
};

thread_local bool pool_alive = false;
thread_local BlockPool pool;

BlockPool::~BlockPool() {
  pool_alive = false;
  for (auto& [n, blocks] : free) {
    for (double* p : blocks) ::operator delete(p, kAlign);
  }
}

BlockPool* live_pool() noexcept {
  if (!pool_alive) {
    // First touch constructs the pool; after thread teardown it stays dead.
    static thread_local bool constructed = false;
    if (constructed) return nullptr;
    constructed = true;
    (void)pool.free.size();
    pool_alive = true;
  }
  return &pool;
}

}  // namespace

double* acquire_block(std::size_t n) {
  if (n >= kPoolMinDoubles) {
    if (BlockPool* bp = live_pool()) {
      auto it = bp->free.find(n);
      if (it != bp->free.end() && !it->second.empty()) {
        double* p = it->second.back();
        it->second.pop_back();
        bp->cached_bytes -= n * sizeof(double);
        return p;
      }
    }
  }
  return static_cast<double*>(::operator new(n * sizeof(double), kAlign));
}

void release_block(double* p, std::size_t n) noexcept {
  if (p == nullptr) return;
  if (n >= kPoolMinDoubles) {
    if (BlockPool* bp = live_pool()) {
      if (bp->cached_bytes + n * sizeof(double) <= kPoolMaxCachedBytes) {
        try {
          bp->free[n].push_back(p);
          bp->cached_bytes += n * sizeof(double);
          return;
        } catch (...) {
          // fall through and hand the block back
        }
      }
    }
  }
  ::operator delete(p, kAlign);
}

}  // namespace detail

std::string to_string(Shape s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : shape_{rows, cols}, data_(data.begin(), data.end()) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

Tensor Tensor::uninitialized(std::size_t rows, std::size_t cols) {
  Tensor t;
  t.shape_ = {rows, cols};
  t.data_.resize(rows * cols);
  return t;
}

Tensor Tensor::row(std::initializer_list<double> values) {
  return Tensor(1, values.size(), std::vector<double>(values));
}

Tensor Tensor::column(std::initializer_list<double> values) {
  return Tensor(values.size(), 1, std::vector<double>(values));
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged rows in Tensor::from_rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(r, c, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape_));
  return data_[0];
}

bool Tensor::all_finite() const noexcept {
  // NaN and +-Inf are exactly the values with an all-ones exponent.
  constexpr std::uint64_t kExp = 0x7ff0000000000000ULL;
  const double* p = data_.data();
  const std::size_t n = data_.size();
  std::uint64_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, p + i, sizeof bits);
    bad |= static_cast<std::uint64_t>((bits & kExp) == kExp);
  }
  return bad == 0;
}

void Tensor::require_finite(const char* what) const {
  if (!all_finite()) {
    throw NumericalBlowup(std::string("non-finite value in ") + what + " " + to_string(shape_));
  }
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("+= shape mismatch " + to_string(shape_) + " vs " + to_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) {
  a += b;
  return a;
}

Tensor operator*(double s, Tensor a) {
  a *= s;
  return a;
}

void axpy(double s, const Tensor& b, Tensor& a) {
  if (a.shape() != b.shape()) {
    throw ShapeError("axpy shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  double* out = a.data();
  const double* in = b.data();
  for (std::size_t i = 0; i < a.size(); ++i) out[i] += s * in[i];
}

double squared_norm(const Tensor& t) noexcept {
  double acc = 0.0;
  for (double v : t.values()) acc += v * v;
  return acc;
}

double max_abs(const Tensor& t) noexcept {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace toflow
