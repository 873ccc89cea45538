#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace toflow {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(Shape s);

namespace detail {

// All blocks are 64-byte aligned. Large blocks are recycled through a per-thread free list; fresh pages are
// expensive to fault in and the tape churns through same-sized buffers.
double* acquire_block(std::size_t n);
void release_block(double* p, std::size_t n) noexcept;

// Leaves doubles uninitialized on resize so kernels that overwrite every
// entry do not pay for a zero fill.
template <typename T>
struct default_init_allocator : std::allocator<T> {
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U>;
  };
  using std::allocator<T>::allocator;

  T* allocate(std::size_t n) {
    if constexpr (std::is_same_v<T, double>) {
      return acquire_block(n);
    } else {
      return std::allocator<T>::allocate(n);
    }
  }
  void deallocate(T* p, std::size_t n) noexcept {
    if constexpr (std::is_same_v<T, double>) {
      release_block(p, n);
    } else {
      std::allocator<T>::deallocate(p, n);
    }
  }

  template <typename U>
  void construct(U* p) noexcept {
    ::new (static_cast<void*>(p)) U;
  }
  template <typename U, typename... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

// Dense row-major matrix of doubles. Vectors are 1xN or Nx1, scalars 1x1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

  // Contents are unspecified; for kernels that write every entry.
  static Tensor uninitialized(std::size_t rows, std::size_t cols);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }
  static Tensor row(std::initializer_list<double> values);
  static Tensor column(std::initializer_list<double> values);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  std::size_t rows() const noexcept { return shape_.rows; }
  std::size_t cols() const noexcept { return shape_.cols; }
  std::size_t size() const noexcept { return data_.size(); }
  Shape shape() const noexcept { return shape_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Value of a 1x1 tensor; throws ShapeError otherwise.
  double item() const;

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool all_finite() const noexcept;
  // Throws NumericalBlowup naming `what` when any entry is NaN or Inf.
  void require_finite(const char* what) const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_{};
  std::vector<double, detail::default_init_allocator<double>> data_;
};

// Elementwise helpers used outside the tape (solver bookkeeping, optimizers).
Tensor operator+(Tensor a, const Tensor& b);
Tensor operator*(double s, Tensor a);
// a += s * b
void axpy(double s, const Tensor& b, Tensor& a);
double squared_norm(const Tensor& t) noexcept;
double max_abs(const Tensor& t) noexcept;

}  // namespace toflow
