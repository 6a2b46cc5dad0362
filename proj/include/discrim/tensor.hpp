#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "discrim/error.hpp"

namespace discrim {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Every public operation returns finite values or throws NumericError.
/// Element mutation goes through `data_mut()` / `operator[]`, which are
/// builder-style accessors meant for single-threaded construction; once a
/// tensor is shared it should be treated as immutable.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor vector(std::initializer_list<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data_mut() { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  Shape strides() const;
  std::size_t offset(std::span<const std::size_t> index) const;
  double at(std::initializer_list<std::size_t> index) const;

  // View of row `i` of the tensor flattened to [dim(0), size/dim(0)].
  std::span<const double> row(std::size_t i) const;
  std::span<double> row_mut(std::size_t i);

  Tensor reshaped(Shape shape) const;

  // Throws NumericError naming `what` when any element is NaN or infinite.
  void check_finite(std::string_view what) const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{0};
  std::vector<double> data_;
};

enum class BinaryOp { add, sub, mul, div };
enum class ReduceOp { sum, mean, max, argmax };

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(BinaryOp op, const Tensor& a, double b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor operator*(const Tensor& a, double s) { return elementwise(BinaryOp::mul, a, s); }

// [M x K] * [K x N] -> [M x N]
Tensor matmul(const Tensor& a, const Tensor& b);
// Variants with an implicitly transposed operand; avoid materializing the transpose.
Tensor matmul_transposed_a(const Tensor& a, const Tensor& b);  // a^T * b
Tensor matmul_transposed_b(const Tensor& a, const Tensor& b);  // a * b^T
Tensor transpose(const Tensor& a);

// Reduces along `axis`; the result drops that axis. argmax stores indices as doubles.
Tensor reduce(ReduceOp op, const Tensor& a, std::size_t axis);

// Largest absolute element difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace discrim
