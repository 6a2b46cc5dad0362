#include "discrim/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <functional>
#include <limits>

namespace discrim {

namespace {

using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

ConstRowMajorMap as_matrix(const Tensor& t) {
  return ConstRowMajorMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                          static_cast<Eigen::Index>(t.dim(1)));
}

RowMajorMap as_matrix(Tensor& t) {
  return RowMajorMap(t.data_mut().data(), static_cast<Eigen::Index>(t.dim(0)),
                     static_cast<Eigen::Index>(t.dim(1)));
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(fmt::format("{}: expected a matrix, got shape {}", what, shape_string(t.shape())));
  }
}

double apply(BinaryOp op, double x, double y) {
  switch (op) {
    case BinaryOp::add: return x + y;
    case BinaryOp::sub: return x - y;
    case BinaryOp::mul: return x * y;
    case BinaryOp::div: return x / y;
  }
  return 0.0;
}

const char* op_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "?";
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, "x")); }

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  if (!std::isfinite(fill)) throw NumericError("Tensor: non-finite fill value");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError(fmt::format("Tensor: shape {} needs {} values, got {}", shape_string(shape_),
                                 shape_size(shape_), data_.size()));
  }
  check_finite("Tensor");
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
  return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError(fmt::format("axis {} out of range for shape {}", axis, shape_string(shape_)));
  }
  return shape_[axis];
}

Shape Tensor::strides() const {
  Shape s(shape_.size(), 1);
  for (std::size_t d = shape_.size(); d-- > 1;) s[d - 1] = s[d] * shape_[d];
  return s;
}

std::size_t Tensor::offset(std::span<const std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError(fmt::format("index rank {} does not match shape {}", index.size(), shape_string(shape_)));
  }
  std::size_t off = 0;
  for (std::size_t d = 0; d < index.size(); ++d) {
    if (index[d] >= shape_[d]) {
      throw ShapeError(fmt::format("index {} out of range on axis {} of shape {}", index[d], d,
                                   shape_string(shape_)));
    }
    off = off * shape_[d] + index[d];
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(std::span<const std::size_t>(index.begin(), index.size()))];
}

std::span<const double> Tensor::row(std::size_t i) const {
  const std::size_t width = data_.size() / dim(0);
  return std::span<const double>(data_).subspan(i * width, width);
}

std::span<double> Tensor::row_mut(std::size_t i) {
  const std::size_t width = data_.size() / dim(0);
  return std::span<double>(data_).subspan(i * width, width);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError(fmt::format("cannot reshape {} to {}", shape_string(shape_), shape_string(shape)));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(std::string_view what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(fmt::format("{}: non-finite value {} at flat index {}", what, data_[i], i));
    }
  }
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shape mismatch {} vs {}", op_name(op), shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
  Tensor out(a.shape());
  auto o = out.data_mut();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], y[i]);
  out.check_finite(op_name(op));
  return out;
}

Tensor elementwise(BinaryOp op, const Tensor& a, double b) {
  Tensor out(a.shape());
  auto o = out.data_mut();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(op, x[i], b);
  out.check_finite(op_name(op));
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError(fmt::format("matmul: inner dimensions differ ({} vs {})", shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
  Tensor out({a.dim(0), b.dim(1)});
  if (a.dim(1) == 0) return out;
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b);
  out.check_finite("matmul");
  return out;
}

Tensor matmul_transposed_a(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_transposed_a");
  require_matrix(b, "matmul_transposed_a");
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError(fmt::format("matmul_transposed_a: row counts differ ({} vs {})",
                                 shape_string(a.shape()), shape_string(b.shape())));
  }
  Tensor out({a.dim(1), b.dim(1)});
  if (a.dim(0) == 0) return out;
  as_matrix(out).noalias() = as_matrix(a).transpose() * as_matrix(b);
  out.check_finite("matmul_transposed_a");
  return out;
}

Tensor matmul_transposed_b(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_transposed_b");
  require_matrix(b, "matmul_transposed_b");
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError(fmt::format("matmul_transposed_b: column counts differ ({} vs {})",
                                 shape_string(a.shape()), shape_string(b.shape())));
  }
  Tensor out({a.dim(0), b.dim(0)});
  if (a.dim(1) == 0) return out;
  as_matrix(out).noalias() = as_matrix(a) * as_matrix(b).transpose();
  out.check_finite("matmul_transposed_b");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor out({a.dim(1), a.dim(0)});
  as_matrix(out) = as_matrix(a).transpose();
  return out;
}

Tensor reduce(ReduceOp op, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw ShapeError(fmt::format("reduce: axis {} invalid for shape {}", axis, shape_string(a.shape())));
  }
  const auto& shape = a.shape();
  const std::size_t extent = shape[axis];
  if (extent == 0 && (op == ReduceOp::max || op == ReduceOp::argmax)) {
    throw ShapeError("reduce: max/argmax over an empty axis");
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= shape[d];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];

  Shape out_shape;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d != axis) out_shape.push_back(shape[d]);
  }
  Tensor out(out_shape);
  auto o = out.data_mut();
  auto x = a.data();
  // Each output accumulates its axis elements in index order, so the result is
  // independent of how the axis is laid out in memory.
  for (std::size_t i = 0; i < outer; ++i) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = i * extent * inner + j;
      double acc = 0.0;
      std::size_t best = 0;
      switch (op) {
        case ReduceOp::sum:
        case ReduceOp::mean:
          for (std::size_t k = 0; k < extent; ++k) acc += x[base + k * inner];
          if (op == ReduceOp::mean) acc = extent == 0 ? 0.0 : acc / static_cast<double>(extent);
          break;
        case ReduceOp::max:
        case ReduceOp::argmax:
          acc = x[base];
          for (std::size_t k = 1; k < extent; ++k) {
            if (x[base + k * inner] > acc) {
              acc = x[base + k * inner];
              best = k;
            }
          }
          if (op == ReduceOp::argmax) acc = static_cast<double>(best);
          break;
      }
      o[i * inner + j] = acc;
    }
  }
  out.check_finite("reduce");
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("max_abs_diff: shape mismatch {} vs {}", shape_string(a.shape()),
                                 shape_string(b.shape())));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace discrim
