#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "glyphforge/error.hpp"

namespace glyphforge {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  return os.str();
}

/// Dense row-major N-d array. float for training and inference, double for
/// gradient checking.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    require(data_.size() == shape_numel(shape_), ErrorCode::shape_mismatch,
            "data length " + std::to_string(data_.size()) + " does not match shape " + shape_str(shape_));
  }

  static BasicTensor from(std::initializer_list<std::size_t> shape, std::initializer_list<T> values) {
    return BasicTensor(Shape(shape), std::vector<T>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Same data, new shape with equal element count.
  BasicTensor reshaped(Shape shape) const& {
    BasicTensor out = *this;
    return std::move(out).reshaped(std::move(shape));
  }
  BasicTensor reshaped(Shape shape) && {
    require(shape_numel(shape) == data_.size(), ErrorCode::shape_mismatch,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    shape_ = std::move(shape);
    validate_shape();
    return std::move(*this);
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor&) const = default;

 private:
  void validate_shape() const {
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      require(shape_[i] >= 1, ErrorCode::shape_mismatch,
              "extent of axis " + std::to_string(i) + " must be >= 1 (shape " + shape_str(shape_) + ")");
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Throws a shape_mismatch naming the axis when actual != expected.
inline void expect_extent(const char* op, const char* axis, std::size_t actual, std::size_t expected) {
  if (actual != expected) {
    fail(ErrorCode::shape_mismatch, std::string(op) + ": axis '" + axis + "' has extent " +
                                        std::to_string(actual) + ", expected " + std::to_string(expected));
  }
}

inline void expect_rank(const char* op, const Shape& shape, std::size_t rank) {
  if (shape.size() != rank) {
    fail(ErrorCode::shape_mismatch, std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                                        shape_str(shape));
  }
}

}  // namespace glyphforge
