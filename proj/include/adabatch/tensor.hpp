#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "adabatch/error.hpp"

namespace adabatch {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array, last axis fastest. Batched matrices keep samples in
// columns (features x r); image stacks are [r][channels][height][width].
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_volume(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_volume(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  // Row-major literal: matrix(2, 2, {1, 2, 3, 4}).
  static BasicTensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values) {
    return BasicTensor({rows, cols}, std::vector<T>(values));
  }

  static BasicTensor vector(std::initializer_list<T> values) {
    return BasicTensor({values.size()}, std::vector<T>(values));
  }

  static BasicTensor identity(std::size_t n) {
    BasicTensor eye({n, n});
    for (std::size_t i = 0; i < n; ++i) eye(i, i) = T{1};
    return eye;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.size() >= 2 ? shape_[1] : 1; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  T& operator()(std::size_t a, std::size_t b, std::size_t c) {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }
  const T& operator()(std::size_t a, std::size_t b, std::size_t c) const {
    return data_[(a * shape_[1] + b) * shape_[2] + c];
  }

  T& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }
  const T& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 4) {
      throw DimensionError("tensor rank must be 1..4, got shape " + shape_string(shape));
    }
    for (std::size_t e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;

enum class Reduce { sum, mean };

// C = A * B. Summation over k is ascending, so results are bit-reproducible.
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

template <class T>
BasicTensor<T> hadamard(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Per-row reduction of an m x r matrix; ascending column order.
template <class T>
BasicTensor<T> row_reduce(const BasicTensor<T>& a, Reduce kind);

// a += column vector v broadcast across every column (the b e^T form).
template <class T>
void add_column_broadcast(BasicTensor<T>& a, const BasicTensor<T>& v);

// a += scale * b, same shape.
template <class T>
void axpy(BasicTensor<T>& a, T scale, const BasicTensor<T>& b);

template <class T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b);

void require_same_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace adabatch
