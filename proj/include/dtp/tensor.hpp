#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dtp/error.hpp"

namespace dtp {

using Shape = std::vector<int>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

/// Dense row-major tensor. 4-D tensors use NCHW order.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(std::move(shape)), data_(element_count(shape_), fill) {
    for (int d : shape_) {
      if (d < 0) throw ShapeError("negative dimension in shape " + to_string(shape_));
    }
  }
  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_)) {
      throw ShapeError("value count " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(int n, int c, int h, int w) noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(int n, int c, int h, int w) const noexcept {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  T& at(int h, int w) noexcept { return data_[static_cast<std::size_t>(h) * shape_[1] + w]; }
  const T& at(int h, int w) const noexcept { return data_[static_cast<std::size_t>(h) * shape_[1] + w]; }
  T& at(int n, int h, int w) noexcept {
    return data_[(static_cast<std::size_t>(n) * shape_[1] + h) * shape_[2] + w];
  }
  const T& at(int n, int h, int w) const noexcept {
    return data_[(static_cast<std::size_t>(n) * shape_[1] + h) * shape_[2] + w];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void reshape(Shape shape) {
    if (element_count(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    shape_ = std::move(shape);
  }

  /// Pointer to the start of sample `n` along axis 0.
  T* sample(int n) noexcept { return data_.data() + static_cast<std::size_t>(n) * (size() / shape_[0]); }
  const T* sample(int n) const noexcept {
    return data_.data() + static_cast<std::size_t>(n) * (size() / shape_[0]);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

inline void require_shape(const Shape& got, const Shape& want, const std::string& what) {
  if (got != want) {
    throw ShapeError(what + ": expected shape " + to_string(want) + ", got " + to_string(got));
  }
}

/// Stack two equally shaped tensors along axis 0.
template <typename T>
Tensor<T> stack_batch(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("stack_batch: shapes differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Shape s = a.shape();
  s[0] *= 2;
  Tensor<T> out(s);
  std::copy(a.storage().begin(), a.storage().end(), out.data());
  std::copy(b.storage().begin(), b.storage().end(), out.data() + a.size());
  return out;
}

/// Inverse of stack_batch: first and second half along axis 0.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_batch(const Tensor<T>& x) {
  if (x.dim(0) % 2 != 0) throw ShapeError("split_batch: odd batch " + to_string(x.shape()));
  Shape s = x.shape();
  s[0] /= 2;
  Tensor<T> a(s), b(s);
  std::copy(x.data(), x.data() + a.size(), a.data());
  std::copy(x.data() + a.size(), x.data() + x.size(), b.data());
  return {std::move(a), std::move(b)};
}

}  // namespace dtp
