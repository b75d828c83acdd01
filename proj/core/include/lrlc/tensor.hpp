#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <type_traits>
#include <utility>
#include <vector>

#include "lrlc/errors.hpp"

namespace lrlc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense N-dimensional array of real scalars, row-major, value semantics.
///
/// Canonical layouts in this library: activations N x H x W x C, filter
/// banks h x w x Cin x Cout. T is float (training) or double (gradient
/// checking and deterministic test mode).
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T{0}) {}

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    require<ShapeError>(data_.size() == shape_numel(shape_),
                        "tensor data length ", data_.size(),
                        " does not match shape ", shape_str(shape_));
  }

  Tensor(Shape shape, std::initializer_list<T> data)
      : Tensor(std::move(shape), std::vector<T>(data)) {}

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    for (T& x : t.data_) x = value;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  /// Row-major multi-index access; the index pack length must equal rank().
  template <typename... Is>
  T& operator()(Is... is) {
    return data_[offset(is...)];
  }
  template <typename... Is>
  const T& operator()(Is... is) const {
    return data_[offset(is...)];
  }

  /// Flat row-major offset of a multi-index.
  template <typename... Is>
  std::size_t offset(Is... is) const {
    static_assert((std::is_integral_v<Is> && ...));
    std::size_t idx[] = {static_cast<std::size_t>(is)...};
    std::size_t off = 0;
    for (std::size_t d = 0; d < sizeof...(Is); ++d) off = off * shape_[d] + idx[d];
    return off;
  }

  bool all_finite() const {
    for (T x : data_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  /// Returns a tensor with the same data and a new shape of equal element count.
  Tensor reshaped(Shape new_shape) const& {
    require<ShapeError>(shape_numel(new_shape) == data_.size(), "reshape ",
                        shape_str(shape_), " -> ", shape_str(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }
  Tensor reshaped(Shape new_shape) && {
    require<ShapeError>(shape_numel(new_shape) == data_.size(), "reshape ",
                        shape_str(shape_), " -> ", shape_str(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.data_ = std::move(data_);
    return t;
  }

  Tensor& operator+=(const Tensor& other) {
    require<ShapeError>(same_shape(other), "elementwise add ", shape_str(shape_),
                        " vs ", shape_str(other.shape_));
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& operator*=(T scalar) {
    for (T& x : data_) x *= scalar;
    return *this;
  }

  void fill(T value) {
    for (T& x : data_) x = value;
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require<ShapeError>(a.same_shape(b), "max_abs_diff shape mismatch ",
                      shape_str(a.shape()), " vs ", shape_str(b.shape()));
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* context) {
  require<DataError>(t.all_finite(), context, ": tensor contains NaN/Inf");
}

}  // namespace lrlc
