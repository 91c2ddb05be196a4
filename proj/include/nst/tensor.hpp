#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>

#include "nst/error.hpp"

namespace nst {

using Index = Eigen::Index;

/// Extents of a rank-4 tensor in (batch, channels, height, width) order.
struct Shape {
  Index n = 0;
  Index c = 0;
  Index h = 0;
  Index w = 0;

  constexpr Index count() const { return n * c * h * w; }
  constexpr Index plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

/// Dense row-major N×C×H×W array with value semantics.
///
/// Storage is an Eigen column array so elementwise expressions can be written
/// directly against `array()`; the row-major layout is a property of the
/// indexing, not of Eigen.
template <typename Scalar>
class BasicTensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape) : shape_(shape), data_(Storage::Zero(checked(shape))) {}

  BasicTensor(Shape shape, Storage data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != checked(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  BasicTensor(Shape shape, std::initializer_list<Scalar> values) : BasicTensor(shape) {
    if (static_cast<Index>(values.size()) != data_.size()) {
      throw ShapeError("initializer has " + std::to_string(values.size()) +
                       " values for shape " + shape.str());
    }
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static BasicTensor constant(Shape shape, Scalar value) {
    return BasicTensor(shape, Storage::Constant(checked(shape), value));
  }

  static BasicTensor scalar(Scalar value) { return constant({1, 1, 1, 1}, value); }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Index offset(Index n, Index c, Index h, Index w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  Scalar& operator()(Index n, Index c, Index h, Index w) { return data_[offset(n, c, h, w)]; }
  Scalar operator()(Index n, Index c, Index h, Index w) const { return data_[offset(n, c, h, w)]; }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Pointer to the H×W plane of (n, c).
  Scalar* plane(Index n, Index c) { return data_.data() + offset(n, c, 0, 0); }
  const Scalar* plane(Index n, Index c) const { return data_.data() + offset(n, c, 0, 0); }

  /// The single value of a 1×1×1×1 tensor.
  Scalar item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor of shape " + shape_.str());
    return data_[0];
  }

  bool all_finite() const { return data_.isFinite().all(); }

  BasicTensor reshaped(Shape shape) const {
    if (shape.count() != shape_.count()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return BasicTensor(shape, data_);
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && (a.data_ == b.data_).all();
  }

 private:
  static Index checked(const Shape& s) {
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
      throw ShapeError("negative extent in shape " + s.str());
    }
    return s.count();
  }

  Shape shape_{};
  Storage data_{};
};

using Tensor = BasicTensor<float>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  return BasicTensor<To>(t.shape(), t.array().template cast<To>());
}

/// Throws NumericError naming `what` when `t` holds NaN or Inf.
template <typename Scalar>
void require_finite(const BasicTensor<Scalar>& t, const std::string& what) {
  if (!t.all_finite()) throw NumericError("non-finite values in " + what);
}

}  // namespace nst
