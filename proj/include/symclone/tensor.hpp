#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "symclone/error.hpp"

namespace symclone {

enum class DType { f32, f64 };

using Shape = std::vector<std::int64_t>;

std::string to_string(DType dtype);
std::string shape_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Invokes `fn.template operator()<T>()` with T = float or double.
template <class Fn>
decltype(auto) dispatch(DType dtype, Fn&& fn) {
  if (dtype == DType::f32) return fn.template operator()<float>();
  return fn.template operator()<double>();
}

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

/// Dense row-major array of f32 or f64 values. Copies are deep.
class Tensor {
 public:
  Tensor() : Tensor(Shape{0}) {}
  explicit Tensor(Shape shape, DType dtype = DType::f32);

  static Tensor zeros(Shape shape, DType dtype = DType::f32) { return Tensor(std::move(shape), dtype); }
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from(Shape shape, std::span<const double> values, DType dtype = DType::f32);
  static Tensor from(Shape shape, std::initializer_list<double> values, DType dtype = DType::f32);
  static Tensor scalar(double value, DType dtype = DType::f32) { return full({1}, value, dtype); }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t numel() const noexcept;
  DType dtype() const noexcept { return dtype_; }

  template <class T>
  std::span<T> data() {
    check_dtype<T>();
    return std::get<std::vector<T>>(buffer_);
  }
  template <class T>
  std::span<const T> data() const {
    check_dtype<T>();
    return std::get<std::vector<T>>(buffer_);
  }

  /// Flat element access converted to double; for tests and small utilities.
  double at(std::int64_t flat_index) const;
  void set(std::int64_t flat_index, double value);
  double item() const;
  std::vector<double> to_vector() const;

  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;
  Tensor to(DType dtype) const;

  void fill(double value);
  /// this += other (same shape and dtype).
  void add_(const Tensor& other);
  void scale_(double factor);
  bool all_finite() const;

  bool bit_equal(const Tensor& other) const;

 private:
  template <class T>
  void check_dtype() const {
    if (dtype_ != dtype_of<T>()) {
      throw ShapeError("tensor dtype is " + to_string(dtype_) + ", accessed as " + to_string(dtype_of<T>()));
    }
  }

  Shape shape_;
  DType dtype_;
  std::variant<std::vector<float>, std::vector<double>> buffer_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);
/// Euclidean norm over all entries.
double l2_norm(const Tensor& a);

}  // namespace symclone
