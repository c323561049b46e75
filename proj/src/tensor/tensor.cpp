#include "symclone/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace symclone {

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, DType dtype) : shape_(std::move(shape)), dtype_(dtype) {
  const auto n = static_cast<std::size_t>(shape_numel(shape_));
  if (dtype_ == DType::f32) {
    buffer_ = std::vector<float>(n, 0.0f);
  } else {
    buffer_ = std::vector<double>(n, 0.0);
  }
}

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t(std::move(shape), dtype);
  t.fill(value);
  return t;
}

Tensor Tensor::from(Shape shape, std::span<const double> values, DType dtype) {
  Tensor t(std::move(shape), dtype);
  if (static_cast<std::int64_t>(values.size()) != t.numel()) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     shape_string(t.shape()));
  }
  dispatch(dtype, [&]<typename T>() {
    auto out = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from(std::move(shape), std::span<const double>(values.begin(), values.size()), dtype);
}

std::int64_t Tensor::numel() const noexcept {
  return std::visit([](const auto& v) { return static_cast<std::int64_t>(v.size()); }, buffer_);
}

double Tensor::at(std::int64_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v.at(static_cast<std::size_t>(i))); }, buffer_);
}

void Tensor::set(std::int64_t i, double value) {
  std::visit([&](auto& v) { v.at(static_cast<std::size_t>(i)) = static_cast<typename std::decay_t<decltype(v)>::value_type>(value); },
             buffer_);
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return at(0);
}

std::vector<double> Tensor::to_vector() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, buffer_);
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape_numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return *this;
  Tensor out(shape_, dtype);
  dispatch(dtype_, [&]<typename S>() {
    dispatch(dtype, [&]<typename D>() {
      auto src = data<S>();
      auto dst = out.data<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

void Tensor::fill(double value) {
  std::visit([value](auto& v) { std::fill(v.begin(), v.end(), static_cast<typename std::decay_t<decltype(v)>::value_type>(value)); },
             buffer_);
}

void Tensor::add_(const Tensor& other) {
  if (other.shape_ != shape_ || other.dtype_ != dtype_) {
    throw ShapeError("add_: " + shape_string(shape_) + "/" + to_string(dtype_) + " vs " +
                     shape_string(other.shape_) + "/" + to_string(other.dtype_));
  }
  dispatch(dtype_, [&]<typename T>() {
    auto a = data<T>();
    auto b = other.data<T>();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  });
}

void Tensor::scale_(double factor) {
  dispatch(dtype_, [&]<typename T>() {
    for (auto& v : data<T>()) v = static_cast<T>(v * factor);
  });
}

bool Tensor::all_finite() const {
  return std::visit([](const auto& v) { return std::all_of(v.begin(), v.end(), [](auto x) { return std::isfinite(x); }); },
                    buffer_);
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_ || dtype_ != other.dtype_) return false;
  return std::visit(
      [&](const auto& v) {
        const auto& w = std::get<std::decay_t<decltype(v)>>(other.buffer_);
        return v.empty() || std::memcmp(v.data(), w.data(), v.size() * sizeof(v[0])) == 0;
      },
      buffer_);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
  return m;
}

double l2_norm(const Tensor& a) {
  double s = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a.at(i) * a.at(i);
  return std::sqrt(s);
}

}  // namespace symclone
