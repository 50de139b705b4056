#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "shmguard/errors.hpp"

namespace shmguard {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major float32 array with an optional gradient slot.
struct Tensor {
  Shape shape{1};
  std::vector<float> data = std::vector<float>(1, 0.0F);
  bool requires_grad = false;
  std::optional<std::vector<float>> grad;

  Tensor() = default;

  Tensor(Shape s, std::vector<float> values) : shape(std::move(s)), data(std::move(values)) {
    validate();
  }

  explicit Tensor(Shape s, float fill = 0.0F) : shape(std::move(s)) {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    data.assign(shape_size(shape), fill);
  }

  static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  /// Leading extent (batch size for batched tensors).
  std::size_t rows() const { return shape.front(); }
  /// Elements per leading index.
  std::size_t row_size() const { return data.size() / shape.front(); }

  float& operator[](std::size_t i) { return data[i]; }
  float operator[](std::size_t i) const { return data[i]; }

  std::span<float> row(std::size_t r) { return {data.data() + r * row_size(), row_size()}; }
  std::span<const float> row(std::size_t r) const {
    return {data.data() + r * row_size(), row_size()};
  }

  bool all_finite() const {
    for (float v : data) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  Tensor& with_grad(bool on = true) {
    requires_grad = on;
    return *this;
  }

  void validate() const {
    for (std::size_t d : shape) {
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_size(shape) != data.size()) {
      throw ShapeError("shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
    if (grad && grad->size() != data.size()) {
      throw ShapeError("gradient buffer length does not match tensor length");
    }
  }
};

/// Stacks rows [first, first + count) of a batched tensor.
inline Tensor slice_rows(const Tensor& t, std::size_t first, std::size_t count) {
  Shape s = t.shape;
  s[0] = count;
  const std::size_t w = t.row_size();
  std::vector<float> v(t.data.begin() + static_cast<std::ptrdiff_t>(first * w),
                       t.data.begin() + static_cast<std::ptrdiff_t>((first + count) * w));
  return Tensor(std::move(s), std::move(v));
}

/// Gathers the given rows of a batched tensor, in order.
inline Tensor take_rows(const Tensor& t, std::span<const std::size_t> idx) {
  Shape s = t.shape;
  s[0] = idx.size();
  const std::size_t w = t.row_size();
  std::vector<float> v;
  v.reserve(idx.size() * w);
  for (std::size_t i : idx) {
    auto r = t.row(i);
    v.insert(v.end(), r.begin(), r.end());
  }
  return Tensor(std::move(s), std::move(v));
}

}  // namespace shmguard
