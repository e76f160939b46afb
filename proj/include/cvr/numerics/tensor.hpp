#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cvr/errors.hpp"

namespace cvr {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major float64 array. Extents are all positive; a scalar is [1].
struct Tensor {
  Shape shape{1};
  std::vector<double> data{0.0};
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> d, bool rg = false)
      : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    validate();
  }

  static Tensor zeros(Shape s, bool rg = false) {
    const std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0), rg);
  }
  static Tensor filled(Shape s, double v) {
    const std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<double>(n, v));
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> d, bool rg = false) {
    return Tensor({r, c}, std::move(d), rg);
  }
  static Tensor identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
  }

  std::size_t numel() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  double& at(std::size_t r, std::size_t c) { return data[r * shape.back() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * shape.back() + c]; }

  void validate() const {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (std::size_t e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    if (grad && grad->size() != data.size())
      throw DimensionError("gradient length does not match shape " + shape_str(shape));
  }
};

}  // namespace cvr
