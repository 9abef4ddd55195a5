// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace aag {

/// Numeric precision of every value produced by a kernel.
///
/// Storage is always binary64. In `f32` mode each kernel result and each
/// parameter update is rounded to the nearest binary32 value, so values carry
/// single precision and serialize to f32 losslessly. `f64` mode keeps full
/// double precision and is used by the gradient checker.
enum class Precision { f32, f64 };

void set_precision(Precision p) noexcept;
Precision precision() noexcept;

/// Rounds `v` to the active precision.
double quantize(double v) noexcept;

/// Switches the global precision for the lifetime of the scope.
class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p) noexcept;
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

/// Dense row-major array. Ranks 0..2 are used; rank-1 and rank-0 tensors
/// behave as a single row for the matrix accessors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor scalar(double v);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const noexcept;
  std::size_t cols() const noexcept;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row(std::size_t r) {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
  bool all_finite() const noexcept;
  std::string shape_string() const;

  void fill(double v);
  /// Applies `quantize` to every entry.
  void quantize_in_place() noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Plain kernels. The differentiable counterparts live in autodiff.hpp.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Numerically stabilized softmax along `axis` (0 = down columns, 1 = along rows).
Tensor softmax(const Tensor& x, int axis);
/// Exact erf-based GELU.
Tensor gelu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
/// Mean over rows of -log softmax(logits)[label].
double cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace aag
