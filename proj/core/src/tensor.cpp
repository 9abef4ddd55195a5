// SPDX-License-Identifier: Apache-2.0
#include "aag/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "aag/errors.hpp"

namespace aag {

namespace {

std::atomic<Precision> g_precision{Precision::f32};

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() > 2) {
    throw DimensionError(std::string(what) + ": expected rank <= 2, got " + t.shape_string());
  }
}

}  // namespace

void set_precision(Precision p) noexcept { g_precision.store(p, std::memory_order_relaxed); }

Precision precision() noexcept { return g_precision.load(std::memory_order_relaxed); }

double quantize(double v) noexcept {
  if (precision() == Precision::f32) return static_cast<double>(static_cast<float>(v));
  return v;
}

PrecisionScope::PrecisionScope(Precision p) noexcept : saved_(precision()) { set_precision(p); }

PrecisionScope::~PrecisionScope() { set_precision(saved_); }

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : Tensor(std::vector<std::size_t>{rows, cols}, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : shape_{rows, cols}, data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("tensor: " + std::to_string(data_.size()) + " values for shape [" +
                         std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
}

Tensor Tensor::scalar(double v) { return Tensor(1, 1, v); }

std::size_t Tensor::rows() const noexcept {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const noexcept {
  if (shape_.empty()) return 1;
  return shape_.back();
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::quantize_in_place() noexcept {
  if (precision() == Precision::f64) return;
  for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + a.shape_string() + " x " +
                         b.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  out.quantize_in_place();
  return out;
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  Tensor out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  require_matrix(x, "softmax");
  if (axis != 0 && axis != 1) {
    throw DimensionError("softmax: invalid axis " + std::to_string(axis));
  }
  Tensor out = x;
  const std::size_t rows = x.rows(), cols = x.cols();
  const std::size_t slices = axis == 1 ? rows : cols;
  const std::size_t len = axis == 1 ? cols : rows;
  auto at = [&](Tensor& t, std::size_t s, std::size_t i) -> double& {
    return axis == 1 ? t(s, i) : t(i, s);
  };
  for (std::size_t s = 0; s < slices; ++s) {
    double mx = -INFINITY;
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, at(out, s, i));
    double total = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      double& v = at(out, s, i);
      v = std::exp(v - mx);
      total += v;
    }
    for (std::size_t i = 0; i < len; ++i) at(out, s, i) /= total;
  }
  out.quantize_in_place();
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  out.quantize_in_place();
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_matrix(x, "layer_norm");
  if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
  const std::size_t d = x.cols();
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: last dimension " + std::to_string(d) +
                         " vs gamma " + gamma.shape_string() + ", beta " + beta.shape_string());
  }
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t j = 0; j < d; ++j) o[j] = (in[j] - mean) * inv * gamma[j] + beta[j];
  }
  out.quantize_in_place();
  return out;
}

double cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy");
  if (labels.size() != logits.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         logits.shape_string());
  }
  const int classes = static_cast<int>(logits.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const int label = labels[i];
    if (label < 0 || label >= classes) {
      throw DataError("cross_entropy: sample " + std::to_string(i) + " has label " +
                      std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    total += mx + std::log(sum) - row[static_cast<std::size_t>(label)];
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace aag
