// SPDX-License-Identifier: Apache-2.0
#include "aag/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "aag/errors.hpp"

namespace aag {

Parameter::Parameter(std::string n, Tensor v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericalError("constant: non-finite input " + value.shape_string());
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  if (!p.value.all_finite()) throw NumericalError("parameter '" + p.name + "' is not finite");
  nodes_.push_back(Node{p.value, {}, {}, &p, true});
  bound_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::span<const Var> parents, Backprop backprop, const char* op) {
  value.quantize_in_place();
  if (!value.all_finite()) {
    throw NumericalError(std::string(op) + ": produced non-finite values " + value.shape_string());
  }
  const bool needs = std::any_of(parents.begin(), parents.end(),
                                 [this](const Var& v) { return nodes_[v.id()].needs_grad; });
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backprop) : Backprop{}, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(std::size_t id) { return nodes_[id].grad; }

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw UsageError("backward: loss must be scalar, got " + loss.value().shape_string());
  }
  for (std::size_t i = 0; i <= loss.id(); ++i) {
    Node& n = nodes_[i];
    if (n.needs_grad) {
      n.grad = Tensor(n.value.shape());
    } else {
      n.grad = Tensor();
    }
  }
  if (!nodes_[loss.id()].needs_grad) return;
  nodes_[loss.id()].grad.fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad) continue;
    if (n.backprop) n.backprop(*this, i);
    if (n.param) {
      auto dst = n.param->grad.data();
      auto src = n.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
}

namespace {

// Accumulates `g` into the parent's gradient slot if the parent needs it.
void accumulate(Tape& t, Var parent, const Tensor& g) {
  if (!t.needs_grad(parent.id())) return;
  auto dst = t.grad(parent.id()).data();
  auto src = g.data();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

void same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw UsageError(std::string(op) + ": operands on different tapes");
}

void require_same_shape(Var a, Var b, const char* op) {
  same_tape(a, b, op);
  if (!a.value().same_shape(b.value())) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b, "matmul");
  Tensor out = matmul(a.value(), b.value());
  const Var parents[] = {a, b};
  return a.tape().record(std::move(out), parents, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.needs_grad(a.id())) accumulate(t, a, matmul(g, transpose(b.value())));
    if (t.needs_grad(b.id())) accumulate(t, b, matmul(transpose(a.value()), g));
  }, "matmul");
}

Var transpose(Var a) {
  const Var parents[] = {a};
  return a.tape().record(transpose(a.value()), parents, [a](Tape& t, std::size_t self) {
    accumulate(t, a, transpose(t.grad(self)));
  }, "transpose");
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] += bv[k];
  const Var parents[] = {a, b};
  return a.tape().record(std::move(out), parents, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, g);
    accumulate(t, b, g);
  }, "add");
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] -= bv[k];
  const Var parents[] = {a, b};
  return a.tape().record(std::move(out), parents, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, g);
    if (t.needs_grad(b.id())) {
      Tensor neg = g;
      for (double& v : neg.data()) v = -v;
      accumulate(t, b, neg);
    }
  }, "sub");
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t k = 0; k < o.size(); ++k) o[k] *= bv[k];
  const Var parents[] = {a, b};
  return a.tape().record(std::move(out), parents, [a, b](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (auto [target, other] : {std::pair{a, b}, std::pair{b, a}}) {
      if (!t.needs_grad(target.id())) continue;
      Tensor d = g;
      auto dv = d.data();
      auto ov = other.value().data();
      for (std::size_t k = 0; k < dv.size(); ++k) dv[k] *= ov[k];
      accumulate(t, target, d);
    }
  }, "mul");
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  const Var parents[] = {a};
  return a.tape().record(std::move(out), parents, [a, s](Tape& t, std::size_t self) {
    Tensor d = t.grad(self);
    for (double& v : d.data()) v *= s;
    accumulate(t, a, d);
  }, "scale");
}

Var add_row(Var a, Var row) {
  same_tape(a, row, "add_row");
  if (row.value().rows() != 1 || row.value().cols() != a.value().cols()) {
    throw DimensionError("add_row: row " + row.value().shape_string() + " does not broadcast over " +
                         a.value().shape_string());
  }
  Tensor out = a.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t j = 0; j < o.size(); ++j) o[j] += row.value()[j];
  }
  const Var parents[] = {a, row};
  return a.tape().record(std::move(out), parents, [a, row](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    accumulate(t, a, g);
    if (t.needs_grad(row.id())) {
      Tensor d(row.value().shape());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < g.cols(); ++j) d[j] += g(r, j);
      accumulate(t, row, d);
    }
  }, "add_row");
}

Var softmax(Var x, int axis) {
  Tensor out = softmax(x.value(), axis);
  const Var parents[] = {x};
  return x.tape().record(std::move(out), parents, [x, axis](Tape& t, std::size_t self) {
    const Tensor& y = t.value(self);
    const Tensor& g = t.grad(self);
    Tensor d(y.shape());
    const std::size_t slices = axis == 1 ? y.rows() : y.cols();
    const std::size_t len = axis == 1 ? y.cols() : y.rows();
    auto idx = [&](std::size_t s, std::size_t i) {
      return axis == 1 ? s * y.cols() + i : i * y.cols() + s;
    };
    for (std::size_t s = 0; s < slices; ++s) {
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += g[idx(s, i)] * y[idx(s, i)];
      for (std::size_t i = 0; i < len; ++i) d[idx(s, i)] = y[idx(s, i)] * (g[idx(s, i)] - dot);
    }
    accumulate(t, x, d);
  }, "softmax");
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tensor out = layer_norm(x.value(), gamma.value(), beta.value(), eps);
  const Var parents[] = {x, gamma, beta};
  return x.tape().record(std::move(out), parents, [x, gamma, beta, eps](Tape& t, std::size_t self) {
    const Tensor& in = x.value();
    const Tensor& gm = gamma.value();
    const Tensor& g = t.grad(self);
    const std::size_t d = in.cols();
    const double n = static_cast<double>(d);
    Tensor dx(in.shape()), dgamma(gm.shape()), dbeta(gm.shape());
    std::vector<double> xhat(d), gxhat(d);
    for (std::size_t r = 0; r < in.rows(); ++r) {
      auto row = in.row(r);
      double mean = 0.0;
      for (double v : row) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : row) var += (v - mean) * (v - mean);
      var /= n;
      const double inv = 1.0 / std::sqrt(var + eps);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        xhat[j] = (row[j] - mean) * inv;
        gxhat[j] = g(r, j) * gm[j];
        dgamma[j] += g(r, j) * xhat[j];
        dbeta[j] += g(r, j);
        sum_g += gxhat[j];
        sum_gx += gxhat[j] * xhat[j];
      }
      for (std::size_t j = 0; j < d; ++j) {
        dx(r, j) = inv * (gxhat[j] - sum_g / n - xhat[j] * sum_gx / n);
      }
    }
    accumulate(t, x, dx);
    accumulate(t, gamma, dgamma);
    accumulate(t, beta, dbeta);
  }, "layer_norm");
}

Var gelu(Var x) {
  const Var parents[] = {x};
  return x.tape().record(gelu(x.value()), parents, [x](Tape& t, std::size_t self) {
    Tensor d = t.grad(self);
    auto in = x.value().data();
    auto dv = d.data();
    for (std::size_t k = 0; k < dv.size(); ++k) {
      const double v = in[k];
      const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
      dv[k] *= cdf + v * pdf;
    }
    accumulate(t, x, d);
  }, "gelu");
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::max(v, 0.0);
  const Var parents[] = {x};
  return x.tape().record(std::move(out), parents, [x](Tape& t, std::size_t self) {
    Tensor d = t.grad(self);
    auto in = x.value().data();
    auto dv = d.data();
    for (std::size_t k = 0; k < dv.size(); ++k)
      if (in[k] <= 0.0) dv[k] = 0.0;
    accumulate(t, x, d);
  }, "relu");
}

Var dropout(Var x, double p) {
  std::mt19937_64* rng = x.tape().dropout_rng();
  if (rng == nullptr || p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout: probability must be below 1");
  Tensor mask(x.value().shape());
  std::bernoulli_distribution keep(1.0 - p);
  for (double& m : mask.data()) m = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  Var m = x.tape().constant(std::move(mask));
  return mul(x, m);
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  const std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat_rows");
    if (p.value().cols() != cols) {
      throw DimensionError("concat_rows: width mismatch " + parts[0].value().shape_string() + " vs " +
                           p.value().shape_string());
    }
    rows += p.value().rows();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * cols));
    offset += p.value().rows();
  }
  std::vector<Var> captured(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [captured, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (const Var& p : captured) {
      const std::size_t r = p.value().rows();
      if (t.needs_grad(p.id())) {
        auto dst = t.grad(p.id()).data();
        for (std::size_t k = 0; k < r * cols; ++k) dst[k] += g[offset * cols + k];
      }
      offset += r;
    }
  }, "concat_rows");
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat_cols");
    if (p.value().rows() != rows) {
      throw DimensionError("concat_cols: height mismatch " + parts[0].value().shape_string() + " vs " +
                           p.value().shape_string());
    }
    cols += p.value().cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < v.cols(); ++j) out(r, offset + j) = v(r, j);
    offset += v.cols();
  }
  std::vector<Var> captured(parts.begin(), parts.end());
  return parts[0].tape().record(std::move(out), parts, [captured](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t offset = 0;
    for (const Var& p : captured) {
      const std::size_t c = p.value().cols();
      if (t.needs_grad(p.id())) {
        Tensor& dst = t.grad(p.id());
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t j = 0; j < c; ++j) dst(r, j) += g(r, offset + j);
      }
      offset += c;
    }
  }, "concat_cols");
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
  const Tensor& in = x.value();
  if (begin + count > in.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + in.shape_string());
  }
  Tensor out(count, in.cols());
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t j = 0; j < in.cols(); ++j) out(r, j) = in(begin + r, j);
  const Var parents[] = {x};
  return x.tape().record(std::move(out), parents, [x, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dst = t.grad(x.id());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t j = 0; j < g.cols(); ++j) dst(begin + r, j) += g(r, j);
  }, "slice_rows");
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& in = x.value();
  if (begin + count > in.cols()) {
    throw DimensionError("slice_cols: cols [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") out of " + in.shape_string());
  }
  Tensor out(in.rows(), count);
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t j = 0; j < count; ++j) out(r, j) = in(r, begin + j);
  const Var parents[] = {x};
  return x.tape().record(std::move(out), parents, [x, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dst = t.grad(x.id());
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t j = 0; j < g.cols(); ++j) dst(r, begin + j) += g(r, j);
  }, "slice_cols");
}

Var mean_rows(Var x) {
  const Tensor& in = x.value();
  if (in.rows() == 0) throw DimensionError("mean_rows: empty input");
  Tensor out(1, in.cols());
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t j = 0; j < in.cols(); ++j) out[j] += in(r, j);
  const double n = static_cast<double>(in.rows());
  for (double& v : out.data()) v /= n;
  const Var parents[] = {x};
  return x.tape().record(std::move(out), parents, [x, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dst = t.grad(x.id());
    for (std::size_t r = 0; r < dst.rows(); ++r)
      for (std::size_t j = 0; j < dst.cols(); ++j) dst(r, j) += g[j] / n;
  }, "mean_rows");
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const Var parents[] = {x};
  return x.tape().record(Tensor::scalar(total), parents, [x](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad(x.id()).data()) v += g;
  }, "sum");
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  const double loss = cross_entropy(logits.value(), labels);
  std::vector<int> captured(labels.begin(), labels.end());
  const Var parents[] = {logits};
  return logits.tape().record(Tensor::scalar(loss), parents, [logits, captured](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    Tensor d = softmax(logits.value(), 1);
    const double inv_b = 1.0 / static_cast<double>(d.rows());
    for (std::size_t r = 0; r < d.rows(); ++r) {
      d(r, static_cast<std::size_t>(captured[r])) -= 1.0;
      for (double& v : d.row(r)) v *= g * inv_b;
    }
    accumulate(t, logits, d);
  }, "cross_entropy");
}

}  // namespace aag
