// SPDX-License-Identifier: Apache-2.0
#include "aag/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "aag/errors.hpp"

namespace aag {

namespace {

double evaluate(const LossFn& fn) {
  Tape tape;
  return fn(tape).value()[0];
}

}  // namespace

std::vector<Tensor> analytic_gradients(const LossFn& fn, std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  Var loss = fn(tape);
  tape.backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Parameter* p : params) out.push_back(p->grad);
  return out;
}

std::vector<Tensor> numeric_gradients(const LossFn& fn, std::span<Parameter* const> params, double eps,
                                      FdOrder order) {
  if (eps <= 0.0) throw UsageError("numeric_gradients: eps must be positive");
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (Parameter* p : params) {
    Tensor g(p->value.shape());
    auto values = p->value.data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      auto diff = [&](double h) {
        values[k] = saved + h;
        const double up = evaluate(fn);
        values[k] = saved - h;
        const double down = evaluate(fn);
        values[k] = saved;
        return (up - down) / (2.0 * h);
      };
      const double d1 = diff(eps);
      g[k] = order == FdOrder::second ? d1 : (4.0 * d1 - diff(2.0 * eps)) / 3.0;
    }
    out.push_back(std::move(g));
  }
  return out;
}

double max_relative_error(std::span<const Tensor> analytic, std::span<const Tensor> numeric) {
  if (analytic.size() != numeric.size()) {
    throw DimensionError("max_relative_error: gradient lists differ in length");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!analytic[i].same_shape(numeric[i])) {
      throw DimensionError("max_relative_error: shape mismatch " + analytic[i].shape_string() +
                           " vs " + numeric[i].shape_string());
    }
    auto a = analytic[i].data();
    auto n = numeric[i].data();
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double err = std::abs(a[k] - n[k]) / std::max(1e-12, std::abs(a[k]) + std::abs(n[k]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double finite_diff_check(const LossFn& fn, std::span<Parameter* const> params, double eps, FdOrder order) {
  const auto analytic = analytic_gradients(fn, params);
  const auto numeric = numeric_gradients(fn, params, eps, order);
  return max_relative_error(analytic, numeric);
}

}  // namespace aag
