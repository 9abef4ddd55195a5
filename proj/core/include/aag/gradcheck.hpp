// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <vector>

#include "aag/autodiff.hpp"

namespace aag {

/// Builds a scalar loss on the given tape. Must be deterministic: the checker
/// evaluates it repeatedly and cannot detect a non-deterministic function.
using LossFn = std::function<Var(Tape&)>;

/// Gradients from one backward pass, one tensor per parameter. Existing
/// parameter gradients are zeroed first.
std::vector<Tensor> analytic_gradients(const LossFn& fn, std::span<Parameter* const> params);

/// second: (f(x+e) - f(x-e)) / 2e.
/// fourth: also evaluates +/-2e, cancelling the e^2 error term. Lets a larger
/// eps keep roundoff small on near-zero gradient entries.
enum class FdOrder { second, fourth };

/// Central differences: perturbs every parameter entry by +/-eps.
std::vector<Tensor> numeric_gradients(const LossFn& fn, std::span<Parameter* const> params, double eps,
                                      FdOrder order = FdOrder::second);

/// max over entries of |a - n| / max(1e-12, |a| + |n|).
double max_relative_error(std::span<const Tensor> analytic, std::span<const Tensor> numeric);

/// Analytic vs numeric comparison. Run under Precision::f64 for meaningful
/// results; the caller owns the precision scope.
double finite_diff_check(const LossFn& fn, std::span<Parameter* const> params, double eps = 1e-6,
                         FdOrder order = FdOrder::second);

}  // namespace aag
