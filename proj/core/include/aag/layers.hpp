// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>
#include <vector>

#include "aag/autodiff.hpp"

namespace aag {

using Rng = std::mt19937_64;

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (rows + cols)).
Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng);
Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

/// Affine map x W + b with W [in x out] and b [1 x out].
struct Linear {
  Parameter weight;
  Parameter bias;

  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }
};

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
Var linear(Var x, const Linear& layer);
void append_parameters(Linear& layer, std::vector<Parameter*>& out);

struct LayerNormParams {
  Parameter gamma;
  Parameter beta;
};

LayerNormParams make_layer_norm(const std::string& name, std::size_t d);
void append_parameters(LayerNormParams& norm, std::vector<Parameter*>& out);

}  // namespace aag
