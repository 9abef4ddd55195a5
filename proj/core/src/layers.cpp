// SPDX-License-Identifier: Apache-2.0
#include "aag/layers.hpp"

#include <cmath>

namespace aag {

Tensor glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  t.quantize_in_place();
  return t;
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.data()) v = dist(rng);
  t.quantize_in_place();
  return t;
}

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  return Linear{Parameter(name + ".weight", glorot_uniform(in, out, rng)),
                Parameter(name + ".bias", Tensor(1, out))};
}

Var linear(Var x, const Linear& layer) {
  Tape& t = x.tape();
  return add_row(matmul(x, t.parameter(layer.weight)), t.parameter(layer.bias));
}

void append_parameters(Linear& layer, std::vector<Parameter*>& out) {
  out.push_back(&layer.weight);
  out.push_back(&layer.bias);
}

LayerNormParams make_layer_norm(const std::string& name, std::size_t d) {
  return LayerNormParams{Parameter(name + ".gamma", Tensor(1, d, 1.0)),
                         Parameter(name + ".beta", Tensor(1, d))};
}

void append_parameters(LayerNormParams& norm, std::vector<Parameter*>& out) {
  out.push_back(&norm.gamma);
  out.push_back(&norm.beta);
}

}  // namespace aag
