// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "aag/tensor.hpp"

namespace aag {

/// A trainable tensor with its accumulated gradient.
///
/// `grad` is mutable: it is an accumulator written by `Tape::backward` and is
/// not part of the parameter's logical value, so forward passes can bind
/// parameters through a const model.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  mutable Tensor grad;

  void zero_grad() const { grad.fill(0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so a
/// reverse sweep over the node list is a valid topological order.
class Tape {
 public:
  /// Propagates the node's gradient to its parents. Receives the tape and the
  /// node's own id.
  using Backprop = std::function<void(Tape&, std::size_t)>;

  /// `dropout_rng` enables dropout; a tape without one runs in inference mode.
  explicit Tape(std::mt19937_64* dropout_rng = nullptr) : rng_(dropout_rng) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Binds a parameter; repeated binds of the same parameter return one node.
  Var parameter(const Parameter& p);

  /// Appends an op result. Throws NumericalError if `value` is not finite.
  Var record(Tensor value, std::span<const Var> parents, Backprop backprop, const char* op);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Gradient slot of a node; only valid during `backward`.
  Tensor& grad(std::size_t id);

  /// Reverse sweep from a 1x1 loss; adds into every reachable Parameter::grad.
  void backward(Var loss);

  std::mt19937_64* dropout_rng() const { return rng_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backprop backprop;
    const Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::deque<Node> nodes_;  // stable references while the tape grows
  std::unordered_map<const Parameter*, std::size_t> bound_;
  std::mt19937_64* rng_;
};

// Differentiable ops. All operate on rank-2 values (rows x cols).

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise product.
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a 1 x n row to every row of an m x n input.
Var add_row(Var a, Var row);
Var softmax(Var x, int axis);
Var layer_norm(Var x, Var gamma, Var beta, double eps);
Var gelu(Var x);
Var relu(Var x);
/// Inverted dropout with keep-probability 1 - p; identity when the tape has no RNG or p == 0.
Var dropout(Var x, double p);
/// Stacks inputs vertically; all widths must agree.
Var concat_rows(std::span<const Var> parts);
/// Stacks inputs horizontally; all heights must agree.
Var concat_cols(std::span<const Var> parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
/// Mean over rows: m x n -> 1 x n.
Var mean_rows(Var x);
/// Sum of all entries -> 1 x 1.
Var sum(Var x);
/// Mean cross-entropy of row-wise softmax against integer labels -> 1 x 1.
Var cross_entropy(Var logits, std::span<const int> labels);

}  // namespace aag
