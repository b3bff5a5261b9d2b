// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small reverse-mode tape. Each recorded node keeps its forward value and a
// closure that pushes the node's gradient to its inputs. backward() walks the
// nodes in exact reverse recording order.

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "hcn/ops.hpp"
#include "hcn/tensor.hpp"

namespace hcn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Named parameters in registration order. Addresses are stable.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Shape shape);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Var constant(Tensor value);
  Var parameter(Parameter& param);
  // Records an op output. `inputs` decide whether the node needs a gradient;
  // `backward` is only invoked if some input requires one.
  Var record(Tensor value, std::span<const Var> inputs, BackwardFn backward,
             const char* op_name);
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward,
             const char* op_name) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                  std::move(backward), op_name);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  // Gradient of a non-parameter node after backward(); zeros if unreached.
  Tensor grad(Var v) const;

  // Adds `g` into the gradient slot of `v` (or its Parameter::grad).
  void accumulate(Var v, const Tensor& g);
  void accumulate(Var v, Tensor&& g);

  // Seeds the root (which must hold a single element) with 1 and propagates.
  void backward(Var root);
  std::size_t size() const { return nodes_.size(); }

  // Visit order of the last backward() call, for testing.
  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

// Differentiable ops on the tape.
namespace ag {

Var conv2d(Tape& tape, Var input, Var weights, Var bias, const ops::ConvSpec& spec);
Var maxpool2d(Tape& tape, Var input, ops::PoolWindow window);
Var permute(Tape& tape, Var input, std::vector<std::size_t> order);
Var reshape(Tape& tape, Var input, Shape shape);
Var concat_channels(Tape& tape, Var a, Var b);
Var relu(Tape& tape, Var input);
Var dense(Tape& tape, Var input, Var weights, Var bias);
// Draws a fresh mask from `rng` in train mode; identity in eval mode.
Var dropout(Tape& tape, Var input, double ratio, ops::Mode mode, Rng& rng);

// input [batch*group, ...] with group members contiguous; output [batch, ...].
// Max routes the gradient to the first maximal member.
Var group_max(Tape& tape, Var input, std::size_t group);
Var group_mean(Tape& tape, Var input, std::size_t group);
// [batch*group, C, ...] -> [batch, group*C, ...], member 0 in the leading block.
Var group_concat(Tape& tape, Var input, std::size_t group);

// Rows `rows` of a rank-2 input, in the given order (repeats allowed).
Var gather_rows(Tape& tape, Var input, const std::vector<std::size_t>& rows);

// sum_i coeffs[i] * terms[i] for single-element terms.
Var weighted_sum(Tape& tape, const std::vector<Var>& terms, const std::vector<double>& coeffs);

}  // namespace ag
}  // namespace hcn
