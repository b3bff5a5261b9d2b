// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/autograd.hpp"

#include <algorithm>
#include <string>

#include "hcn/error.hpp"

namespace hcn {

Parameter& ParameterStore::add(const std::string& name, Shape shape) {
  if (contains(name)) throw UsageError("parameter '" + name + "' registered twice");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = Tensor(shape);
  p->grad = Tensor(std::move(shape));
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) {
    if (p->grad.shape() != p->value.shape()) {
      p->grad = Tensor(p->value.shape());
    } else {
      p->grad.fill(0.0);
    }
  }
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), Tensor(), false, nullptr, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
  nodes_.push_back(Node{param.value, Tensor(), true, &param, nullptr});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn backward,
                 const char* op_name) {
  value.require_finite(std::string(op_name) + " output");
  bool needs = false;
  for (Var v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
  nodes_.push_back(Node{std::move(value), Tensor(), needs, nullptr,
                        needs ? std::move(backward) : BackwardFn()});
  return Var{nodes_.size() - 1};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.param != nullptr) return n.param->grad;
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape()) {
    throw ShapeError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                     shape_str(n.value.shape()));
  }
  if (n.param != nullptr) {
    if (n.param->grad.shape() != n.value.shape()) n.param->grad = Tensor(n.value.shape());
    n.param->grad += g;
  } else if (n.grad.empty()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::accumulate(Var v, Tensor&& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (n.param == nullptr && n.grad.empty() && g.shape() == n.value.shape()) {
    n.grad = std::move(g);
    return;
  }
  accumulate(v, static_cast<const Tensor&>(g));
}

void Tape::backward(Var root) {
  Node& r = nodes_.at(root.id);
  if (r.value.numel() != 1) {
    throw UsageError("backward root must hold a single element, got shape " +
                     shape_str(r.value.shape()));
  }
  visit_order_.clear();
  if (!r.requires_grad) return;
  accumulate(root, Tensor(r.value.shape(), 1.0));
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    visit_order_.push_back(i);
    n.backward(*this, n.grad);
  }
}

namespace ag {

Var conv2d(Tape& tape, Var input, Var weights, Var bias, const ops::ConvSpec& spec) {
  Tensor out = ops::conv2d(tape.value(input), spec, tape.value(weights), tape.value(bias));
  return tape.record(
      std::move(out), {input, weights, bias},
      [=](Tape& t, const Tensor& g) {
        const bool need_input = t.requires_grad(input);
        ops::ConvGrads grads =
            ops::conv2d_backward(spec, t.value(input), t.value(weights), g, need_input);
        if (need_input) t.accumulate(input, std::move(grads.input));
        t.accumulate(weights, std::move(grads.weights));
        t.accumulate(bias, std::move(grads.bias));
      },
      "conv2d");
}

Var maxpool2d(Tape& tape, Var input, ops::PoolWindow window) {
  ops::PoolResult r = ops::maxpool2d(tape.value(input), window);
  auto argmax = std::make_shared<std::vector<std::size_t>>(std::move(r.argmax));
  return tape.record(
      std::move(r.output), {input},
      [=](Tape& t, const Tensor& g) {
        t.accumulate(input, ops::maxpool2d_backward(t.value(input).shape(), *argmax, g));
      },
      "maxpool2d");
}

Var permute(Tape& tape, Var input, std::vector<std::size_t> order) {
  Tensor out = ops::permute(tape.value(input), order);
  auto inverse = ops::inverse_permutation(order);
  return tape.record(
      std::move(out), {input},
      [=](Tape& t, const Tensor& g) { t.accumulate(input, ops::permute(g, inverse)); },
      "permute");
}

Var reshape(Tape& tape, Var input, Shape shape) {
  Tensor out = tape.value(input).reshaped(std::move(shape));
  return tape.record(
      std::move(out), {input},
      [=](Tape& t, const Tensor& g) {
        t.accumulate(input, g.reshaped(t.value(input).shape()));
      },
      "reshape");
}

Var concat_channels(Tape& tape, Var a, Var b) {
  Tensor out = ops::concat_channels(tape.value(a), tape.value(b));
  const std::size_t lead = tape.value(a).dim(1);
  return tape.record(
      std::move(out), {a, b},
      [=](Tape& t, const Tensor& g) {
        auto [ga, gb] = ops::split_channels(g, lead);
        t.accumulate(a, std::move(ga));
        t.accumulate(b, std::move(gb));
      },
      "concat_channels");
}

Var relu(Tape& tape, Var input) {
  return tape.record(
      ops::relu(tape.value(input)), {input},
      [=](Tape& t, const Tensor& g) { t.accumulate(input, ops::relu_backward(t.value(input), g)); },
      "relu");
}

Var dense(Tape& tape, Var input, Var weights, Var bias) {
  Tensor out = ops::dense(tape.value(input), tape.value(weights), tape.value(bias));
  return tape.record(
      std::move(out), {input, weights, bias},
      [=](Tape& t, const Tensor& g) {
        ops::DenseGrads grads = ops::dense_backward(t.value(input), t.value(weights), g);
        t.accumulate(input, std::move(grads.input));
        t.accumulate(weights, std::move(grads.weights));
        t.accumulate(bias, std::move(grads.bias));
      },
      "dense");
}

Var dropout(Tape& tape, Var input, double ratio, ops::Mode mode, Rng& rng) {
  ops::validate_dropout_ratio(ratio);
  if (mode == ops::Mode::kEval || ratio == 0.0) return input;
  auto mask = std::make_shared<Tensor>(ops::dropout_mask(tape.value(input).shape(), ratio, rng));
  return tape.record(
      ops::multiply(tape.value(input), *mask), {input},
      [=](Tape& t, const Tensor& g) { t.accumulate(input, ops::multiply(g, *mask)); }, "dropout");
}

namespace {

std::size_t group_outer(const Tensor& x, std::size_t group, const char* what) {
  if (group == 0 || x.rank() < 1 || x.dim(0) % group != 0) {
    throw ShapeError(std::string(what) + ": leading extent of " + shape_str(x.shape()) +
                     " is not a multiple of group size " + std::to_string(group));
  }
  return x.dim(0) / group;
}

}  // namespace

Var group_max(Tape& tape, Var input, std::size_t group) {
  const Tensor& x = tape.value(input);
  const std::size_t outer = group_outer(x, group, "group_max");
  const std::size_t inner = x.numel() / std::max<std::size_t>(x.dim(0), 1);
  Shape shape = x.shape();
  shape[0] = outer;
  Tensor out(shape);
  auto pick = std::make_shared<std::vector<std::size_t>>(out.numel());
  for (std::size_t b = 0; b < outer; ++b) {
    for (std::size_t e = 0; e < inner; ++e) {
      std::size_t best = (b * group) * inner + e;
      for (std::size_t m = 1; m < group; ++m) {
        const std::size_t off = (b * group + m) * inner + e;
        if (x[off] > x[best]) best = off;
      }
      out[b * inner + e] = x[best];
      (*pick)[b * inner + e] = best;
    }
  }
  return tape.record(
      std::move(out), {input},
      [=](Tape& t, const Tensor& g) {
        Tensor gi(t.value(input).shape());
        for (std::size_t k = 0; k < pick->size(); ++k) gi[(*pick)[k]] += g[k];
        t.accumulate(input, std::move(gi));
      },
      "group_max");
}

Var group_mean(Tape& tape, Var input, std::size_t group) {
  const Tensor& x = tape.value(input);
  const std::size_t outer = group_outer(x, group, "group_mean");
  const std::size_t inner = x.numel() / std::max<std::size_t>(x.dim(0), 1);
  Shape shape = x.shape();
  shape[0] = outer;
  Tensor out(shape);
  const double scale = 1.0 / static_cast<double>(group);
  // Members are summed in sorted order, so the result is bit-identical under
  // any reordering of the group.
  std::vector<double> members(group);
  for (std::size_t b = 0; b < outer; ++b) {
    for (std::size_t e = 0; e < inner; ++e) {
      for (std::size_t m = 0; m < group; ++m) members[m] = x[(b * group + m) * inner + e];
      std::sort(members.begin(), members.end());
      double s = 0.0;
      for (double v : members) s += v;
      out[b * inner + e] = s * scale;
    }
  }
  return tape.record(
      std::move(out), {input},
      [=](Tape& t, const Tensor& g) {
        Tensor gi(t.value(input).shape());
        for (std::size_t b = 0; b < outer; ++b) {
          for (std::size_t m = 0; m < group; ++m) {
            for (std::size_t e = 0; e < inner; ++e) {
              gi[(b * group + m) * inner + e] = g[b * inner + e] * scale;
            }
          }
        }
        t.accumulate(input, std::move(gi));
      },
      "group_mean");
}

Var group_concat(Tape& tape, Var input, std::size_t group) {
  const Tensor& x = tape.value(input);
  const std::size_t outer = group_outer(x, group, "group_concat");
  if (x.rank() < 2) throw ShapeError("group_concat: needs a channel axis");
  // Members are contiguous, so [b*group+m, C, ...] is already [b, m*C + c, ...].
  Shape shape = x.shape();
  shape[0] = outer;
  shape[1] = x.dim(1) * group;
  return reshape(tape, input, std::move(shape));
}

Var gather_rows(Tape& tape, Var input, const std::vector<std::size_t>& rows) {
  const Tensor& x = tape.value(input);
  if (x.rank() != 2) throw ShapeError("gather_rows: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t cols = x.dim(1);
  Tensor out({rows.size(), cols});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= x.dim(0)) {
      throw ShapeError("gather_rows: row " + std::to_string(rows[r]) + " out of range " +
                       std::to_string(x.dim(0)));
    }
    std::copy_n(x.raw() + rows[r] * cols, cols, out.raw() + r * cols);
  }
  return tape.record(
      std::move(out), {input},
      [=](Tape& t, const Tensor& g) {
        Tensor gi(t.value(input).shape());
        for (std::size_t r = 0; r < rows.size(); ++r) {
          for (std::size_t c = 0; c < cols; ++c) gi[rows[r] * cols + c] += g[r * cols + c];
        }
        t.accumulate(input, std::move(gi));
      },
      "gather_rows");
}

Var weighted_sum(Tape& tape, const std::vector<Var>& terms, const std::vector<double>& coeffs) {
  if (terms.size() != coeffs.size() || terms.empty()) {
    throw UsageError("weighted_sum: need matching non-empty term and coefficient lists");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const Tensor& v = tape.value(terms[i]);
    if (v.numel() != 1) throw ShapeError("weighted_sum: terms must hold a single element");
    total += coeffs[i] * v[0];
  }
  return tape.record(
      Tensor({1}, {total}), std::span<const Var>(terms),
      [=](Tape& t, const Tensor& g) {
        for (std::size_t i = 0; i < terms.size(); ++i) {
          t.accumulate(terms[i], Tensor(t.value(terms[i]).shape(), coeffs[i] * g[0]));
        }
      },
      "weighted_sum");
}

}  // namespace ag
}  // namespace hcn
