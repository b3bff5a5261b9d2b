// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0
//
// Forward and backward kernels for the operations the network needs. Every
// function here is pure; the tape in autograd.hpp composes them.
//
// Image-like tensors use the [batch, channels, height, width] layout. In the
// network, height is the frame axis and width is whatever axis is spatial at
// that stage (joints before the transpose, features after it).

#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "hcn/tensor.hpp"

namespace hcn {

using Rng = std::mt19937_64;

namespace ops {

// Stride-1 convolution with symmetric zero padding that keeps the spatial
// extents unchanged. Kernels must be odd.
struct ConvSpec {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  std::size_t pad_h() const { return kernel_h / 2; }
  std::size_t pad_w() const { return kernel_w / 2; }
  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  void validate() const;
};

// Saved forward state needed by conv2d_backward.
struct ConvContext {
  ConvSpec spec;
  Tensor input;
  Tensor weights;
  bool valid() const { return !input.empty(); }
};

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

// Cross-correlation (no kernel flip): out[b,o,y,x] = bias[o] +
// sum_{c,i,j} w[o,c,i,j] * in[b,c,y+i-ph,x+j-pw].
Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
              const Tensor& bias);
// Same as conv2d, also returning the context for the backward pass.
std::pair<Tensor, ConvContext> conv2d_saved(const Tensor& input, const ConvSpec& spec,
                                            const Tensor& weights, const Tensor& bias);
ConvGrads conv2d_backward(const ConvContext& context, const Tensor& grad_out);
// Context-free form; skips the input gradient when `need_input_grad` is false
// (the returned ConvGrads::input is then empty).
ConvGrads conv2d_backward(const ConvSpec& spec, const Tensor& input, const Tensor& weights,
                          const Tensor& grad_out, bool need_input_grad = true);

struct PoolWindow {
  std::size_t h = 2;
  std::size_t w = 2;
};

struct PoolResult {
  Tensor output;
  // Flat input offset of the selected element for every output element.
  std::vector<std::size_t> argmax;
};

// Max pooling with stride equal to the window. Trailing rows/columns that do
// not fill a window are dropped. Ties select the first element in row-major
// window order.
PoolResult maxpool2d(const Tensor& input, PoolWindow window);
Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_out);

// output[i_0..i_{r-1}] = input[j] where j[order[k]] = i_k, i.e. output axis k
// is input axis order[k].
Tensor permute(const Tensor& input, const std::vector<std::size_t>& order);
std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& order);
void validate_permutation(const std::vector<std::size_t>& order, std::size_t rank);

// Concatenates along axis 1; `a` occupies the leading channel block.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Splits along axis 1 into blocks of `leading` and the remainder.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t leading);

Tensor relu(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

// input [batch, in], weights [out, in], bias [out].
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

enum class Mode { kTrain, kEval };

// Inverted dropout mask: each element is 0 with probability `ratio`, else
// 1/(1-ratio).
Tensor dropout_mask(const Shape& shape, double ratio, Rng& rng);
Tensor dropout(const Tensor& input, double ratio, Mode mode, Rng& rng);
void validate_dropout_ratio(double ratio);

Tensor multiply(const Tensor& a, const Tensor& b);

// Linear resampling along axis 0 with endpoints aligned: output frame k maps
// to input position k*(T-1)/(target-1).
Tensor resize_temporal_bilinear(const Tensor& seq, std::size_t target_frames);

// Softmax along the last axis with the max-shift for stability.
Tensor softmax(const Tensor& logits);

}  // namespace ops
}  // namespace hcn
