// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#include "hcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Core>

#include "hcn/error.hpp"

namespace hcn::ops {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) +
                     " tensor, got shape " + shape_str(t.shape()));
  }
}

const char* kImageAxis[] = {"batch", "channel", "height", "width"};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixMap = Eigen::Map<const RowMatrix>;
using RowMatrixMutMap = Eigen::Map<RowMatrix>;

// Batch elements per im2col block, keeping a block near 4M entries.
std::size_t batch_chunk(std::size_t k, std::size_t plane, std::size_t batch) {
  const std::size_t per = std::max<std::size_t>(1, k * plane);
  return std::clamp<std::size_t>((std::size_t{1} << 22) / per, 1, std::max<std::size_t>(batch, 1));
}

// Column matrix [cin*kh*kw, nb*plane] of zero-padded input patches.
void im2col(const Tensor& input, const ConvSpec& spec, std::size_t b0, std::size_t nb,
            RowMatrix& cols) {
  const std::size_t cin = spec.in_channels, kh = spec.kernel_h, kw = spec.kernel_w;
  const auto H = static_cast<std::ptrdiff_t>(input.dim(2));
  const auto W = static_cast<std::ptrdiff_t>(input.dim(3));
  const std::size_t plane = input.dim(2) * input.dim(3);
  const auto ph = static_cast<std::ptrdiff_t>(spec.pad_h());
  const auto pw = static_cast<std::ptrdiff_t>(spec.pad_w());
  cols.resize(static_cast<Eigen::Index>(cin * kh * kw), static_cast<Eigen::Index>(nb * plane));
  const std::size_t stride = nb * plane;
  for (std::size_t ic = 0; ic < cin; ++ic) {
    for (std::size_t i = 0; i < kh; ++i) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(i) - ph;
      for (std::size_t j = 0; j < kw; ++j) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) - pw;
        double* row = cols.data() + ((ic * kh + i) * kw + j) * stride;
        for (std::size_t b = 0; b < nb; ++b) {
          const double* src = input.raw() + ((b0 + b) * cin + ic) * plane;
          double* dst = row + b * plane;
          for (std::ptrdiff_t y = 0; y < H; ++y) {
            const std::ptrdiff_t sy = y + dy;
            double* d = dst + y * W;
            if (sy < 0 || sy >= H) {
              std::fill(d, d + W, 0.0);
              continue;
            }
            const double* s = src + sy * W;
            for (std::ptrdiff_t x = 0; x < W; ++x) {
              const std::ptrdiff_t sx = x + dx;
              d[x] = sx >= 0 && sx < W ? s[sx] : 0.0;
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters column gradients back into grad_input.
void col2im_add(const RowMatrix& cols, const ConvSpec& spec, std::size_t b0, std::size_t nb,
                Tensor& grad_input) {
  const std::size_t cin = spec.in_channels, kh = spec.kernel_h, kw = spec.kernel_w;
  const auto H = static_cast<std::ptrdiff_t>(grad_input.dim(2));
  const auto W = static_cast<std::ptrdiff_t>(grad_input.dim(3));
  const std::size_t plane = grad_input.dim(2) * grad_input.dim(3);
  const auto ph = static_cast<std::ptrdiff_t>(spec.pad_h());
  const auto pw = static_cast<std::ptrdiff_t>(spec.pad_w());
  const std::size_t stride = nb * plane;
  for (std::size_t ic = 0; ic < cin; ++ic) {
    for (std::size_t i = 0; i < kh; ++i) {
      const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(i) - ph;
      for (std::size_t j = 0; j < kw; ++j) {
        const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(j) - pw;
        const double* row = cols.data() + ((ic * kh + i) * kw + j) * stride;
        for (std::size_t b = 0; b < nb; ++b) {
          double* dst = grad_input.raw() + ((b0 + b) * cin + ic) * plane;
          const double* src = row + b * plane;
          const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
          const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(H, H - dy);
          const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
          const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(W, W - dx);
          for (std::ptrdiff_t y = y0; y < y1; ++y) {
            const double* s = src + y * W;
            double* d = dst + (y + dy) * W + dx;
            for (std::ptrdiff_t x = x0; x < x1; ++x) d[x] += s[x];
          }
        }
      }
    }
  }
}

}  // namespace

void ConvSpec::validate() const {
  if (kernel_h % 2 == 0 || kernel_w % 2 == 0) {
    throw UsageError("conv kernel extents must be odd, got " + std::to_string(kernel_h) + "x" +
                     std::to_string(kernel_w));
  }
  if (in_channels == 0 || out_channels == 0) {
    throw UsageError("conv channel counts must be >= 1");
  }
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
              const Tensor& bias) {
  spec.validate();
  require_rank(input, 4, "conv2d input");
  if (input.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d: input channel axis has extent " + std::to_string(input.dim(1)) +
                     ", expected " + std::to_string(spec.in_channels));
  }
  if (weights.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight shape " + shape_str(weights.shape()) + ", expected " +
                     shape_str(spec.weight_shape()));
  }
  if (bias.shape() != Shape{spec.out_channels}) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + ", expected [" +
                     std::to_string(spec.out_channels) + "]");
  }
  const std::size_t batch = input.dim(0), cin = spec.in_channels, cout = spec.out_channels;
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t plane = h * w;
  Tensor out({batch, cout, h, w});
  const std::size_t k = cin * kh * kw;
  const RowMatrixMap wmat(weights.raw(), static_cast<Eigen::Index>(cout),
                          static_cast<Eigen::Index>(k));
  const std::size_t chunk = batch_chunk(k, plane, batch);
  RowMatrix cols, prod;
  for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - b0);
    im2col(input, spec, b0, nb, cols);
    prod.noalias() = wmat * cols;
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        double* dst = out.raw() + ((b0 + b) * cout + oc) * plane;
        const double* src = prod.data() + oc * prod.cols() + b * plane;
        const double bv = bias[oc];
        for (std::size_t e = 0; e < plane; ++e) dst[e] = src[e] + bv;
      }
    }
  }
  return out;
}

std::pair<Tensor, ConvContext> conv2d_saved(const Tensor& input, const ConvSpec& spec,
                                            const Tensor& weights, const Tensor& bias) {
  Tensor out = conv2d(input, spec, weights, bias);
  return {std::move(out), ConvContext{spec, input, weights}};
}

ConvGrads conv2d_backward(const ConvContext& context, const Tensor& grad_out) {
  if (!context.valid()) {
    throw UsageError("conv2d_backward called without a saved forward context");
  }
  return conv2d_backward(context.spec, context.input, context.weights, grad_out);
}

ConvGrads conv2d_backward(const ConvSpec& spec, const Tensor& input, const Tensor& weights,
                          const Tensor& grad_out, bool need_input_grad) {
  if (input.rank() != 4 || input.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d_backward: saved input shape " + shape_str(input.shape()) +
                     " does not match the conv spec");
  }
  const std::size_t batch = input.dim(0), cin = spec.in_channels, cout = spec.out_channels;
  const std::size_t h = input.dim(2), w = input.dim(3);
  const Shape expected{batch, cout, h, w};
  if (grad_out.shape() != expected) {
    for (std::size_t a = 0; a < 4 && grad_out.rank() == 4; ++a) {
      if (grad_out.dim(a) != expected[a]) {
        throw ShapeError(std::string("conv2d_backward: grad_out ") + kImageAxis[a] +
                         " axis has extent " + std::to_string(grad_out.dim(a)) + ", expected " +
                         std::to_string(expected[a]));
      }
    }
    throw ShapeError("conv2d_backward: grad_out shape " + shape_str(grad_out.shape()) +
                     ", expected " + shape_str(expected));
  }
  const std::size_t kh = spec.kernel_h, kw = spec.kernel_w;
  const std::size_t plane = h * w;
  ConvGrads g{need_input_grad ? Tensor(input.shape()) : Tensor(), Tensor(spec.weight_shape()),
              Tensor({cout})};
  const std::size_t k = cin * kh * kw;
  const RowMatrixMap wmat(weights.raw(), static_cast<Eigen::Index>(cout),
                          static_cast<Eigen::Index>(k));
  RowMatrixMutMap gw(g.weights.raw(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(k));
  const std::size_t chunk = batch_chunk(k, plane, batch);
  RowMatrix cols, gmat, gcols;
  for (std::size_t b0 = 0; b0 < batch; b0 += chunk) {
    const std::size_t nb = std::min(chunk, batch - b0);
    im2col(input, spec, b0, nb, cols);
    gmat.resize(static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(nb * plane));
    for (std::size_t b = 0; b < nb; ++b) {
      for (std::size_t oc = 0; oc < cout; ++oc) {
        const double* src = grad_out.raw() + ((b0 + b) * cout + oc) * plane;
        double* dst = gmat.data() + oc * gmat.cols() + b * plane;
        double s = 0.0;
        for (std::size_t e = 0; e < plane; ++e) {
          dst[e] = src[e];
          s += src[e];
        }
        g.bias[oc] += s;
      }
    }
    gw.noalias() += gmat * cols.transpose();
    if (need_input_grad) {
      gcols.noalias() = wmat.transpose() * gmat;
      col2im_add(gcols, spec, b0, nb, g.input);
    }
  }
  return g;
}

PoolResult maxpool2d(const Tensor& input, PoolWindow window) {
  require_rank(input, 4, "maxpool2d input");
  if (window.h == 0 || window.w == 0) throw UsageError("maxpool2d: window extents must be >= 1");
  const std::size_t batch = input.dim(0), ch = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window.h > h) {
    throw ShapeError("maxpool2d: window height " + std::to_string(window.h) +
                     " exceeds height axis extent " + std::to_string(h));
  }
  if (window.w > w) {
    throw ShapeError("maxpool2d: window width " + std::to_string(window.w) +
                     " exceeds width axis extent " + std::to_string(w));
  }
  const std::size_t oh = h / window.h, ow = w / window.w;
  PoolResult r{Tensor({batch, ch, oh, ow}), std::vector<std::size_t>(batch * ch * oh * ow)};
  const double* in = input.raw();
  double* out = r.output.raw();
  std::size_t k = 0;
  for (std::size_t p = 0; p < batch * ch; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++k) {
        std::size_t best = base + (y * window.h) * w + x * window.w;
        for (std::size_t i = 0; i < window.h; ++i) {
          for (std::size_t j = 0; j < window.w; ++j) {
            const std::size_t off = base + (y * window.h + i) * w + x * window.w + j;
            if (in[off] > in[best]) best = off;
          }
        }
        out[k] = in[best];
        r.argmax[k] = best;
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_out) {
  if (grad_out.numel() != argmax.size()) {
    throw ShapeError("maxpool2d_backward: grad_out has " + std::to_string(grad_out.numel()) +
                     " elements, forward produced " + std::to_string(argmax.size()));
  }
  Tensor gi(input_shape);
  for (std::size_t k = 0; k < argmax.size(); ++k) gi[argmax[k]] += grad_out[k];
  return gi;
}

void validate_permutation(const std::vector<std::size_t>& order, std::size_t rank) {
  if (order.size() != rank) {
    throw UsageError("permute: order has " + std::to_string(order.size()) +
                     " entries for a rank " + std::to_string(rank) + " tensor");
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t a : order) {
    if (a >= rank || seen[a]) throw UsageError("permute: order is not a permutation of 0..rank-1");
    seen[a] = true;
  }
}

std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& order) {
  validate_permutation(order, order.size());
  std::vector<std::size_t> inv(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) inv[order[k]] = k;
  return inv;
}

Tensor permute(const Tensor& input, const std::vector<std::size_t>& order) {
  const std::size_t rank = input.rank();
  validate_permutation(order, rank);
  Shape out_shape(rank);
  const auto in_strides = strides_of(input.shape());
  std::vector<std::size_t> step(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = input.dim(order[k]);
    step[k] = in_strides[order[k]];
  }
  Tensor out(out_shape);
  const std::size_t n = out.numel();
  if (n == 0) return out;
  std::vector<std::size_t> idx(rank, 0);
  std::size_t src = 0;
  const double* in = input.raw();
  double* dst = out.raw();
  for (std::size_t i = 0; i < n; ++i) {
    dst[i] = in[src];
    for (std::size_t k = rank; k-- > 0;) {
      if (++idx[k] < out_shape[k]) {
        src += step[k];
        break;
      }
      src -= step[k] * (out_shape[k] - 1);
      idx[k] = 0;
    }
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || a.rank() != b.rank()) {
    throw ShapeError("concat_channels: incompatible ranks " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  for (std::size_t ax = 0; ax < a.rank(); ++ax) {
    if (ax != 1 && a.dim(ax) != b.dim(ax)) {
      throw ShapeError("concat_channels: extent mismatch on axis " + std::to_string(ax) + " (" +
                       std::to_string(a.dim(ax)) + " vs " + std::to_string(b.dim(ax)) + ")");
    }
  }
  Shape shape = a.shape();
  shape[1] = a.dim(1) + b.dim(1);
  Tensor out(shape);
  const std::size_t outer = a.dim(0);
  const std::size_t ablock = a.numel() / std::max<std::size_t>(outer, 1);
  const std::size_t bblock = b.numel() / std::max<std::size_t>(outer, 1);
  double* dst = out.raw();
  for (std::size_t i = 0; i < outer; ++i) {
    dst = std::copy_n(a.raw() + i * ablock, ablock, dst);
    dst = std::copy_n(b.raw() + i * bblock, bblock, dst);
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t leading) {
  if (t.rank() < 2 || leading > t.dim(1)) {
    throw ShapeError("split_channels: cannot split " + std::to_string(leading) +
                     " channels from shape " + shape_str(t.shape()));
  }
  Shape sa = t.shape(), sb = t.shape();
  sa[1] = leading;
  sb[1] = t.dim(1) - leading;
  Tensor a(sa), b(sb);
  const std::size_t outer = t.dim(0);
  const std::size_t ablock = a.numel() / std::max<std::size_t>(outer, 1);
  const std::size_t bblock = b.numel() / std::max<std::size_t>(outer, 1);
  const double* src = t.raw();
  for (std::size_t i = 0; i < outer; ++i) {
    std::copy_n(src, ablock, a.raw() + i * ablock);
    src += ablock;
    std::copy_n(src, bblock, b.raw() + i * bblock);
    src += bblock;
  }
  return {std::move(a), std::move(b)};
}

Tensor relu(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0 ? input[i] : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  if (input.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor g(input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) g[i] = input[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  const std::size_t batch = input.dim(0), fin = input.dim(1), fout = weights.dim(0);
  if (weights.dim(1) != fin) {
    throw ShapeError("dense: weight input axis has extent " + std::to_string(weights.dim(1)) +
                     ", input feature axis has " + std::to_string(fin));
  }
  if (bias.shape() != Shape{fout}) {
    throw ShapeError("dense: bias shape " + shape_str(bias.shape()) + ", expected [" +
                     std::to_string(fout) + "]");
  }
  Tensor out({batch, fout});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = input.raw() + b * fin;
    for (std::size_t o = 0; o < fout; ++o) {
      const double* wr = weights.raw() + o * fin;
      double s = bias[o];
      for (std::size_t i = 0; i < fin; ++i) s += wr[i] * x[i];
      out[b * fout + o] = s;
    }
  }
  return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out) {
  const std::size_t batch = input.dim(0), fin = input.dim(1), fout = weights.dim(0);
  if (grad_out.shape() != Shape{batch, fout}) {
    throw ShapeError("dense_backward: grad_out shape " + shape_str(grad_out.shape()));
  }
  DenseGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({fout})};
  for (std::size_t b = 0; b < batch; ++b) {
    const double* x = input.raw() + b * fin;
    double* gx = g.input.raw() + b * fin;
    for (std::size_t o = 0; o < fout; ++o) {
      const double go = grad_out[b * fout + o];
      if (go == 0.0) continue;
      g.bias[o] += go;
      const double* wr = weights.raw() + o * fin;
      double* gwr = g.weights.raw() + o * fin;
      for (std::size_t i = 0; i < fin; ++i) {
        gx[i] += go * wr[i];
        gwr[i] += go * x[i];
      }
    }
  }
  return g;
}

void validate_dropout_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw UsageError("dropout ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
}

Tensor dropout_mask(const Shape& shape, double ratio, Rng& rng) {
  validate_dropout_ratio(ratio);
  Tensor mask(shape);
  const double keep_scale = 1.0 / (1.0 - ratio);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double& m : mask.data()) m = u(rng) < ratio ? 0.0 : keep_scale;
  return mask;
}

Tensor multiply(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("multiply: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor dropout(const Tensor& input, double ratio, Mode mode, Rng& rng) {
  validate_dropout_ratio(ratio);
  if (mode == Mode::kEval || ratio == 0.0) return input;
  return multiply(input, dropout_mask(input.shape(), ratio, rng));
}

Tensor resize_temporal_bilinear(const Tensor& seq, std::size_t target_frames) {
  if (seq.rank() < 1 || seq.dim(0) == 0) {
    throw ShapeError("resize_temporal_bilinear: input needs at least one frame");
  }
  if (target_frames == 0) throw UsageError("resize_temporal_bilinear: target length must be >= 1");
  const std::size_t frames = seq.dim(0);
  if (frames == target_frames) return seq;
  const std::size_t frame_size = seq.numel() / frames;
  Shape shape = seq.shape();
  shape[0] = target_frames;
  Tensor out(shape);
  for (std::size_t k = 0; k < target_frames; ++k) {
    double pos = 0.0;
    if (target_frames > 1) {
      pos = static_cast<double>(k * (frames - 1)) / static_cast<double>(target_frames - 1);
    }
    const auto i0 = std::min(static_cast<std::size_t>(std::floor(pos)), frames - 1);
    const std::size_t i1 = std::min(i0 + 1, frames - 1);
    const double f = pos - static_cast<double>(i0);
    const double* a = seq.raw() + i0 * frame_size;
    const double* b = seq.raw() + i1 * frame_size;
    double* dst = out.raw() + k * frame_size;
    if (f == 0.0) {
      std::copy_n(a, frame_size, dst);
    } else {
      for (std::size_t e = 0; e < frame_size; ++e) dst[e] = a[e] + f * (b[e] - a[e]);
    }
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() == 0 || logits.shape().back() == 0) {
    throw ShapeError("softmax: empty class axis");
  }
  const std::size_t classes = logits.shape().back();
  const std::size_t rows = logits.numel() / classes;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.raw() + r * classes;
    double* p = out.raw() + r * classes;
    const double m = *std::max_element(z, z + classes);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      p[c] = std::exp(z[c] - m);
      s += p[c];
    }
    for (std::size_t c = 0; c < classes; ++c) p[c] /= s;
  }
  return out;
}

}  // namespace hcn::ops
