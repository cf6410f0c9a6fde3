#include "cpnorm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cpnorm::ops {

namespace {

using MatMap = Eigen::Map<Matrix>;
using ConstMatMap = Eigen::Map<const Matrix>;

struct ConvDims {
  std::size_t n, c, h, w, o, k, oh, ow;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Conv2dGeometry& g) {
  if (input.order() != 4) {
    throw std::invalid_argument("conv2d: input must be NCHW, got shape " + shape_string(input.shape()));
  }
  if (weight.order() != 4 || weight.dim(2) != weight.dim(3)) {
    throw std::invalid_argument("conv2d: weight must be (out, in, k, k), got " +
                                shape_string(weight.shape()));
  }
  if (input.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(input.dim(1)) +
                                " channels, weight expects " + std::to_string(weight.dim(1)));
  }
  if (g.stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  ConvDims d{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2), 0, 0};
  if (d.h + 2 * g.padding < d.k || d.w + 2 * g.padding < d.k) {
    throw std::invalid_argument("conv2d: kernel " + std::to_string(d.k) + " does not fit input " +
                                std::to_string(d.h) + "x" + std::to_string(d.w) + " with padding " +
                                std::to_string(g.padding));
  }
  d.oh = conv_output_size(d.h, d.k, g);
  d.ow = conv_output_size(d.w, d.k, g);
  return d;
}

// cols is (C·k·k) × (oh·ow); rows ordered (c, ki, kj) to match the weight layout.
void im2col(const double* img, const ConvDims& d, const Conv2dGeometry& g, Matrix& cols) {
  cols.resize(static_cast<Eigen::Index>(d.c * d.k * d.k), static_cast<Eigen::Index>(d.oh * d.ow));
  double* out = cols.data();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < d.c; ++c) {
    const double* plane = img + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.k; ++ki) {
      for (std::size_t kj = 0; kj < d.k; ++kj) {
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
          const bool row_ok = y >= 0 && y < static_cast<std::ptrdiff_t>(d.h);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
            *out++ = (row_ok && x >= 0 && x < static_cast<std::ptrdiff_t>(d.w))
                         ? plane[static_cast<std::size_t>(y) * d.w + static_cast<std::size_t>(x)]
                         : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const Matrix& cols, const ConvDims& d, const Conv2dGeometry& g, double* img) {
  const double* in = cols.data();
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t c = 0; c < d.c; ++c) {
    double* plane = img + c * d.h * d.w;
    for (std::size_t ki = 0; ki < d.k; ++ki) {
      for (std::size_t kj = 0; kj < d.k; ++kj) {
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - pad;
          const bool row_ok = y >= 0 && y < static_cast<std::ptrdiff_t>(d.h);
          for (std::size_t ox = 0; ox < d.ow; ++ox, ++in) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - pad;
            if (row_ok && x >= 0 && x < static_cast<std::ptrdiff_t>(d.w)) {
              plane[static_cast<std::size_t>(y) * d.w + static_cast<std::size_t>(x)] += *in;
            }
          }
        }
      }
    }
  }
}

}  // namespace

std::size_t conv_output_size(std::size_t input, std::size_t kernel, const Conv2dGeometry& g) {
  return (input + 2 * g.padding - kernel) / g.stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Vector& bias,
                      const Conv2dGeometry& g) {
  const ConvDims d = conv_dims(input, weight, g);
  if (bias.size() != 0 && static_cast<std::size_t>(bias.size()) != d.o) {
    throw std::invalid_argument("conv2d: bias length mismatch");
  }
  Tensor out({d.n, d.o, d.oh, d.ow});
  const ConstMatMap wm(weight.ptr(), static_cast<Eigen::Index>(d.o),
                       static_cast<Eigen::Index>(d.c * d.k * d.k));
  Matrix cols;
  const std::size_t in_stride = d.c * d.h * d.w;
  const std::size_t out_stride = d.o * d.oh * d.ow;
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(input.ptr() + n * in_stride, d, g, cols);
    MatMap om(out.ptr() + n * out_stride, static_cast<Eigen::Index>(d.o),
              static_cast<Eigen::Index>(d.oh * d.ow));
    om.noalias() = wm * cols;
    if (bias.size() != 0) om.colwise() += bias;
  }
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                            bool with_bias, const Conv2dGeometry& g) {
  const ConvDims d = conv_dims(input, weight, g);
  if (grad_output.shape() != Shape{d.n, d.o, d.oh, d.ow}) {
    throw std::invalid_argument("conv2d_backward: grad_output shape " +
                                shape_string(grad_output.shape()) + " does not match output");
  }
  Conv2dGrads grads{Tensor(input.shape()), Tensor(weight.shape()),
                    with_bias ? Vector(Vector::Zero(static_cast<Eigen::Index>(d.o))) : Vector()};
  const auto ckk = static_cast<Eigen::Index>(d.c * d.k * d.k);
  const ConstMatMap wm(weight.ptr(), static_cast<Eigen::Index>(d.o), ckk);
  MatMap gw(grads.weight.ptr(), static_cast<Eigen::Index>(d.o), ckk);
  Matrix cols, grad_cols;
  const std::size_t in_stride = d.c * d.h * d.w;
  const std::size_t out_stride = d.o * d.oh * d.ow;
  for (std::size_t n = 0; n < d.n; ++n) {
    im2col(input.ptr() + n * in_stride, d, g, cols);
    const ConstMatMap go(grad_output.ptr() + n * out_stride, static_cast<Eigen::Index>(d.o),
                         static_cast<Eigen::Index>(d.oh * d.ow));
    gw.noalias() += go * cols.transpose();
    if (with_bias) grads.bias += go.rowwise().sum();
    grad_cols.noalias() = wm.transpose() * go;
    col2im(grad_cols, d, g, grads.input.ptr() + n * in_stride);
  }
  return grads;
}

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Vector& bias) {
  if (input.order() != 2 || weight.order() != 2 || input.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("linear: input " + shape_string(input.shape()) +
                                " incompatible with weight " + shape_string(weight.shape()));
  }
  if (bias.size() != 0 && static_cast<std::size_t>(bias.size()) != weight.dim(0)) {
    throw std::invalid_argument("linear: bias length mismatch");
  }
  Tensor out({input.dim(0), weight.dim(0)});
  auto om = out.as_matrix(input.dim(0));
  om.noalias() = input.as_matrix(input.dim(0)) * weight.as_matrix(weight.dim(0)).transpose();
  if (bias.size() != 0) om.rowwise() += bias.transpose();
  return out;
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                            bool with_bias) {
  if (grad_output.shape() != Shape{input.dim(0), weight.dim(0)}) {
    throw std::invalid_argument("linear_backward: grad_output shape mismatch");
  }
  LinearGrads grads{Tensor(input.shape()), Tensor(weight.shape()), Vector()};
  const auto go = grad_output.as_matrix(input.dim(0));
  grads.input.as_matrix(input.dim(0)).noalias() = go * weight.as_matrix(weight.dim(0));
  grads.weight.as_matrix(weight.dim(0)).noalias() = go.transpose() * input.as_matrix(input.dim(0));
  if (with_bias) grads.bias = go.colwise().sum().transpose();
  return grads;
}

PoolResult maxpool2d_forward(const Tensor& input, std::size_t k) {
  if (input.order() != 4) throw std::invalid_argument("maxpool2d: input must be NCHW");
  if (k == 0 || input.dim(2) < k || input.dim(3) < k) {
    throw std::invalid_argument("maxpool2d: window " + std::to_string(k) + " does not fit " +
                                shape_string(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  PoolResult result{Tensor({n, c, oh, ow}), {}};
  result.argmax.resize(result.output.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
        std::size_t best = base + oy * k * w + ox * k;
        double best_v = input[best];
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = base + (oy * k + dy) * w + ox * k + dx;
            if (input[idx] > best_v) {
              best_v = input[idx];
              best = idx;
            }
          }
        }
        result.output[o] = best_v;
        result.argmax[o] = best;
      }
    }
  }
  return result;
}

Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_output) {
  if (argmax.size() != grad_output.size()) throw std::invalid_argument("maxpool2d_backward: size mismatch");
  Tensor grad(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_output[i];
  return grad;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_output) {
  if (input.shape() != grad_output.shape()) throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor grad = grad_output;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(input[i] > 0.0)) grad[i] = 0.0;
  }
  return grad;
}

std::vector<double> dropout_mask(std::size_t n, double keep_prob, std::mt19937_64& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) {
    throw std::invalid_argument("dropout: keep probability must lie in (0, 1]");
  }
  std::vector<double> mask(n, 1.0);
  if (keep_prob == 1.0) return mask;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double scale = 1.0 / keep_prob;
  for (auto& m : mask) m = u(rng) < keep_prob ? scale : 0.0;
  return mask;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.order() != 2 || logits.dim(0) != labels.size()) {
    throw std::invalid_argument("softmax_cross_entropy: logits " + shape_string(logits.shape()) +
                                " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  LossResult result{0.0, Tensor(logits.shape()), 0};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                  " out of range");
    }
    const double* row = logits.ptr() + i * k;
    double* grow = result.grad.ptr() + i * k;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    const double mx = row[arg];
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      grow[j] = std::exp(row[j] - mx);
      sum += grow[j];
    }
    result.loss += std::log(sum) - (row[label] - mx);
    for (std::size_t j = 0; j < k; ++j) grow[j] /= sum;
    grow[label] -= 1.0;
    if (arg == static_cast<std::size_t>(label)) ++result.correct;
  }
  result.loss /= static_cast<double>(n);
  result.grad *= 1.0 / static_cast<double>(n);
  return result;
}

}  // namespace cpnorm::ops
