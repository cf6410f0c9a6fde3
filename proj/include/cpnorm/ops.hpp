#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "cpnorm/tensor.hpp"

// Stateless forward/backward kernels. Activations are NCHW (conv) or NF
// (linear) tensors; conv weights are (out, in, kh, kw), linear weights are
// (out, in).
namespace cpnorm::ops {

struct Conv2dGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

std::size_t conv_output_size(std::size_t input, std::size_t kernel, const Conv2dGeometry& g);

/// Cross-correlation. `bias` may be empty.
Tensor conv2d_forward(const Tensor& input, const Tensor& weight, const Vector& bias,
                      const Conv2dGeometry& g);

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Vector bias;
};

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                            bool with_bias, const Conv2dGeometry& g);

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Vector& bias);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Vector bias;
};

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_output,
                            bool with_bias);

struct PoolResult {
  Tensor output;
  /// Flat input offset of the selected element for every output element.
  std::vector<std::size_t> argmax;
};

/// Non-overlapping k×k max pooling (stride k); trailing rows/cols that do not
/// fill a window are dropped.
PoolResult maxpool2d_forward(const Tensor& input, std::size_t k);
Tensor maxpool2d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                          const Tensor& grad_output);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_output);

/// Inverted dropout mask: entries are 0 or 1/keep_prob.
std::vector<double> dropout_mask(std::size_t n, double keep_prob, std::mt19937_64& rng);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d(mean loss)/d(logits)
  std::size_t correct = 0;
};

/// Mean softmax cross-entropy over the batch, with its gradient at the logits.
LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace cpnorm::ops
