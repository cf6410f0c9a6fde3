#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "cpnorm/cp.hpp"
#include "cpnorm/param.hpp"
#include "cpnorm/tensor.hpp"

namespace cpnorm {

enum class LayerKind { conv2d, linear, maxpool, relu, dropout, flatten };
enum class Normalization { none, weight, cp };
enum class InitMode { power, als, kaiming_normal, kaiming_uniform };

Normalization parse_normalization(const std::string& name);
InitMode parse_init_mode(const std::string& name);
std::string to_string(LayerKind k);
std::string to_string(Normalization n);
std::string to_string(InitMode m);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  /// conv2d: channels; linear: features.
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  /// maxpool window.
  std::size_t pool = 2;
  /// dropout keep probability.
  double keep_prob = 1.0;
  Normalization normalization = Normalization::none;
  /// CP rank; required when normalization = cp.
  std::size_t rank = 0;
  bool bias = true;

  bool has_weight() const { return kind == LayerKind::conv2d || kind == LayerKind::linear; }
  /// Internal weight shape: (out, in, k, k) or (out, in).
  Shape weight_shape() const;
};

/// Flat view of one trainable block and its gradient buffer.
struct ParamRef {
  std::string name;
  double* value = nullptr;
  double* grad = nullptr;
  std::size_t size = 0;
  bool is_bias = false;
};

struct CpNormGradBuffers {
  std::vector<Matrix> factors;
  Vector lambdas;
  double sigma = 0.0;
};

using WeightParams = std::variant<Tensor, WeightNormParam, CpNormParam>;
using WeightGrads = std::variant<Tensor, WeightNormGrads, CpNormGradBuffers>;

struct Layer {
  LayerSpec spec;
  Shape in_shape;   // per sample
  Shape out_shape;  // per sample
  WeightParams weight{Tensor({1})};
  WeightGrads weight_grad{Tensor({1})};
  Vector bias;
  Vector bias_grad;

  // Forward caches consumed by backward.
  Tensor cached_input{{1}};
  Tensor cached_weight{{1}};
  std::vector<std::size_t> pool_argmax;
  std::vector<double> dropout_mask;
};

struct InitOptions {
  InitMode mode = InitMode::power;
  LambdaInit lambda_init = LambdaInit::ones;
  std::uint64_t seed = 0;
};

class Model {
 public:
  /// `input_shape` is per sample (C, H, W). Throws std::invalid_argument
  /// naming the first layer whose input does not fit.
  Model(std::vector<LayerSpec> specs, Shape input_shape);

  const Shape& input_shape() const { return input_shape_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  Layer& layer(const std::string& name);
  const Layer& layer(const std::string& name) const;

  /// Dense weights and biases are drawn from U(±1/√fan_in); weight-norm
  /// layers start at v = W, g = ‖W‖; CP layers decompose W (power/als) or
  /// draw a random CP form, then renormalize with σ = 1.
  void init(const InitOptions& options);

  /// `rng` drives dropout in training mode; evaluation ignores it.
  Tensor forward(const Tensor& input, bool train, std::mt19937_64* rng = nullptr);
  /// Accumulates parameter gradients; returns the gradient at the input.
  Tensor backward(const Tensor& grad_output);
  void zero_grad();

  std::vector<ParamRef> params();
  /// Trainable scalars: dense elements, weight-norm elements + 1, CP
  /// Σ d_k·R + R + 1; biases optionally.
  std::size_t param_count(bool include_bias = false) const;

  /// Post-step hook: projects every CP factor column to unit norm.
  void renormalize();

  /// Re-derives per-layer shapes (after a layer's rank or weight changed).
  void refresh_shapes();

 private:
  std::vector<Layer> layers_;
  Shape input_shape_;
};

/// Checks that `input_shape` (per sample) flows through `specs`; throws
/// std::invalid_argument naming the first incompatible layer.
std::vector<std::pair<Shape, Shape>> infer_shapes(const std::vector<LayerSpec>& specs,
                                                  const Shape& input_shape);

/// Zero-initialized parameters matching each spec.
WeightParams make_weight_params(const LayerSpec& spec);

enum class Architecture { lenet, alexnet };
Architecture parse_architecture(const std::string& name);
std::string to_string(Architecture a);

/// Default ranks of the weighted layers by name (conv1.., fc1..).
std::map<std::string, std::size_t> default_ranks(Architecture a);

/// Layer list for the architecture with the given normalization on every
/// weighted layer; `rank_overrides` replaces default ranks by layer name.
std::vector<LayerSpec> architecture_specs(Architecture a, Normalization norm,
                                          const std::map<std::string, std::size_t>& rank_overrides = {});
Shape architecture_input_shape(Architecture a);

}  // namespace cpnorm
