#include "cpnorm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "cpnorm/ops.hpp"

namespace cpnorm {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void incompatible(const LayerSpec& spec, const std::string& what, const Shape& got) {
  throw std::invalid_argument("layer '" + spec.name + "' (" + to_string(spec.kind) + "): " + what +
                              ", got input of shape " + shape_string(got));
}

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.kind) {
    case LayerKind::conv2d: {
      if (in.size() != 3) incompatible(spec, "expects a C×H×W input", in);
      if (in[0] != spec.in) {
        incompatible(spec, "expects " + std::to_string(spec.in) + " input channels", in);
      }
      if (in[1] + 2 * spec.padding < spec.kernel || in[2] + 2 * spec.padding < spec.kernel) {
        incompatible(spec, "kernel " + std::to_string(spec.kernel) + " does not fit", in);
      }
      const ops::Conv2dGeometry g{spec.stride, spec.padding};
      return {spec.out, ops::conv_output_size(in[1], spec.kernel, g),
              ops::conv_output_size(in[2], spec.kernel, g)};
    }
    case LayerKind::linear:
      if (in.size() != 1 || in[0] != spec.in) {
        incompatible(spec, "expects " + std::to_string(spec.in) + " input features", in);
      }
      return {spec.out};
    case LayerKind::maxpool:
      if (in.size() != 3 || in[1] < spec.pool || in[2] < spec.pool) {
        incompatible(spec, "expects a C×H×W input of at least the pooling window", in);
      }
      return {in[0], in[1] / spec.pool, in[2] / spec.pool};
    case LayerKind::relu:
    case LayerKind::dropout:
      return in;
    case LayerKind::flatten:
      return {shape_size(in)};
  }
  throw std::logic_error("unknown layer kind");
}

void check_spec(const LayerSpec& spec) {
  const auto fail = [&](const std::string& what) {
    throw std::invalid_argument("layer '" + spec.name + "': " + what);
  };
  if (spec.has_weight()) {
    if (spec.in == 0 || spec.out == 0) fail("dimensions must be positive");
    if (spec.kind == LayerKind::conv2d && (spec.kernel == 0 || spec.stride == 0)) {
      fail("kernel and stride must be positive");
    }
    if (spec.normalization == Normalization::cp && spec.rank == 0) fail("CP rank must be >= 1");
  } else if (spec.normalization != Normalization::none) {
    fail("normalization applies only to conv2d and linear layers");
  }
  if (spec.kind == LayerKind::maxpool && spec.pool == 0) fail("pooling window must be positive");
  if (spec.kind == LayerKind::dropout && !(spec.keep_prob > 0.0 && spec.keep_prob <= 1.0)) {
    fail("keep probability must lie in (0, 1]");
  }
}

WeightGrads zero_grads_like(const WeightParams& w) {
  return std::visit(overloaded{
                        [](const Tensor& t) -> WeightGrads { return Tensor(t.shape()); },
                        [](const WeightNormParam& p) -> WeightGrads {
                          return WeightNormGrads{Tensor(p.v.shape()), 0.0};
                        },
                        [](const CpNormParam& p) -> WeightGrads {
                          CpNormGradBuffers g;
                          for (const auto& a : p.cp.factors) g.factors.push_back(Matrix::Zero(a.rows(), a.cols()));
                          g.lambdas = Vector::Zero(p.cp.lambdas.size());
                          return g;
                        },
                    },
                    w);
}

Tensor materialize(const Layer& layer) {
  return std::visit(overloaded{
                        [](const Tensor& t) { return t; },
                        [](const WeightNormParam& p) { return weightnorm_weight(p); },
                        [&](const CpNormParam& p) { return cpnorm_weight(p, layer.spec.name); },
                    },
                    layer.weight);
}

void accumulate_weight_grad(Layer& layer, const Tensor& grad_w) {
  std::visit(overloaded{
                 [&](Tensor& g) { g += grad_w; },
                 [&](WeightNormGrads& g) {
                   const auto wg = weightnorm_backward(std::get<WeightNormParam>(layer.weight), grad_w);
                   g.v += wg.v;
                   g.g += wg.g;
                 },
                 [&](CpNormGradBuffers& g) {
                   const auto cg = cpnorm_backward(std::get<CpNormParam>(layer.weight), grad_w,
                                                   layer.spec.name);
                   for (std::size_t k = 0; k < g.factors.size(); ++k) g.factors[k] += cg.factors[k];
                   g.lambdas += cg.lambdas;
                   g.sigma += cg.sigma;
                 },
             },
             layer.weight_grad);
}

Shape batched(std::size_t n, const Shape& per_sample) {
  Shape s{n};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

}  // namespace

Normalization parse_normalization(const std::string& name) {
  if (name == "none") return Normalization::none;
  if (name == "weight") return Normalization::weight;
  if (name == "cp") return Normalization::cp;
  throw std::invalid_argument("unknown normalization '" + name + "' (expected none, weight or cp)");
}

InitMode parse_init_mode(const std::string& name) {
  if (name == "power") return InitMode::power;
  if (name == "als") return InitMode::als;
  if (name == "kaiming_normal") return InitMode::kaiming_normal;
  if (name == "kaiming_uniform") return InitMode::kaiming_uniform;
  throw std::invalid_argument("unknown init '" + name +
                              "' (expected power, als, kaiming_normal or kaiming_uniform)");
}

std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::linear: return "linear";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
  }
  return "?";
}

std::string to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::weight: return "weight";
    case Normalization::cp: return "cp";
  }
  return "?";
}

std::string to_string(InitMode m) {
  switch (m) {
    case InitMode::power: return "power";
    case InitMode::als: return "als";
    case InitMode::kaiming_normal: return "kaiming_normal";
    case InitMode::kaiming_uniform: return "kaiming_uniform";
  }
  return "?";
}

Shape LayerSpec::weight_shape() const {
  if (kind == LayerKind::conv2d) return {out, in, kernel, kernel};
  if (kind == LayerKind::linear) return {out, in};
  throw std::logic_error("layer '" + name + "' has no weight");
}

std::vector<std::pair<Shape, Shape>> infer_shapes(const std::vector<LayerSpec>& specs,
                                                  const Shape& input_shape) {
  std::vector<std::pair<Shape, Shape>> shapes;
  Shape cur = input_shape;
  for (const auto& spec : specs) {
    Shape next = layer_output_shape(spec, cur);
    shapes.emplace_back(cur, next);
    cur = std::move(next);
  }
  return shapes;
}

WeightParams make_weight_params(const LayerSpec& spec) {
  const Shape shape = spec.weight_shape();
  switch (spec.normalization) {
    case Normalization::none:
      return Tensor(shape);
    case Normalization::weight:
      return WeightNormParam{Tensor(shape), 1.0};
    case Normalization::cp: {
      CpNormParam p;
      p.cp.shape = shape;
      for (auto d : shape) {
        p.cp.factors.push_back(Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(spec.rank)));
      }
      p.cp.lambdas = Vector::Ones(static_cast<Eigen::Index>(spec.rank));
      return p;
    }
  }
  throw std::logic_error("unknown normalization");
}

Model::Model(std::vector<LayerSpec> specs, Shape input_shape) : input_shape_(std::move(input_shape)) {
  for (const auto& s : specs) check_spec(s);
  const auto shapes = infer_shapes(specs, input_shape_);
  layers_.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Layer layer;
    layer.spec = std::move(specs[i]);
    layer.in_shape = shapes[i].first;
    layer.out_shape = shapes[i].second;
    if (layer.spec.has_weight()) {
      layer.weight = make_weight_params(layer.spec);
      if (layer.spec.bias) layer.bias = Vector::Zero(static_cast<Eigen::Index>(layer.spec.out));
    }
    layers_.push_back(std::move(layer));
  }
  zero_grad();
}

Layer& Model::layer(const std::string& name) {
  for (auto& l : layers_) {
    if (l.spec.name == name) return l;
  }
  throw std::out_of_range("no layer named '" + name + "'");
}

const Layer& Model::layer(const std::string& name) const {
  return const_cast<Model*>(this)->layer(name);
}

void Model::refresh_shapes() {
  std::vector<LayerSpec> specs;
  for (const auto& l : layers_) specs.push_back(l.spec);
  const auto shapes = infer_shapes(specs, input_shape_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].in_shape = shapes[i].first;
    layers_[i].out_shape = shapes[i].second;
  }
  zero_grad();
}

void Model::init(const InitOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::size_t index = 0;
  for (auto& layer : layers_) {
    ++index;
    if (!layer.spec.has_weight()) continue;
    const LayerSpec& spec = layer.spec;
    const Shape shape = spec.weight_shape();
    const double fan_in = static_cast<double>(shape_size(shape) / spec.out);
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    Tensor w(shape);
    for (auto& v : w.data()) v = u(rng);
    if (spec.bias) {
      for (auto& b : layer.bias) b = u(rng);
    }
    const std::uint64_t layer_seed = options.seed * 1000003ULL + index;
    switch (spec.normalization) {
      case Normalization::none:
        layer.weight = std::move(w);
        break;
      case Normalization::weight: {
        const double g = frobenius_norm(w);
        layer.weight = WeightNormParam{std::move(w), g};
        break;
      }
      case Normalization::cp: {
        CpNormParam p;
        switch (options.mode) {
          case InitMode::power:
            p.cp = cp_power(w, spec.rank, {50, layer_seed}).first;
            break;
          case InitMode::als:
            p.cp = cp_als(w, spec.rank, {200, 1e-7, layer_seed, {}}).first;
            break;
          case InitMode::kaiming_normal:
          case InitMode::kaiming_uniform:
            p.cp = random_cp(shape, spec.rank,
                             options.mode == InitMode::kaiming_normal ? FactorDist::kaiming_normal
                                                                      : FactorDist::kaiming_uniform,
                             options.lambda_init, layer_seed);
            break;
        }
        renormalize_in_place(p.cp, false, spec.name);
        p.sigma = 1.0;
        layer.weight = std::move(p);
        break;
      }
    }
  }
  zero_grad();
}

Tensor Model::forward(const Tensor& input, bool train, std::mt19937_64* rng) {
  const Shape per_sample(input.shape().begin() + 1, input.shape().end());
  if (per_sample != input_shape_) {
    std::vector<LayerSpec> specs;
    for (const auto& l : layers_) specs.push_back(l.spec);
    infer_shapes(specs, per_sample);
    throw std::invalid_argument("model expects inputs of shape " + shape_string(input_shape_) +
                                ", got " + shape_string(per_sample));
  }
  if (train && !rng) throw std::invalid_argument("training forward needs a random generator");
  const std::size_t n = input.dim(0);
  Tensor x = input;
  for (auto& layer : layers_) {
    const LayerSpec& spec = layer.spec;
    switch (spec.kind) {
      case LayerKind::conv2d:
      case LayerKind::linear: {
        const bool dense = std::holds_alternative<Tensor>(layer.weight);
        if (!dense) layer.cached_weight = materialize(layer);
        const Tensor& w = dense ? std::get<Tensor>(layer.weight) : layer.cached_weight;
        Tensor y = spec.kind == LayerKind::conv2d
                       ? ops::conv2d_forward(x, w, layer.bias, {spec.stride, spec.padding})
                       : ops::linear_forward(x, w, layer.bias);
        layer.cached_input = std::move(x);
        x = std::move(y);
        break;
      }
      case LayerKind::maxpool: {
        auto pooled = ops::maxpool2d_forward(x, spec.pool);
        layer.pool_argmax = std::move(pooled.argmax);
        x = std::move(pooled.output);
        break;
      }
      case LayerKind::relu: {
        Tensor y = ops::relu_forward(x);
        layer.cached_input = std::move(x);
        x = std::move(y);
        break;
      }
      case LayerKind::dropout:
        if (train && spec.keep_prob < 1.0) {
          layer.dropout_mask = ops::dropout_mask(x.size(), spec.keep_prob, *rng);
          for (std::size_t i = 0; i < x.size(); ++i) x[i] *= layer.dropout_mask[i];
        } else {
          layer.dropout_mask.assign(x.size(), 1.0);
        }
        break;
      case LayerKind::flatten:
        x = x.reshaped({n, shape_size(layer.in_shape)});
        break;
    }
  }
  return x;
}

Tensor Model::backward(const Tensor& grad_output) {
  Tensor g = grad_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    Layer& layer = *it;
    const LayerSpec& spec = layer.spec;
    const std::size_t n = g.dim(0);
    switch (spec.kind) {
      case LayerKind::conv2d:
      case LayerKind::linear: {
        const bool dense = std::holds_alternative<Tensor>(layer.weight);
        const Tensor& w = dense ? std::get<Tensor>(layer.weight) : layer.cached_weight;
        Tensor grad_w{{1}};
        Vector grad_b;
        if (spec.kind == LayerKind::conv2d) {
          auto grads = ops::conv2d_backward(layer.cached_input, w, g, spec.bias,
                                            {spec.stride, spec.padding});
          g = std::move(grads.input);
          grad_w = std::move(grads.weight);
          grad_b = std::move(grads.bias);
        } else {
          auto grads = ops::linear_backward(layer.cached_input, w, g, spec.bias);
          g = std::move(grads.input);
          grad_w = std::move(grads.weight);
          grad_b = std::move(grads.bias);
        }
        if (spec.bias) layer.bias_grad += grad_b;
        accumulate_weight_grad(layer, grad_w);
        break;
      }
      case LayerKind::maxpool:
        g = ops::maxpool2d_backward(batched(n, layer.in_shape), layer.pool_argmax, g);
        break;
      case LayerKind::relu:
        g = ops::relu_backward(layer.cached_input, g);
        break;
      case LayerKind::dropout:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= layer.dropout_mask[i];
        break;
      case LayerKind::flatten:
        g = g.reshaped(batched(n, layer.in_shape));
        break;
    }
  }
  return g;
}

void Model::zero_grad() {
  for (auto& layer : layers_) {
    if (!layer.spec.has_weight()) continue;
    layer.weight_grad = zero_grads_like(layer.weight);
    layer.bias_grad = Vector::Zero(layer.bias.size());
  }
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> refs;
  for (auto& layer : layers_) {
    if (!layer.spec.has_weight()) continue;
    const std::string& name = layer.spec.name;
    std::visit(overloaded{
                   [&](Tensor& w) {
                     auto& g = std::get<Tensor>(layer.weight_grad);
                     refs.push_back({name + ".weight", w.ptr(), g.ptr(), w.size()});
                   },
                   [&](WeightNormParam& p) {
                     auto& g = std::get<WeightNormGrads>(layer.weight_grad);
                     refs.push_back({name + ".v", p.v.ptr(), g.v.ptr(), p.v.size()});
                     refs.push_back({name + ".g", &p.g, &g.g, 1});
                   },
                   [&](CpNormParam& p) {
                     auto& g = std::get<CpNormGradBuffers>(layer.weight_grad);
                     refs.push_back({name + ".sigma", &p.sigma, &g.sigma, 1});
                     refs.push_back({name + ".lambda", p.cp.lambdas.data(), g.lambdas.data(),
                                     static_cast<std::size_t>(p.cp.lambdas.size())});
                     for (std::size_t k = 0; k < p.cp.factors.size(); ++k) {
                       refs.push_back({name + ".factor" + std::to_string(k), p.cp.factors[k].data(),
                                       g.factors[k].data(),
                                       static_cast<std::size_t>(p.cp.factors[k].size())});
                     }
                   },
               },
               layer.weight);
    if (layer.spec.bias) {
      refs.push_back({name + ".bias", layer.bias.data(), layer.bias_grad.data(),
                      static_cast<std::size_t>(layer.bias.size()), true});
    }
  }
  return refs;
}

std::size_t Model::param_count(bool include_bias) const {
  std::size_t count = 0;
  for (const auto& layer : layers_) {
    if (!layer.spec.has_weight()) continue;
    count += std::visit(overloaded{
                            [](const Tensor& w) { return w.size(); },
                            [](const WeightNormParam& p) { return p.v.size() + 1; },
                            [](const CpNormParam& p) { return p.cp.scalar_count() + 1; },
                        },
                        layer.weight);
    if (include_bias) count += static_cast<std::size_t>(layer.bias.size());
  }
  return count;
}

void Model::renormalize() {
  for (auto& layer : layers_) {
    if (auto* p = std::get_if<CpNormParam>(&layer.weight)) {
      renormalize_in_place(p->cp, false, layer.spec.name);
    }
  }
}

Architecture parse_architecture(const std::string& name) {
  if (name == "lenet") return Architecture::lenet;
  if (name == "alexnet") return Architecture::alexnet;
  throw std::invalid_argument("unknown architecture '" + name + "' (expected lenet or alexnet)");
}

std::string to_string(Architecture a) { return a == Architecture::lenet ? "lenet" : "alexnet"; }

std::map<std::string, std::size_t> default_ranks(Architecture a) {
  if (a == Architecture::lenet) return {{"conv1", 11}, {"conv2", 270}, {"fc1", 128}, {"fc2", 10}};
  return {{"conv1", 36},   {"conv2", 571}, {"conv3", 1626}, {"conv4", 1948},
          {"conv5", 1644}, {"fc1", 1024},  {"fc2", 512},    {"fc3", 10}};
}

Shape architecture_input_shape(Architecture a) {
  return a == Architecture::lenet ? Shape{1, 28, 28} : Shape{3, 32, 32};
}

std::vector<LayerSpec> architecture_specs(Architecture a, Normalization norm,
                                          const std::map<std::string, std::size_t>& rank_overrides) {
  auto ranks = default_ranks(a);
  for (const auto& [name, rank] : rank_overrides) {
    if (!ranks.count(name)) throw std::invalid_argument("rank override for unknown layer '" + name + "'");
    ranks[name] = rank;
  }
  std::vector<LayerSpec> specs;
  auto conv = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t pad) {
    LayerSpec s;
    s.name = name;
    s.kind = LayerKind::conv2d;
    s.in = in;
    s.out = out;
    s.kernel = 3;
    s.padding = pad;
    s.normalization = norm;
    if (norm == Normalization::cp) s.rank = ranks.at(name);
    specs.push_back(s);
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    LayerSpec s;
    s.name = name;
    s.kind = LayerKind::linear;
    s.in = in;
    s.out = out;
    s.normalization = norm;
    if (norm == Normalization::cp) s.rank = ranks.at(name);
    specs.push_back(s);
  };
  auto simple = [&](const std::string& name, LayerKind kind, double keep = 1.0) {
    LayerSpec s;
    s.name = name;
    s.kind = kind;
    s.keep_prob = keep;
    specs.push_back(s);
  };
  if (a == Architecture::lenet) {
    conv("conv1", 1, 32, 0);
    simple("relu1", LayerKind::relu);
    conv("conv2", 32, 64, 0);
    simple("relu2", LayerKind::relu);
    simple("pool1", LayerKind::maxpool);
    simple("drop1", LayerKind::dropout, 0.75);
    simple("flatten", LayerKind::flatten);
    linear("fc1", 9216, 128);
    simple("relu3", LayerKind::relu);
    simple("drop2", LayerKind::dropout, 0.5);
    linear("fc2", 128, 10);
  } else {
    conv("conv1", 3, 64, 1);
    simple("relu1", LayerKind::relu);
    simple("pool1", LayerKind::maxpool);
    conv("conv2", 64, 192, 1);
    simple("relu2", LayerKind::relu);
    simple("pool2", LayerKind::maxpool);
    conv("conv3", 192, 384, 1);
    simple("relu3", LayerKind::relu);
    conv("conv4", 384, 256, 1);
    simple("relu4", LayerKind::relu);
    conv("conv5", 256, 256, 1);
    simple("relu5", LayerKind::relu);
    simple("pool3", LayerKind::maxpool);
    simple("flatten", LayerKind::flatten);
    simple("drop1", LayerKind::dropout, 0.5);
    linear("fc1", 4096, 1024);
    simple("relu6", LayerKind::relu);
    simple("drop2", LayerKind::dropout, 0.5);
    linear("fc2", 1024, 512);
    simple("relu7", LayerKind::relu);
    linear("fc3", 512, 10);
  }
  return specs;
}

}  // namespace cpnorm
