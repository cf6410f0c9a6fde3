#pragma once

#include <string>
#include <vector>

#include "cpnorm/cp.hpp"
#include "cpnorm/tensor.hpp"

namespace cpnorm {

/// Weight reparametrized as W = σ Σ_r λ_r ∘_k (a_k,r / ‖a_k,r‖).
struct CpNormParam {
  CpForm cp;
  double sigma = 1.0;
};

struct CpNormGrads {
  std::vector<Matrix> factors;
  Vector lambdas;
  double sigma = 0.0;
};

/// Throws std::domain_error on a zero or non-finite factor column; `context`
/// prefixes the message.
Tensor cpnorm_weight(const CpNormParam& p, const std::string& context = "");

CpNormGrads cpnorm_backward(const CpNormParam& p, const Tensor& grad_weight,
                            const std::string& context = "");

/// Weight-normalization baseline: W = g · v / ‖v‖ over the flattened tensor.
struct WeightNormParam {
  Tensor v;
  double g = 1.0;
};

struct WeightNormGrads {
  Tensor v;
  double g = 0.0;
};

Tensor weightnorm_weight(const WeightNormParam& p);
WeightNormGrads weightnorm_backward(const WeightNormParam& p, const Tensor& grad_weight);

}  // namespace cpnorm
