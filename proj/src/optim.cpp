#include "cpnorm/optim.hpp"

#include <cmath>

namespace cpnorm {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "rmsprop") return OptimizerKind::rmsprop;
  if (name == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd, rmsprop or adam)");
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::rmsprop: return "rmsprop";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

Optimizer::Optimizer(OptimizerKind kind, double lr) : kind_(kind), lr_(lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be > 0");
}

void Optimizer::step(const std::vector<ParamRef>& params) {
  for (const auto& p : params) {
    for (std::size_t i = 0; i < p.size; ++i) {
      if (!std::isfinite(p.grad[i])) {
        throw DivergenceError("non-finite gradient in " + p.name + " at index " + std::to_string(i));
      }
    }
  }
  if (steps_ == 0) {
    for (const auto& p : params) {
      first_.emplace_back(kind_ == OptimizerKind::adam ? p.size : 0, 0.0);
      second_.emplace_back(kind_ == OptimizerKind::sgd ? 0 : p.size, 0.0);
    }
  } else if (params.size() != second_.size()) {
    throw std::logic_error("optimizer parameter layout changed between steps");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(adam_beta1, t);
  const double bc2 = 1.0 - std::pow(adam_beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    const ParamRef& p = params[b];
    switch (kind_) {
      case OptimizerKind::sgd:
        for (std::size_t i = 0; i < p.size; ++i) p.value[i] -= lr_ * p.grad[i];
        break;
      case OptimizerKind::rmsprop: {
        auto& v = second_[b];
        if (v.size() != p.size) throw std::logic_error("optimizer state mismatch for " + p.name);
        for (std::size_t i = 0; i < p.size; ++i) {
          v[i] = rms_alpha * v[i] + (1.0 - rms_alpha) * p.grad[i] * p.grad[i];
          p.value[i] -= lr_ * p.grad[i] / (std::sqrt(v[i]) + eps);
        }
        break;
      }
      case OptimizerKind::adam: {
        auto& m = first_[b];
        auto& v = second_[b];
        if (v.size() != p.size) throw std::logic_error("optimizer state mismatch for " + p.name);
        for (std::size_t i = 0; i < p.size; ++i) {
          m[i] = adam_beta1 * m[i] + (1.0 - adam_beta1) * p.grad[i];
          v[i] = adam_beta2 * v[i] + (1.0 - adam_beta2) * p.grad[i] * p.grad[i];
          p.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
        break;
      }
    }
  }
}

void post_step_renormalize(Model& model) {
  try {
    model.renormalize();
  } catch (const std::domain_error& e) {
    throw DivergenceError(e.what());
  }
}

}  // namespace cpnorm
