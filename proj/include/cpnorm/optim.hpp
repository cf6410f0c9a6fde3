#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cpnorm/model.hpp"

namespace cpnorm {

/// Raised when training produces non-finite values or a collapsed factor column.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OptimizerKind { sgd, rmsprop, adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind k);

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr);

  /// Applies one update to every block. Accumulators are created on the first
  /// call and must keep the same layout afterwards. A non-finite gradient
  /// throws DivergenceError naming the block.
  void step(const std::vector<ParamRef>& params);

  OptimizerKind kind() const { return kind_; }
  double lr() const { return lr_; }
  std::size_t steps() const { return steps_; }

  static constexpr double rms_alpha = 0.99;
  static constexpr double adam_beta1 = 0.9;
  static constexpr double adam_beta2 = 0.999;
  static constexpr double eps = 1e-8;

 private:
  OptimizerKind kind_;
  double lr_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

/// Projects every CP factor column of `model` back to unit norm. A zero or
/// non-finite column throws DivergenceError naming layer, mode and rank index.
void post_step_renormalize(Model& model);

}  // namespace cpnorm
