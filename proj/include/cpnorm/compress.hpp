#pragma once

#include <string>
#include <vector>

#include "cpnorm/model.hpp"
#include "cpnorm/param.hpp"
#include "cpnorm/train.hpp"

namespace cpnorm {

/// Terms kept out of `rank` at `keep_fraction`: max(1, round-half-up(f·R)).
std::size_t kept_terms(std::size_t rank, double keep_fraction);

/// Indices of the `count` largest |λ_r| (ties to the lower index), returned
/// in ascending index order.
std::vector<std::size_t> select_terms(const Vector& lambdas, std::size_t count);

/// Keeps the largest-|λ| terms; columns keep their relative order and σ is
/// unchanged. Throws std::invalid_argument unless 0 < keep_fraction ≤ 1.
CpNormParam truncate(const CpNormParam& p, double keep_fraction);

struct LayerPlan {
  std::string layer;
  std::size_t original_rank = 0;
  std::vector<std::size_t> kept;
  std::vector<double> retained_lambdas;
  std::vector<double> discarded_lambdas;
};

struct CompressionPlan {
  /// Fraction of rank terms removed from every CP layer.
  double rate = 0.0;
  std::vector<LayerPlan> layers;
  std::size_t params_before = 0;
  std::size_t params_after = 0;

  double realized_rate() const {
    return 1.0 - static_cast<double>(params_after) / static_cast<double>(params_before);
  }
};

/// Truncates every CP layer with keep fraction 1 − rate. Throws
/// std::invalid_argument when the model has no CP layers or rate ∉ [0, 1).
std::pair<Model, CompressionPlan> compress_model(const Model& model, double rate);

/// SGD learning rate used after compression: 1e-4 up to 25% removed, 1e-3 up
/// to 50%, 1e-2 beyond.
double default_fine_tune_lr(double rate);

struct FineTuneOptions {
  std::size_t epochs = 20;
  /// 0 selects default_fine_tune_lr(rate).
  double lr = 0.0;
  /// Try 1e-4, 1e-3 and 1e-2 and keep the best validation accuracy.
  bool select_lr = false;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::string out_dir;
};

struct FineTuneResult {
  Model model;
  double lr = 0.0;
  TrainResult training;
  /// (lr, validation accuracy) of every candidate when selecting.
  std::vector<std::pair<double, double>> candidates;
};

/// SGD training of the compressed model with the renormalization hook.
FineTuneResult fine_tune(const Model& compressed, double rate, const Dataset& train_set,
                         const Dataset* validation, const Dataset* test, const FineTuneOptions& options);

std::string plan_to_json(const CompressionPlan& plan);
void write_plan(const std::string& path, const CompressionPlan& plan);

}  // namespace cpnorm
