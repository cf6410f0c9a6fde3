#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cpnorm/data.hpp"
#include "cpnorm/model.hpp"
#include "cpnorm/optim.hpp"

namespace cpnorm {

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Deterministic pass in evaluation mode (no dropout).
EvalResult evaluate(Model& model, const Dataset& ds, std::size_t batch_size = 256);

struct TrainOptions {
  OptimizerKind optimizer = OptimizerKind::rmsprop;
  double lr = 0.001;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  /// Stop after this many epochs without a validation-accuracy gain; 0 disables.
  std::size_t patience = 0;
  /// When non-empty: metrics.csv, lambda_<layer>.csv and the λ histograms are
  /// written here.
  std::string out_dir;
  std::size_t histogram_bins = 20;
  /// Called after every completed epoch with all metrics so far.
  std::function<void(std::size_t epoch, Model&, const std::vector<EpochMetrics>&)> on_epoch_end;
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  std::size_t epochs_run = 0;
  bool early_stopped = false;
  /// Mean training loss of every optimizer step.
  std::vector<double> step_losses;
};

/// Mini-batch training with the renormalization hook after every step.
/// `validation` and `test` may be null. Throws DivergenceError on a
/// non-finite loss, gradient or collapsed factor column.
TrainResult train(Model& model, const Dataset& train_set, const Dataset* validation, const Dataset* test,
                  const TrainOptions& options);

/// Writes `epoch,split,loss,accuracy`.
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics);

/// Histogram of every CP layer's λ values over their own range:
/// `layer,bin,lower,upper,count`.
void write_lambda_histogram(const std::string& path, const Model& model, std::size_t bins);

/// Seed for replica / epoch streams derived from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace cpnorm
