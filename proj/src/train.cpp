#include "cpnorm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include "cpnorm/ops.hpp"

namespace cpnorm {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct LambdaLog {
  const Layer* layer;
  std::ofstream out;
};

void log_lambdas(LambdaLog& log, std::size_t step) {
  const auto& p = std::get<CpNormParam>(log.layer->weight);
  log.out << step << ',' << fmt(p.sigma);
  for (double l : p.cp.lambdas) log.out << ',' << fmt(l);
  log.out << '\n';
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

EvalResult evaluate(Model& model, const Dataset& ds, std::size_t batch_size) {
  double loss = 0.0;
  std::size_t correct = 0;
  for (const auto& idx : batch_iter(ds.size(), batch_size, false, 0)) {
    const Batch b = gather(ds, idx);
    const auto r = ops::softmax_cross_entropy(model.forward(b.images, false), b.labels);
    loss += r.loss * static_cast<double>(idx.size());
    correct += r.correct;
  }
  const double n = static_cast<double>(ds.size());
  return {loss / n, static_cast<double>(correct) / n};
}

TrainResult train(Model& model, const Dataset& train_set, const Dataset* validation, const Dataset* test,
                  const TrainOptions& options) {
  TrainResult result;
  Optimizer opt(options.optimizer, options.lr);
  std::mt19937_64 dropout_rng(derive_seed(options.seed, 0));

  std::vector<std::unique_ptr<LambdaLog>> logs;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    for (const auto& layer : model.layers()) {
      if (const auto* p = std::get_if<CpNormParam>(&layer.weight)) {
        auto log = std::make_unique<LambdaLog>();
        log->layer = &layer;
        log->out.open(options.out_dir + "/lambda_" + layer.spec.name + ".csv");
        log->out << "step,sigma";
        for (std::size_t r = 0; r < p->cp.rank(); ++r) log->out << ",lambda_" << r;
        log->out << '\n';
        log_lambdas(*log, 0);
        logs.push_back(std::move(log));
      }
    }
    write_lambda_histogram(options.out_dir + "/lambda_hist_start.csv", model, options.histogram_bins);
  }

  double best_val = -1.0;
  std::size_t since_best = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (const auto& idx : batch_iter(train_set.size(), options.batch_size, true, derive_seed(options.seed, epoch))) {
      const Batch b = gather(train_set, idx);
      model.zero_grad();
      const auto r = ops::softmax_cross_entropy(model.forward(b.images, true, &dropout_rng), b.labels);
      if (!std::isfinite(r.loss)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step + 1));
      }
      model.backward(r.grad);
      opt.step(model.params());
      post_step_renormalize(model);
      ++step;
      result.step_losses.push_back(r.loss);
      loss_sum += r.loss * static_cast<double>(idx.size());
      correct += r.correct;
      for (auto& log : logs) log_lambdas(*log, step);
    }
    const double n = static_cast<double>(train_set.size());
    result.metrics.push_back({epoch, "train", loss_sum / n, static_cast<double>(correct) / n});
    bool stop = false;
    if (validation) {
      const auto v = evaluate(model, *validation);
      result.metrics.push_back({epoch, "validation", v.loss, v.accuracy});
      if (v.accuracy > best_val) {
        best_val = v.accuracy;
        since_best = 0;
      } else if (options.patience > 0 && ++since_best >= options.patience) {
        stop = true;
      }
    }
    if (test) {
      const auto t = evaluate(model, *test);
      result.metrics.push_back({epoch, "test", t.loss, t.accuracy});
    }
    result.epochs_run = epoch;
    if (!options.out_dir.empty()) write_metrics_csv(options.out_dir + "/metrics.csv", result.metrics);
    for (auto& log : logs) log->out.flush();
    if (options.on_epoch_end) options.on_epoch_end(epoch, model, result.metrics);
    if (stop) {
      result.early_stopped = true;
      break;
    }
  }
  if (!options.out_dir.empty()) {
    write_lambda_histogram(options.out_dir + "/lambda_hist_end.csv", model, options.histogram_bins);
    if (result.metrics.empty()) write_metrics_csv(options.out_dir + "/metrics.csv", result.metrics);
  }
  return result;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,split,loss,accuracy\n";
  for (const auto& m : metrics) out << m.epoch << ',' << m.split << ',' << fmt(m.loss) << ',' << fmt(m.accuracy) << '\n';
}

void write_lambda_histogram(const std::string& path, const Model& model, std::size_t bins) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "layer,bin,lower,upper,count\n";
  for (const auto& layer : model.layers()) {
    const auto* p = std::get_if<CpNormParam>(&layer.weight);
    if (!p) continue;
    const Vector& l = p->cp.lambdas;
    double lo = l.minCoeff(), hi = l.maxCoeff();
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<std::size_t> counts(bins, 0);
    for (double v : l) {
      auto b = static_cast<std::size_t>((v - lo) / width);
      counts[std::min(b, bins - 1)]++;
    }
    for (std::size_t b = 0; b < bins; ++b) {
      out << layer.spec.name << ',' << b << ',' << fmt(lo + width * static_cast<double>(b)) << ','
          << fmt(b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1)) << ',' << counts[b] << '\n';
    }
  }
}

}  // namespace cpnorm
