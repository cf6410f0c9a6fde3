#include "cpnorm/compress.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "json.hpp"

namespace cpnorm {

std::size_t kept_terms(std::size_t rank, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw std::invalid_argument("keep fraction must lie in (0, 1], got " + std::to_string(keep_fraction));
  }
  // The small offset keeps exact halves like 0.25·10 from rounding down.
  const auto count = static_cast<std::size_t>(std::floor(keep_fraction * static_cast<double>(rank) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(count, 1, rank);
}

std::vector<std::size_t> select_terms(const Vector& lambdas, std::size_t count) {
  std::vector<std::size_t> order(static_cast<std::size_t>(lambdas.size()));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(lambdas[static_cast<Eigen::Index>(a)]) > std::abs(lambdas[static_cast<Eigen::Index>(b)]);
  });
  order.resize(std::min(count, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

CpNormParam truncate(const CpNormParam& p, double keep_fraction) {
  const std::size_t keep = kept_terms(p.cp.rank(), keep_fraction);
  if (keep == p.cp.rank()) return p;
  const auto idx = select_terms(p.cp.lambdas, keep);
  CpNormParam out;
  out.sigma = p.sigma;
  out.cp.shape = p.cp.shape;
  out.cp.lambdas.resize(static_cast<Eigen::Index>(keep));
  for (const auto& a : p.cp.factors) out.cp.factors.emplace_back(a.rows(), static_cast<Eigen::Index>(keep));
  for (std::size_t j = 0; j < keep; ++j) {
    const auto src = static_cast<Eigen::Index>(idx[j]);
    const auto dst = static_cast<Eigen::Index>(j);
    out.cp.lambdas[dst] = p.cp.lambdas[src];
    for (std::size_t k = 0; k < p.cp.factors.size(); ++k) out.cp.factors[k].col(dst) = p.cp.factors[k].col(src);
  }
  return out;
}

std::pair<Model, CompressionPlan> compress_model(const Model& model, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("compression rate must lie in [0, 1), got " + std::to_string(rate));
  }
  Model out = model;
  CompressionPlan plan;
  plan.rate = rate;
  plan.params_before = model.param_count();
  for (auto& layer : out.layers()) {
    auto* p = std::get_if<CpNormParam>(&layer.weight);
    if (!p) continue;
    LayerPlan lp;
    lp.layer = layer.spec.name;
    lp.original_rank = p->cp.rank();
    lp.kept = select_terms(p->cp.lambdas, kept_terms(p->cp.rank(), 1.0 - rate));
    std::vector<bool> keep(p->cp.rank(), false);
    for (auto i : lp.kept) keep[i] = true;
    for (std::size_t r = 0; r < p->cp.rank(); ++r) {
      (keep[r] ? lp.retained_lambdas : lp.discarded_lambdas).push_back(p->cp.lambdas[static_cast<Eigen::Index>(r)]);
    }
    *p = truncate(*p, 1.0 - rate);
    layer.spec.rank = p->cp.rank();
    plan.layers.push_back(std::move(lp));
  }
  if (plan.layers.empty()) throw std::invalid_argument("model has no CP layers to compress");
  out.refresh_shapes();
  plan.params_after = out.param_count();
  return {std::move(out), std::move(plan)};
}

double default_fine_tune_lr(double rate) {
  if (rate <= 0.25) return 1e-4;
  if (rate <= 0.5) return 1e-3;
  return 1e-2;
}

FineTuneResult fine_tune(const Model& compressed, double rate, const Dataset& train_set,
                         const Dataset* validation, const Dataset* test, const FineTuneOptions& options) {
  const auto run = [&](double lr, const std::string& out_dir) {
    FineTuneResult r{compressed, lr, {}, {}};
    TrainOptions t;
    t.optimizer = OptimizerKind::sgd;
    t.lr = lr;
    t.epochs = options.epochs;
    t.batch_size = options.batch_size;
    t.seed = options.seed;
    t.out_dir = out_dir;
    r.training = train(r.model, train_set, validation, test, t);
    return r;
  };
  if (!options.select_lr) {
    return run(options.lr > 0.0 ? options.lr : default_fine_tune_lr(rate), options.out_dir);
  }
  if (!validation) throw std::invalid_argument("learning-rate selection needs a validation split");
  std::vector<std::pair<double, double>> candidates;
  std::optional<FineTuneResult> best;
  double best_acc = -1.0;
  for (double lr : {1e-4, 1e-3, 1e-2}) {
    FineTuneResult r = run(lr, "");
    const double acc = options.epochs == 0 ? evaluate(r.model, *validation).accuracy
                                           : r.training.metrics[r.training.metrics.size() - (test ? 2 : 1)].accuracy;
    candidates.emplace_back(lr, acc);
    if (acc > best_acc) {
      best_acc = acc;
      best = std::move(r);
    }
  }
  best->candidates = std::move(candidates);
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    write_metrics_csv(options.out_dir + "/metrics.csv", best->training.metrics);
  }
  return std::move(*best);
}

std::string plan_to_json(const CompressionPlan& plan) {
  nlohmann::ordered_json j;
  j["rate"] = plan.rate;
  j["keep_fraction"] = 1.0 - plan.rate;
  j["params_before"] = plan.params_before;
  j["params_after"] = plan.params_after;
  j["realized_rate"] = plan.realized_rate();
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : plan.layers) {
    j["layers"].push_back({{"layer", l.layer},
                           {"original_rank", l.original_rank},
                           {"kept_rank", l.kept.size()},
                           {"kept", l.kept},
                           {"retained_lambdas", l.retained_lambdas},
                           {"discarded_lambdas", l.discarded_lambdas}});
  }
  return j.dump(2);
}

void write_plan(const std::string& path, const CompressionPlan& plan) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << plan_to_json(plan) << '\n';
}

}  // namespace cpnorm
