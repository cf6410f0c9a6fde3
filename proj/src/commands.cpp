#include "cpnorm/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "cpnorm/checkpoint.hpp"
#include "cpnorm/compress.hpp"
#include "cpnorm/train.hpp"
#include "json.hpp"

namespace cpnorm {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

fs::path find_dir(const std::string& data_dir, const std::vector<std::string>& subdirs, const std::string& marker) {
  for (const auto& sub : subdirs) {
    const fs::path dir = sub.empty() ? fs::path(data_dir) : fs::path(data_dir) / sub;
    if (fs::exists(dir / marker)) return dir;
  }
  throw DataError("no " + marker + " under " + data_dir);
}

json config_json(const RunConfig& c) {
  json j;
  std::istringstream in(config_to_text(c));
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find(" = ");
    j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string shape_label(const Shape& internal) {
  // Table-style in×out×k×k.
  Shape s = internal;
  std::swap(s[0], s[1]);
  return shape_string(s);
}

Model build_model(const RunConfig& c, std::uint64_t seed) {
  Model m(architecture_specs(c.architecture, c.normalization, c.ranks), architecture_input_shape(c.architecture));
  m.init({c.init, c.lambda_init, seed});
  return m;
}

Model checked_checkpoint_model(const RunConfig& c, json& metadata) {
  if (c.checkpoint.empty()) throw ConfigError("checkpoint is required");
  try {
    Checkpoint ck = load_checkpoint(c.checkpoint);
    metadata = json::parse(ck.metadata_json);
    return std::move(ck.model);
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
}

void check_compatible(Model& model, const Dataset& ds) {
  if (ds.sample_shape() == model.input_shape()) return;
  try {
    infer_shapes([&] {
      std::vector<LayerSpec> s;
      for (const auto& l : model.layers()) s.push_back(l.spec);
      return s;
    }(), ds.sample_shape());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset does not fit the model: ") + e.what());
  }
  throw ConfigError("dataset images " + shape_string(ds.sample_shape()) + " differ from the model input " +
                    shape_string(model.input_shape()));
}

}  // namespace

Splits load_splits(const RunConfig& c) {
  Dataset train, test;
  if (c.dataset == DatasetKind::mnist) {
    const fs::path dir = find_dir(c.data_dir, {"", "mnist"}, "train-images-idx3-ubyte");
    train = load_mnist((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string());
    test = load_mnist((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
  } else {
    const fs::path dir = find_dir(c.data_dir, {"", "cifar-10-batches-bin", "cifar10"}, "data_batch_1.bin");
    std::vector<std::string> files;
    for (int i = 1; i <= 5; ++i) {
      const fs::path f = dir / ("data_batch_" + std::to_string(i) + ".bin");
      if (fs::exists(f)) files.push_back(f.string());
    }
    train = load_cifar10(files);
    test = load_cifar10({(dir / "test_batch.bin").string()});
  }
  if (c.max_train > 0 && c.max_train < train.size()) train = slice(train, 0, c.max_train);
  auto [tr, val] = split_validation(train, c.val_fraction);
  test.split = "test";
  return {std::move(tr), std::move(val), std::move(test)};
}

void cmd_estimate_ranks(const RunConfig& c, std::ostream& log) {
  fs::create_directories(c.out);
  RunConfig dense_cfg = c;
  dense_cfg.normalization = Normalization::none;
  dense_cfg.ranks.clear();
  Model m = build_model(dense_cfg, c.seed);
  const auto table = default_ranks(c.architecture);
  std::ofstream csv(fs::path(c.out) / "ranks.csv");
  csv << "layer,shape,rank,table_rank,converged,fit\n";
  log << std::left << std::setw(8) << "layer" << std::setw(16) << "shape" << std::setw(8) << "rank"
      << std::setw(8) << "table" << "fit\n";
  for (auto& layer : m.layers()) {
    if (!layer.spec.has_weight()) continue;
    const Tensor& w = std::get<Tensor>(layer.weight);
    RankSearchOptions opt;
    opt.fit_threshold = c.fit_threshold;
    opt.seed = c.seed;
    const RankEstimate est = estimate_rank(w, opt);
    double fit_at = 0.0;
    for (const auto& [r, f] : est.curve) {
      if (r == est.rank) fit_at = f;
    }
    write_fit_curve_csv((fs::path(c.out) / ("fit_curve_" + layer.spec.name + ".csv")).string(), est);
    const std::string shape = shape_label(w.shape());
    csv << layer.spec.name << ',' << shape << ',' << est.rank << ',' << table.at(layer.spec.name) << ','
        << (est.converged ? "true" : "false") << ',' << std::setprecision(17) << fit_at << '\n';
    log << std::left << std::setw(8) << layer.spec.name << std::setw(16) << shape << std::setw(8) << est.rank
        << std::setw(8) << table.at(layer.spec.name) << std::setprecision(6) << fit_at;
    if (!est.converged) log << "  (threshold " << c.fit_threshold << " not reached up to rank " << est.rank << ")";
    log << std::endl;
  }
}

void cmd_train(const RunConfig& c, std::ostream& log) {
  const Splits data = load_splits(c);
  fs::create_directories(c.out);
  std::vector<double> accuracies;
  for (std::size_t replica = 0; replica < c.seeds; ++replica) {
    const std::uint64_t seed = c.seed + replica;
    const fs::path dir = c.seeds == 1 ? fs::path(c.out) : fs::path(c.out) / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    RunConfig rc = c;
    rc.seed = seed;
    Model model = build_model(rc, seed);

    json run;
    run["config"] = config_json(rc);
    run["seed"] = seed;
    run["thread_count"] = Eigen::nbThreads();
    run["train_images"] = data.train.size();
    run["validation_images"] = data.validation.size();
    run["test_images"] = data.test.size();
    run["param_count"] = model.param_count(false);
    run["param_count_with_bias"] = model.param_count(true);
    run["early_stopping"] = c.patience == 0 ? "disabled"
                                            : "stop after " + std::to_string(c.patience) +
                                                  " epochs without a validation-accuracy gain";
    log << "seed " << seed << ": " << to_string(c.architecture) << "/" << to_string(c.normalization) << ", "
        << model.param_count() << " weights, " << data.train.size() << " training images" << std::endl;

    TrainOptions opt;
    opt.optimizer = c.optimizer;
    opt.lr = c.lr;
    opt.epochs = c.epochs;
    opt.batch_size = c.batch_size;
    opt.seed = seed;
    opt.patience = c.patience;
    opt.out_dir = dir.string();
    opt.histogram_bins = c.histogram_bins;
    opt.on_epoch_end = [&](std::size_t epoch, Model& m, const std::vector<EpochMetrics>& metrics) {
      json meta;
      meta["config"] = run["config"];
      meta["seed"] = seed;
      meta["thread_count"] = Eigen::nbThreads();
      meta["epoch"] = epoch;
      for (auto it = metrics.rbegin(); it != metrics.rend() && it->epoch == epoch; ++it) {
        meta[it->split + "_loss"] = it->loss;
        meta[it->split + "_accuracy"] = it->accuracy;
      }
      save_checkpoint((dir / "checkpoint.bin").string(), m, meta.dump());
      log << "  epoch " << epoch;
      for (auto it = metrics.end() - (metrics.size() >= 3 ? 3 : metrics.size()); it != metrics.end(); ++it) {
        if (it->epoch == epoch) log << "  " << it->split << " " << std::setprecision(4) << it->accuracy * 100 << "%";
      }
      log << std::endl;
    };
    try {
      const TrainResult r = train(model, data.train, &data.validation, &data.test, opt);
      run["status"] = "completed";
      run["epochs_run"] = r.epochs_run;
      run["early_stopped"] = r.early_stopped;
      const EvalResult final_test = evaluate(model, data.test);
      run["test_loss"] = final_test.loss;
      run["test_accuracy"] = final_test.accuracy;
      accuracies.push_back(final_test.accuracy);
      write_json(dir / "run.json", run);
    } catch (const DivergenceError& e) {
      run["status"] = "diverged";
      run["error"] = e.what();
      write_json(dir / "run.json", run);
      throw;
    }
  }
  if (accuracies.size() > 1) {
    double mean = 0.0;
    for (double a : accuracies) mean += a;
    mean /= static_cast<double>(accuracies.size());
    double var = 0.0;
    for (double a : accuracies) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / static_cast<double>(accuracies.size() - 1));
    write_json(fs::path(c.out) / "summary.json",
               {{"seeds", accuracies.size()}, {"test_accuracy", accuracies}, {"mean", mean}, {"std", sd}});
    log << "test accuracy " << std::setprecision(4) << mean * 100 << " ± " << sd * 100 << " over "
        << accuracies.size() << " seeds" << std::endl;
  }
}

void cmd_compress(const RunConfig& c, std::ostream& log) {
  json meta;
  Model model = checked_checkpoint_model(c, meta);
  const Splits data = load_splits(c);
  check_compatible(model, data.test);
  fs::create_directories(c.out);

  const EvalResult before = evaluate(model, data.test);
  std::pair<Model, CompressionPlan> compressed{model, {}};
  try {
    compressed = compress_model(model, c.rate);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto& [small, plan] = compressed;
  const EvalResult truncated = evaluate(small, data.test);
  write_plan((fs::path(c.out) / "plan.json").string(), plan);

  FineTuneOptions ft;
  ft.epochs = c.fine_tune_epochs;
  ft.lr = c.fine_tune_lr;
  ft.select_lr = c.select_lr;
  ft.batch_size = c.batch_size;
  ft.seed = c.seed;
  ft.out_dir = c.out;
  FineTuneResult tuned = fine_tune(small, c.rate, data.train, &data.validation, &data.test, ft);
  const EvalResult after = evaluate(tuned.model, data.test);

  json summary;
  summary["checkpoint"] = c.checkpoint;
  summary["rate"] = c.rate;
  summary["params_before"] = plan.params_before;
  summary["params_after"] = plan.params_after;
  summary["fine_tune_lr"] = tuned.lr;
  summary["fine_tune_epochs"] = c.fine_tune_epochs;
  if (!tuned.candidates.empty()) {
    summary["lr_candidates"] = json::array();
    for (auto [lr, acc] : tuned.candidates) summary["lr_candidates"].push_back({{"lr", lr}, {"validation_accuracy", acc}});
  }
  summary["test_accuracy_before"] = before.accuracy;
  summary["test_accuracy_truncated"] = truncated.accuracy;
  summary["test_accuracy_after"] = after.accuracy;
  summary["thread_count"] = Eigen::nbThreads();
  summary["config"] = config_json(c);
  write_json(fs::path(c.out) / "compress.json", summary);

  json ck_meta = summary;
  ck_meta["test_accuracy"] = after.accuracy;
  ck_meta["test_loss"] = after.loss;
  save_checkpoint((fs::path(c.out) / "compressed.bin").string(), tuned.model, ck_meta.dump());
  log << "compression " << c.rate * 100 << "%: " << plan.params_before << " -> " << plan.params_after
      << " weights; test accuracy " << std::setprecision(4) << before.accuracy * 100 << "% -> "
      << truncated.accuracy * 100 << "% (truncated) -> " << after.accuracy * 100 << "% after "
      << c.fine_tune_epochs << " fine-tuning epochs at lr " << tuned.lr << std::endl;
}

void cmd_eval(const RunConfig& c, std::ostream& log) {
  json meta;
  Model model = checked_checkpoint_model(c, meta);
  const Splits data = load_splits(c);
  check_compatible(model, data.test);
  const EvalResult r = evaluate(model, data.test);
  fs::create_directories(c.out);
  json out{{"checkpoint", c.checkpoint}, {"images", data.test.size()}, {"loss", r.loss}, {"accuracy", r.accuracy}};
  if (meta.contains("test_accuracy")) out["recorded_accuracy"] = meta["test_accuracy"];
  write_json(fs::path(c.out) / "eval.json", out);
  log << "test accuracy " << std::setprecision(6) << r.accuracy * 100 << "%, loss " << r.loss << std::endl;
}

int run_command(const std::string& name, const RunConfig& config, std::ostream& log, std::ostream& err) {
  try {
    validate(config);
    if (name == "estimate-ranks") {
      cmd_estimate_ranks(config, log);
    } else if (name == "train") {
      cmd_train(config, log);
    } else if (name == "compress") {
      cmd_compress(config, log);
    } else if (name == "eval") {
      cmd_eval(config, log);
    } else {
      throw ConfigError("unknown command '" + name + "'");
    }
    return 0;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return 3;
  } catch (const DivergenceError& e) {
    err << "training diverged: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace cpnorm
